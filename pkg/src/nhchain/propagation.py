"""Non-unitary propagation by truncated Faber-polynomial expansion.

The field of values of ``H`` lies in a rectangle of rigorous real/imaginary
bounds. Around that rectangle (padded by 10%) we place the ellipse of least
logarithmic capacity passing through its corners and rescale so the ellipse
has capacity 1. Its exterior conformal map is

    psi(w) = c0 + w + c1 / w,      0 <= c1 <= 1,

whose Faber polynomials obey a two-term recurrence. The coefficients of
``exp(-i lam dt z)`` in that basis are the non-negative Laurent coefficients
of ``exp(-i lam dt psi(w))`` and are computed by an FFT over the unit circle.
For ``gamma = 0`` the ellipse collapses to a segment (``c1 = 1``) and the
scheme reduces to the Chebyshev propagator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple

import numpy as np
import scipy.sparse as sp

from .spin_algebra import SpinChainSpec, build_hamiltonian

MARGIN = 0.10
MAX_ORDER = 4096
OVERFLOW = 1e12
QUAD_POINTS = 1024
MAX_EXACT_DIM = 1 << 10
COND_LIMIT = 1e12


class PropagationError(RuntimeError):
    pass


class Bounds(NamedTuple):
    re_min: float
    re_max: float
    im_min: float
    im_max: float


def spectral_bounds(spec: SpinChainSpec) -> Bounds:
    """Rectangle enclosing the spectrum (and field of values) of the model.

    Term-norm sums: ``|Re E| <= N J w + N Omega`` with bond norm ``w`` = 1 for
    the Ising bond and 2 for the XX bond, and ``|Im E| <= N gamma / 4``.
    """
    re = spec.N * spec.J * spec.model.bond_weight + spec.N * spec.Omega
    im = spec.N * spec.gamma / 4.0
    return Bounds(-re, re, -im, im)


def _gershgorin_interval(A) -> tuple[float, float]:
    A = sp.csr_matrix(A)
    d = A.diagonal().real
    radius = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(A.diagonal())
    return float((d - radius).min()), float((d + radius).max())


def matrix_bounds(H) -> Bounds:
    """Rigorous rectangle for an arbitrary operator from Gershgorin intervals
    of its Hermitian and anti-Hermitian parts."""
    H = sp.csr_matrix(H)
    herm = (H + H.conj().T) / 2
    anti = (H - H.conj().T) / 2j
    return Bounds(*_gershgorin_interval(herm), *_gershgorin_interval(anti))


@dataclass(frozen=True)
class FaberPlan:
    """Truncated Faber expansion of one time step.

    ``lam`` rescales ``H`` to ``H / lam``; ``center`` (c0) and ``c1`` are the
    Laurent coefficients of the rescaled conformal map; ``coeffs`` holds
    ``c_0 .. c_M`` with ``|c_M| < tail_tol``.
    """

    lam: float
    center: complex
    c1: float
    coeffs: np.ndarray = field(repr=False)
    dt: float
    tail_tol: float
    bounds: Bounds
    quad_points: int = QUAD_POINTS

    @property
    def max_order(self) -> int:
        return len(self.coeffs) - 1

    @property
    def semi_axes(self) -> tuple[float, float]:
        """Real and imaginary semi-axes of the ellipse in unscaled energy units."""
        return self.lam * (1 + self.c1), self.lam * (1 - self.c1)

    def conformal_map(self, w):
        return self.center + w + self.c1 / w

    def faber_values(self, z, order=None):
        """``F_0(z) .. F_order(z)`` at scalar or array ``z`` (rescaled units)."""
        order = self.max_order if order is None else order
        z = np.asarray(z, dtype=complex)
        out = np.empty((order + 1,) + z.shape, dtype=complex)
        out[0] = 1.0
        if order >= 1:
            out[1] = z - self.center
        if order >= 2:
            out[2] = (z - self.center) * out[1] - 2 * self.c1
        for n in range(2, order):
            out[n + 1] = (z - self.center) * out[n] - self.c1 * out[n - 1]
        return out

    def reconstruct(self, z):
        """Truncated series ``sum_n c_n F_n(z)`` at rescaled points ``z``."""
        return np.tensordot(self.coeffs, self.faber_values(z), axes=1)

    def target(self, z):
        """The function the series approximates, ``exp(-i lam dt z)``."""
        return np.exp(-1j * self.lam * self.dt * np.asarray(z))


def _ellipse(bounds: Bounds):
    half_re = (1 + MARGIN) * (bounds.re_max - bounds.re_min) / 2
    half_im = (1 + MARGIN) * (bounds.im_max - bounds.im_min) / 2
    center = complex((bounds.re_max + bounds.re_min) / 2, (bounds.im_max + bounds.im_min) / 2)
    # least-capacity ellipse through the corners (+-half_re, +-half_im)
    a23, b23 = half_re ** (2 / 3), half_im ** (2 / 3)
    s = math.sqrt(a23 + b23)
    return center, a23 * s, b23 * s


def _laurent_coeffs(plan_args, K):
    lam, center, c1, dt = plan_args
    w = np.exp(2j * np.pi * np.arange(K) / K)
    g = np.exp(-1j * lam * dt * (center + w + c1 / w))
    return np.fft.fft(g) / K


def make_plan_from_bounds(bounds: Bounds, dt: float, tail_tol: float = 1e-12) -> FaberPlan:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not tail_tol > 0:
        raise ValueError(f"tail_tol must be positive, got {tail_tol}")
    center, alpha, beta = _ellipse(bounds)
    cap = (alpha + beta) / 2
    if cap == 0:
        # H vanishes identically: any unit disk around the centre will do
        lam, c1 = 1.0, 0.0
    else:
        lam, c1 = cap, (alpha - beta) / (alpha + beta)
    args = (lam, center / lam, c1, dt)

    K = QUAD_POINTS
    coeffs = _laurent_coeffs(args, K)
    while True:
        finer = _laurent_coeffs(args, 2 * K)
        big = np.nonzero(np.abs(finer[: K]) >= tail_tol)[0]
        M = int(big[-1]) + 1 if big.size else 1
        if M > MAX_ORDER:
            raise PropagationError(
                f"Faber series needs more than {MAX_ORDER} terms at dt={dt}; use a smaller dt")
        # an order beyond the coarse grid is not resolved yet: refine first
        quad_err = np.max(np.abs(finer[: M + 1] - coeffs[: M + 1])) if M < K else np.inf
        K *= 2
        coeffs = finer
        if quad_err < tail_tol / 10 and M < K // 4:
            break
        if K > 64 * MAX_ORDER:
            raise PropagationError("coefficient quadrature did not settle")
    return FaberPlan(lam, args[1], c1, coeffs[: M + 1].copy(), dt, tail_tol, bounds, K)


def make_plan(spec: SpinChainSpec, dt: float = 0.05, tail_tol: float = 1e-12) -> FaberPlan:
    return make_plan_from_bounds(spectral_bounds(spec), dt, tail_tol)


def faber_apply(H, plan: FaberPlan, v) -> np.ndarray:
    """Unnormalized ``sum_n c_n F_n(H / lam) v`` by the three-term recurrence."""
    v = np.asarray(v, dtype=complex)
    if H.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: operator {H.shape} vs vector {v.shape}")
    c = plan.coeffs
    inv_lam, c0, c1 = 1.0 / plan.lam, plan.center, plan.c1
    limit = OVERFLOW * max(np.linalg.norm(v), 1e-300)

    def shifted(x):
        return (H @ x) * inv_lam - c0 * x

    acc = c[0] * v
    M = plan.max_order
    if M == 0:
        return acc
    prev, cur = v, shifted(v)
    acc += c[1] * cur
    for n in range(1, M):
        nxt = shifted(cur)
        nxt -= (2 * c1 if n == 1 else c1) * prev
        acc += c[n + 1] * nxt
        prev, cur = cur, nxt
        if n % 8 == 0 and np.linalg.norm(cur) > limit:
            raise PropagationError(
                f"Faber recurrence overflow at order {n + 1}; replan with a wider ellipse or smaller dt")
    return acc


def faber_step(H, plan: FaberPlan, v, return_norm: bool = False):
    """One normalized step ``U v / ||U v||`` with ``U ~ exp(-i H dt)``.

    With ``return_norm=True`` also returns ``||U v||`` (before normalization).
    """
    out = faber_apply(H, plan, v)
    nrm = float(np.linalg.norm(out))
    if not np.isfinite(nrm) or nrm == 0.0:
        raise PropagationError(f"step produced a state of norm {nrm}")
    out /= nrm
    return (out, nrm) if return_norm else out


def exact_evolve(H, t: float, v, normalize: bool = True):
    """Accuracy oracle: ``V exp(-i E t) V^{-1} v`` from the full eigendecomposition.

    Unnormalized results are returned as ``(vector, log_norm_shift)`` where
    the true vector is ``vector * exp(log_norm_shift)``, to keep large
    growth factors finite.
    """
    A = H.toarray() if hasattr(H, "toarray") else np.asarray(H, dtype=complex)
    if A.shape[0] > MAX_EXACT_DIM:
        raise ValueError(f"dimension {A.shape[0]} exceeds the exact-evolution guard {MAX_EXACT_DIM}")
    v = np.asarray(v, dtype=complex)
    E, V = np.linalg.eig(A)
    cond = np.linalg.cond(V)
    if cond > COND_LIMIT:
        warnings.warn(f"ill-conditioned eigenvector matrix (cond={cond:.3g})", RuntimeWarning,
                      stacklevel=2)
    coef = np.linalg.solve(V, v)
    shift = float(np.max(E.imag)) * t
    out = V @ (coef * np.exp(-1j * E * t - shift))
    if normalize:
        return out / np.linalg.norm(out)
    return out, shift


# --------------------------------------------------------------------------
# trajectories of the normalized state


class SteadyStateRule:
    """Stop once the entropy varies by less than ``tol`` over a trailing window.

    The window is ``10 / gamma`` time units, or ``10 / J`` when ``gamma < 0.1``.
    """

    def __init__(self, spec: SpinChainSpec, tol: float = 1e-4, window: float | None = None):
        if window is None:
            window = 10.0 / spec.gamma if spec.gamma >= 0.1 else 10.0 / spec.J
        self.window = window
        self.tol = tol
        self._t: list[float] = []
        self._s: list[float] = []

    def __call__(self, t: float, S: float) -> bool:
        self._t.append(t)
        self._s.append(S)
        if t - self._t[0] < self.window:
            return False
        lo = np.searchsorted(self._t, t - self.window - 1e-12)
        recent = self._s[lo:]
        return max(recent) - min(recent) < self.tol


@dataclass
class TimeSeries:
    """Samples of one normalized trajectory.

    ``step_norms[k]`` is ``||U psi||`` of the step that ended at ``times[k]``
    (1 for the initial sample) and ``log_norm[k]`` the accumulated log of
    the unnormalized norm, so the unnormalized state is
    ``state * exp(log_norm)``.
    """

    times: np.ndarray
    step_norms: np.ndarray
    log_norm: np.ndarray
    values: dict
    final_state: np.ndarray
    stopped_early: bool = False
    states: list | None = None

    @property
    def norm_loss_rate(self) -> np.ndarray:
        """``-d ln ||psi||^2 / dt`` over each sampling interval; 0 at ``t = 0``."""
        out = np.zeros_like(self.times)
        out[1:] = -2.0 * np.diff(self.log_norm) / np.diff(self.times)
        return out


def sector_populations(v, N: int) -> np.ndarray:
    """Weight of ``v`` in each excitation-number sector ``n = 0..N``."""
    from .spin_algebra import popcounts

    return np.bincount(popcounts(N), weights=np.abs(v) ** 2, minlength=N + 1)


def evolve_trajectory(spec, v0, t_max: float, dt: float = 0.05,
                      observers: Mapping[str, Callable] | None = None,
                      tail_tol: float = 1e-12, sample_every: int = 1,
                      stop_rule: Callable[[float, float], bool] | None = None,
                      stop_observer: str = "entropy", keep_states: bool = False,
                      H=None, plan: FaberPlan | None = None) -> TimeSeries:
    """Propagate ``v0`` under ``spec``'s Hamiltonian, normalizing every step.

    ``observers`` maps names to callables of the normalized state; they are
    evaluated at ``t = 0`` and every ``sample_every`` steps. ``stop_rule``
    receives ``(t, observers[stop_observer](state))`` at every sample and
    ends the run early when it returns True.
    """
    if not (dt > 0 and t_max >= dt):
        raise ValueError(f"need t_max >= dt > 0, got t_max={t_max}, dt={dt}")
    if H is None:
        H = build_hamiltonian(spec)
    if plan is None:
        plan = make_plan(spec, dt, tail_tol) if isinstance(spec, SpinChainSpec) else \
            make_plan_from_bounds(matrix_bounds(H), dt, tail_tol)
    observers = dict(observers or {})
    if stop_rule is not None and stop_observer not in observers:
        raise ValueError(f"stop rule needs observer {stop_observer!r}")

    v = np.asarray(v0, dtype=complex)
    v = v / np.linalg.norm(v)
    n_steps = int(round(t_max / dt))
    times, norms, logs = [0.0], [1.0], [0.0]
    values = {k: [f(v)] for k, f in observers.items()}
    states = [v.copy()] if keep_states else None
    log_norm = 0.0
    stopped = False
    if stop_rule is not None:
        stop_rule(0.0, values[stop_observer][0])
    for step in range(1, n_steps + 1):
        t = step * dt
        try:
            v, nrm = faber_step(H, plan, v, return_norm=True)
        except PropagationError as exc:
            raise PropagationError(f"t={t:.6g}: {exc}") from exc
        log_norm += math.log(nrm)
        if step % sample_every and step != n_steps:
            continue
        times.append(t)
        norms.append(nrm)
        logs.append(log_norm)
        for k, f in observers.items():
            values[k].append(f(v))
        if keep_states:
            states.append(v.copy())
        if stop_rule is not None and stop_rule(t, values[stop_observer][-1]):
            stopped = True
            break
    return TimeSeries(np.array(times), np.array(norms), np.array(logs),
                      {k: np.array(x) for k, x in values.items()}, v, stopped, states)
