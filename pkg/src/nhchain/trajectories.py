"""Quantum-jump unraveling, Lindblad reference dynamics, and the no-jump limit.

Every site decays through ``L_j = sqrt(gamma) sigma_j^-``. Then

    H - (i/2) sum_j L_j^dag L_j = H - (i gamma/4) sum_j sigma^z_j - (i gamma N/4) 1,

so the drift between jumps is the chain Hamiltonian of the non-Hermitian
models up to an imaginary constant. That constant drops out of every
normalized state and is carried explicitly wherever a norm is a
probability.

Two samplers are provided. The step sampler draws a jump on each step
with probability ``dt <L_j^dag L_j>`` (first order in ``dt``). The
waiting-time sampler drifts the unnormalized state until its squared norm
falls below a uniform threshold. Both are vectorized over a batch of
trajectories, each with its own seeded generator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .propagation import (
    evolve_trajectory, faber_apply, make_plan_from_bounds, matrix_bounds,
)
from .spin_algebra import Model, SpinChainSpec, assemble_hamiltonian, build_hamiltonian

DT_GUARD = 0.01
MAX_LINDBLAD_SITES = 4
PSD_TOL = 1e-7
TRACE_TOL = 1e-9
PROB_TOL = 1e-6
FIDELITY_TOL = 1e-6
IDENTITY_TOL = 1e-14


class LindbladError(RuntimeError):
    pass


def _occupations(N: int) -> np.ndarray:
    # (2^N, N) 0/1 table of excited sites
    idx = np.arange(1 << N)
    return ((idx[:, None] >> np.arange(N)) & 1).astype(float)


def _sigma_z_sum(N: int) -> np.ndarray:
    return (2 * _occupations(N) - 1).sum(axis=1)


@dataclass
class JumpModel:
    """Hermitian chain Hamiltonian plus uniform single-site decay at rate ``gamma``.

    ``reference`` is the non-Hermitian chain Hamiltonian this unraveling is
    meant to reproduce (``build_hamiltonian(spec)`` for real chains).
    """

    H_herm: sp.csr_matrix
    n_sites: int
    gamma: float
    spec: SpinChainSpec | None = None
    reference: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.H_herm.shape != (self.dim, self.dim):
            raise ValueError(f"Hamiltonian shape {self.H_herm.shape} does not match "
                             f"{self.n_sites} sites")

    @classmethod
    def from_spec(cls, spec: SpinChainSpec) -> "JumpModel":
        return cls(build_hamiltonian(spec.with_gamma(0.0)), spec.N, spec.gamma, spec,
                   build_hamiltonian(spec))

    @classmethod
    def test_double(cls, model, N: int, J: float = 1.0, Omega: float = 0.0,
                    gamma: float = 0.0, periodic: bool = False) -> "JumpModel":
        """Unguarded model for oracle checks: allows ``N = 2`` and open chains."""
        model = Model(model)
        return cls(assemble_hamiltonian(model, N, J, Omega, 0.0, periodic), N, gamma, None,
                   assemble_hamiltonian(model, N, J, Omega, gamma, periodic))

    @property
    def dim(self) -> int:
        return 1 << self.n_sites

    @property
    def jump_ops(self) -> list[sp.csr_matrix]:
        idx = np.arange(self.dim)
        out = []
        for j in range(self.n_sites):
            src = idx[(idx >> j) & 1 == 1]
            L = sp.csr_matrix((np.full(src.size, math.sqrt(self.gamma), dtype=complex),
                               (src ^ (1 << j), src)), shape=(self.dim, self.dim))
            out.append(L)
        return out

    @property
    def constant_shift(self) -> complex:
        return -1j * self.gamma * self.n_sites / 4.0

    def effective_hamiltonian(self) -> sp.csr_matrix:
        """``H - (i/2) sum_j L_j^dag L_j``, constant shift included."""
        decay = sum((L.conj().T @ L for L in self.jump_ops), sp.csr_matrix((self.dim, self.dim)))
        return sp.csr_matrix(self.H_herm - 0.5j * decay)

    def drift_hamiltonian(self) -> sp.csr_matrix:
        """Effective Hamiltonian without the constant shift."""
        H = self.H_herm - sp.diags((1j * self.gamma / 4.0) * _sigma_z_sum(self.n_sites))
        H = sp.csr_matrix(H)
        H.sort_indices()
        return H

    def generator_identity_error(self) -> float:
        """Largest entrywise deviation of the effective Hamiltonian from reference + shift."""
        ref = self.reference if self.reference is not None else self.drift_hamiltonian()
        diff = self.effective_hamiltonian() - ref - self.constant_shift * sp.identity(self.dim)
        diff = sp.csr_matrix(diff)
        return float(abs(diff).max()) if diff.nnz else 0.0

    def jump_rates(self, V) -> np.ndarray:
        """``<L_j^dag L_j>`` per site for normalized state rows of ``V``."""
        return self.gamma * (np.abs(np.atleast_2d(V)) ** 2) @ _occupations(self.n_sites)


def _check_dt(model: JumpModel, t_max: float, dt: float) -> int:
    if not (dt > 0 and t_max > 0):
        raise ValueError(f"need positive t_max and dt, got t_max={t_max}, dt={dt}")
    if model.gamma > 0 and dt > DT_GUARD / model.gamma * (1 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the jump-sampling guard 0.01/gamma="
                         f"{DT_GUARD / model.gamma:.6g}")
    n = int(round(t_max / dt))
    if abs(n * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValueError(f"t_max={t_max} is not a whole number of steps dt={dt}")
    return n


def _step_operator(model: JumpModel, dt: float, tail_tol: float) -> np.ndarray:
    """Dense one-step propagator of the drift, built column by column with Faber."""
    H = model.drift_hamiltonian()
    plan = make_plan_from_bounds(matrix_bounds(H), dt, tail_tol)
    return faber_apply(H, plan, np.eye(model.dim, dtype=complex))


def _jump(V, rows, sites, N):
    """Apply ``sigma^-`` at ``sites[k]`` to row ``rows[k]`` of ``V`` and renormalize."""
    for r, j in zip(rows, sites):
        bit = 1 << int(j)
        idx = np.arange(V.shape[1])
        src = idx[idx & bit != 0]
        out = np.zeros(V.shape[1], dtype=complex)
        out[src ^ bit] = V[r, src]
        nrm = np.linalg.norm(out)
        assert nrm > 0, "jump selected on an empty site"
        V[r] = out / nrm


@dataclass
class TrajectoryRecord:
    seed: object
    jump_times: list
    samples: dict
    final_state: np.ndarray

    def __post_init__(self):
        ts = [t for t, _ in self.jump_times]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("jump times must be strictly increasing")

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)


@dataclass
class TrajectoryBatch:
    """Many trajectories sampled side by side.

    ``rho_mean[k]`` is the ensemble-averaged density matrix at ``times[k]``;
    ``states`` holds every trajectory's state at every sample time when
    requested (shape ``(n_samples, n_traj, dim)``).
    """

    seeds: list
    times: np.ndarray
    rho_mean: np.ndarray
    final_states: np.ndarray
    jumps: list
    states: np.ndarray | None = None
    sampler: str = "step"

    @property
    def n_traj(self) -> int:
        return len(self.seeds)

    def no_jump_fraction(self, t: float | None = None) -> float:
        t = self.times[-1] if t is None else t
        return float(np.mean([not js or js[0][0] >= t - 1e-12 for js in self.jumps]))

    def record(self, i: int, observers=None) -> TrajectoryRecord:
        samples = {"t": self.times.copy()}
        if self.states is not None:
            for name, f in (observers or {}).items():
                samples[name] = np.array([f(v) for v in self.states[:, i]])
        return TrajectoryRecord(self.seeds[i], list(self.jumps[i]), samples,
                                self.final_states[i].copy())


def _rho(V) -> np.ndarray:
    # numpy reduces along a contiguous axis pairwise, so the average does
    # not accumulate round-off linearly in the number of trajectories
    return np.einsum("ti,tj->ij", V, V.conj()) / V.shape[0]


def _normalized_rows(v0, n: int, dim: int) -> np.ndarray:
    v0 = np.asarray(v0, dtype=complex)
    if v0.shape != (dim,):
        raise ValueError(f"initial state has shape {v0.shape}, expected ({dim},)")
    return np.tile(v0 / np.linalg.norm(v0), (n, 1))


def _sample_times(n_steps, sample_every):
    return [k for k in range(n_steps + 1) if k % sample_every == 0 or k == n_steps]


def sample_batch(model: JumpModel, v0, t_max: float, dt: float, seeds, sample_every: int = 1,
                 keep_states: bool = False, sampler: str = "step",
                 tail_tol: float = 1e-12) -> TrajectoryBatch:
    """Sample one trajectory per entry of ``seeds``.

    ``sampler="step"`` draws a jump on each step with probability
    ``dt <L_j^dag L_j>`` (site chosen by the same uniform), applies it, then
    drifts. ``sampler="waiting"`` draws a threshold ``r`` and jumps once the
    survival probability since the last jump drops below it.
    """
    n_steps = _check_dt(model, t_max, dt)
    if sampler not in ("step", "waiting"):
        raise ValueError(f"unknown sampler {sampler!r}")
    seeds = list(seeds)
    M, N, d = len(seeds), model.n_sites, model.dim
    U_T = _step_operator(model, dt, tail_tol).T
    V = _normalized_rows(v0, M, d)
    rngs = [np.random.default_rng(s) for s in seeds]
    jumps: list[list] = [[] for _ in range(M)]
    keep = _sample_times(n_steps, sample_every)
    times, rhos, snaps = [], [], []

    if sampler == "step":
        draws = np.stack([g.random(n_steps) for g in rngs]) if M else np.zeros((0, n_steps))
    else:
        thresh = np.array([1.0 - g.random() for g in rngs])
        survival = np.ones(M)
        decay = math.exp(-model.gamma * N * dt / 2.0)

    def snapshot(k):
        times.append(k * dt)
        rhos.append(_rho(V))
        if keep_states:
            snaps.append(V.copy())

    snapshot(0)
    for k in range(n_steps):
        t = k * dt
        if sampler == "step":
            if model.gamma > 0:
                cum = np.cumsum(model.jump_rates(V) * dt, axis=1)
                u = draws[:, k]
                rows = np.nonzero(u < cum[:, -1])[0]
                sites = np.argmax(u[rows, None] < cum[rows], axis=1)
                _jump(V, rows, sites, N)
                for r, j in zip(rows, sites):
                    jumps[r].append((t, int(j)))
            V = V @ U_T
            V /= np.linalg.norm(V, axis=1, keepdims=True)
        else:
            V = V @ U_T
            nrm2 = np.sum(np.abs(V) ** 2, axis=1)
            V /= np.sqrt(nrm2)[:, None]
            if model.gamma > 0:
                survival *= nrm2 * decay
                rows = np.nonzero(survival < thresh)[0]
                if rows.size:
                    rates = model.jump_rates(V[rows])
                    sites = []
                    for r, w in zip(rows, rates):
                        cw = np.cumsum(w)
                        sites.append(int(np.searchsorted(cw, rngs[r].random() * cw[-1],
                                                         side="right")))
                        thresh[r] = 1.0 - rngs[r].random()
                    _jump(V, rows, sites, N)
                    survival[rows] = 1.0
                    for r, j in zip(rows, sites):
                        jumps[r].append((t + dt, j))
        if k + 1 in keep:
            snapshot(k + 1)
    return TrajectoryBatch(seeds, np.array(times), np.array(rhos), V,
                           jumps, np.array(snaps) if keep_states else None, sampler)


def sample_trajectory(model: JumpModel, v0, t_max: float, dt: float, seed,
                      observers=None, sample_every: int = 1,
                      sampler: str = "step") -> TrajectoryRecord:
    """A single seeded trajectory; identical seeds give identical records."""
    batch = sample_batch(model, v0, t_max, dt, [seed], sample_every, keep_states=True,
                         sampler=sampler)
    return batch.record(0, observers)


def batch_seeds(seed_base: int, n_traj: int) -> list:
    """Independent per-trajectory seeds ``[seed_base, i]`` (spawned generator streams)."""
    return [[int(seed_base), i] for i in range(n_traj)]


# --------------------------------------------------------------------------
# Lindblad reference


def _check_density(rho, dim):
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (dim, dim):
        raise ValueError(f"density matrix shape {rho.shape}, expected ({dim}, {dim})")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > 1e-10:
        raise ValueError(f"density matrix trace {np.trace(rho).real:.12g} != 1")
    if np.linalg.eigvalsh(rho).min() < -PSD_TOL:
        raise ValueError("density matrix is not positive semidefinite")
    return rho


def lindblad_evolve(model: JumpModel, rho0, t_max: float, dt: float,
                    sample_every: int | None = None):
    """Fourth-order Runge-Kutta integration of the master equation.

    Returns the final density matrix, or ``(times, rhos)`` when
    ``sample_every`` is given. Each step is re-symmetrized; a negative
    eigenvalue below ``-1e-7`` raises :class:`LindbladError`.
    """
    if model.n_sites > MAX_LINDBLAD_SITES:
        raise ValueError(f"Lindblad integration limited to N <= {MAX_LINDBLAD_SITES}")
    if not (dt > 0 and t_max >= 0):
        raise ValueError(f"need dt > 0 and t_max >= 0, got dt={dt}, t_max={t_max}")
    rho = _check_density(rho0, model.dim)
    Heff = model.effective_hamiltonian().toarray()
    Heff_dag = Heff.conj().T
    Ls = [L.toarray() for L in model.jump_ops]
    Ls_dag = [L.conj().T for L in Ls]

    def rhs(r):
        out = -1j * (Heff @ r - r @ Heff_dag)
        for L, Ld in zip(Ls, Ls_dag):
            out += L @ r @ Ld
        return out

    n = int(round(t_max / dt))
    times, rhos = [0.0], [rho.copy()]
    for k in range(1, n + 1):
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * dt * k1)
        k3 = rhs(rho + 0.5 * dt * k2)
        k4 = rhs(rho + dt * k3)
        rho = rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        low = np.linalg.eigvalsh(rho).min()
        if low < -PSD_TOL:
            raise LindbladError(f"t={k * dt:.6g}: eigenvalue {low:.3e} below {-PSD_TOL}; "
                                f"reduce dt (currently {dt})")
        if sample_every and (k % sample_every == 0 or k == n):
            times.append(k * dt)
            rhos.append(rho.copy())
    return (np.array(times), np.array(rhos)) if sample_every else rho


def unitary_reference(model: JumpModel, rho0, t: float) -> np.ndarray:
    U = sla.expm(-1j * t * model.H_herm.toarray())
    return U @ rho0 @ U.conj().T


def trace_distance(a, b) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(a - b))))


def mc_sigma(final_states) -> float:
    """Standard error of the trajectory-averaged density matrix, in trace distance.

    ``sqrt(sum_i D(|psi_i><psi_i|, rho_bar)^2 / (M (M - 1)))`` with ``D``
    the trace distance. Scales as ``M^{-1/2}``.
    """
    V = np.asarray(final_states)
    M = V.shape[0]
    if M < 2:
        return float("inf")
    rho = _rho(V)
    P = np.einsum("ti,tj->tij", V, V.conj()) - rho
    d = 0.5 * np.sum(np.abs(np.linalg.eigvalsh(P)), axis=1)
    return float(math.sqrt(np.sum(d ** 2) / (M * (M - 1))))


@dataclass
class LindbladComparison:
    seed_base: int
    n_traj: int
    t_max: float
    dt: float
    trace_distance_to_lindblad: float
    sigma: float
    no_jump_fraction: float

    @property
    def passed(self) -> bool:
        return self.trace_distance_to_lindblad <= 3 * self.sigma

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in
                ("seed_base", "n_traj", "t_max", "dt", "trace_distance_to_lindblad",
                 "no_jump_fraction")}

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def compare_with_lindblad(model: JumpModel, v0, t_max: float, dt: float, n_traj: int,
                          seed_base: int = 0, sampler: str = "step",
                          lindblad_dt: float | None = None) -> LindbladComparison:
    """Average ``n_traj`` trajectories and measure their distance to the master equation."""
    batch = sample_batch(model, v0, t_max, dt, batch_seeds(seed_base, n_traj),
                         sample_every=int(round(t_max / dt)), sampler=sampler)
    v = np.asarray(v0, dtype=complex)
    v = v / np.linalg.norm(v)
    rho = lindblad_evolve(model, np.outer(v, v.conj()), t_max, lindblad_dt or dt)
    return LindbladComparison(seed_base, n_traj, t_max, dt,
                              trace_distance(batch.rho_mean[-1], rho),
                              mc_sigma(batch.final_states), batch.no_jump_fraction())


# --------------------------------------------------------------------------
# no-jump limit


@dataclass
class NoJumpReport:
    times: np.ndarray
    p_no_jump: np.ndarray
    p_oracle: np.ndarray
    fidelity_deficit: np.ndarray
    no_jump_fraction: float
    fraction_sigma: float

    @property
    def probability_error(self) -> float:
        return float(np.max(np.abs(self.p_no_jump - self.p_oracle)))

    @property
    def checks(self) -> dict:
        frac_ok = abs(self.no_jump_fraction - self.p_no_jump[-1]) <= max(
            3 * self.fraction_sigma, 1e-12)
        fid = self.fidelity_deficit
        return {
            "no_jump_probability": self.probability_error <= PROB_TOL,
            "conditioned_fidelity": bool(np.all(fid[np.isfinite(fid)] <= FIDELITY_TOL)),
            "no_jump_fraction": bool(frac_ok),
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def no_jump_consistency(model: JumpModel, v0, t_max: float, dt: float | None = None,
                        n_traj: int = 200, seed_base: int = 0,
                        sample_every: int = 1, tail_tol: float = 1e-12) -> NoJumpReport:
    """Check that the post-selected jump-free trajectory is the non-Hermitian evolution.

    * The no-jump probability from the Faber norm bookkeeping (times the
      constant-shift factor ``exp(-gamma N t / 2)``) is compared with
      ``||exp(-i H_eff t) v0||^2`` computed independently by
      ``expm_multiply``.
    * Trajectories still jump-free at a sample time must coincide with the
      normalized non-Hermitian state there.
    * The fraction of jump-free trajectories must match the probability
      within three binomial standard deviations.
    """
    if dt is None:
        dt = min(0.05, DT_GUARD / model.gamma) if model.gamma > 0 else 0.05
    n_steps = _check_dt(model, t_max, dt)
    v = np.asarray(v0, dtype=complex)
    v = v / np.linalg.norm(v)
    H = model.drift_hamiltonian()
    plan = make_plan_from_bounds(matrix_bounds(H), dt, tail_tol)
    series = evolve_trajectory(None, v, n_steps * dt, dt, H=H, plan=plan,
                               sample_every=sample_every, keep_states=True)
    times = series.times
    p_faber = np.exp(2 * series.log_norm - model.gamma * model.n_sites * times / 2.0)

    Heff = model.effective_hamiltonian().tocsc()
    p_oracle = np.array([np.linalg.norm(spla.expm_multiply(-1j * t * Heff, v)) ** 2
                         if t > 0 else 1.0 for t in times])

    batch = sample_batch(model, v, n_steps * dt, dt, batch_seeds(seed_base, n_traj),
                         sample_every=sample_every, keep_states=True, tail_tol=tail_tol)
    first = np.array([js[0][0] if js else np.inf for js in batch.jumps])
    deficit = np.full(times.size, np.nan)
    for k, t in enumerate(times):
        alive = np.nonzero(first >= t - 1e-12)[0]
        if alive.size:
            ov = np.abs(batch.states[k, alive] @ series.states[k].conj()) ** 2
            deficit[k] = float(np.max(1.0 - ov))
    frac = batch.no_jump_fraction()
    p = float(p_faber[-1])
    sigma = math.sqrt(max(p * (1 - p), 0.0) / n_traj)
    return NoJumpReport(times, p_faber, p_oracle, deficit, frac, sigma)
