"""Steady-state entanglement and its scaling with chain length.

The steady state of normalized non-Hermitian dynamics is the level with the
largest imaginary part among those the initial state overlaps. Two routes
are provided and reported side by side: the spectral route reads the
entropy off that eigenvector; the dynamical route propagates the default
product state until the entropy settles.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .entanglement import Bipartition, entropy
from .propagation import SteadyStateRule, evolve_trajectory
from .spectral import DEGENERACY_TOL, _solve_point, complex_gap, spectrum_order
from .spin_algebra import SpinChainSpec
from .states import default_initial_state
from .symmetry import reflection_permutation

log = logging.getLogger(__name__)

AREA_SLOPE = 0.02
VOLUME_SLOPE = 0.1
VOLUME_RESIDUAL = 0.2
REACH_TOL = 1e-8


class NoUniqueSteadyLevel(ValueError):
    """The maximal-imaginary level is degenerate, so no steady state is singled out."""


@dataclass
class SteadyLevel:
    eigenvalue: complex
    entropy: float
    gap: float
    sector: int
    symmetry_resolved: bool = False
    state: np.ndarray | None = field(default=None, repr=False)


def _partition(spec, p):
    if p is None or isinstance(p, int):
        return Bipartition(spec.N, p)
    return p


def steady_level(spec: SpinChainSpec, p=None, method: str = "momentum",
                 initial_state=None) -> SteadyLevel:
    """Maximal-imaginary eigenvector of ``spec`` and its entanglement entropy.

    With ``initial_state`` given, only levels that state overlaps (in its
    biorthogonal expansion) compete; this is the level normalized dynamics
    from that state converges to.

    A top level that is degenerate only with its mirror image (momenta
    ``k`` and ``N-k``) is accepted: the momentum eigenstate is returned and
    ``symmetry_resolved`` is set. Any other degeneracy raises
    :class:`NoUniqueSteadyLevel`.
    """
    p = _partition(spec, p)
    if initial_state is not None:
        return _reachable_level(spec, p, method, np.asarray(initial_state, dtype=complex))

    pt = _solve_point(spec, method, "top")
    gap = complex_gap(pt.all_values)
    pos, i = pt.top
    blk = pt.blocks[pos]
    resolved = False
    if gap == 0.0:
        top = blk.values[i]
        # count near-degenerate partners per block, mirror copies included
        partners = sum(
            b.multiplicity * int(np.sum(np.abs(b.values.imag - top.imag) <= DEGENERACY_TOL))
            for b in pt.blocks)
        if blk.multiplicity == 2 and partners == 2:
            resolved = True
        else:
            raise NoUniqueSteadyLevel(
                f"top imaginary level of {spec} is {partners}-fold degenerate")
    v = blk.lift(blk.vectors[:, i])
    v = v / np.linalg.norm(v)
    return SteadyLevel(complex(blk.values[i]), entropy(v, p), gap, blk.label, resolved, v)


def _reachable_level(spec, p, method, v0):
    pt = _solve_point(spec, method, "all")
    v0 = v0 / np.linalg.norm(v0)
    refl = reflection_permutation(spec.N)
    cands = []
    for pos, blk in enumerate(pt.blocks):
        if blk.sector is None:
            images = [(v0, False)]
        else:
            images = [(blk.sector.P.conj().T @ v0, False)]
            if blk.multiplicity == 2:
                # the mirror sector N-k is R P_k, so its component is P_k^dag R v0
                images.append((blk.sector.P.conj().T @ v0[refl], True))
        for comp, mirrored in images:
            if np.linalg.norm(comp) < REACH_TOL:
                continue
            coef = np.linalg.solve(blk.vectors, comp)
            for i in np.nonzero(np.abs(coef) > REACH_TOL)[0]:
                cands.append((blk.values[i], pos, int(i), mirrored))
    if not cands:
        raise ValueError("initial state has no weight on any level")
    vals = np.array([c[0] for c in cands])
    order = spectrum_order(vals)
    top = cands[order[0]]
    gap = float(vals[order[0]].imag - vals[order[1]].imag) if len(cands) > 1 else float("inf")
    if gap <= DEGENERACY_TOL:
        raise NoUniqueSteadyLevel(f"reachable top level of {spec} is degenerate")
    blk = pt.blocks[top[1]]
    v = blk.lift(blk.vectors[:, top[2]])
    if top[3]:
        v = v[refl]
    v = v / np.linalg.norm(v)
    return SteadyLevel(complex(top[0]), entropy(v, p), gap, blk.label, False, v)


def steady_entropy_spectral(spec: SpinChainSpec, p=None, method: str = "momentum",
                            initial_state=None) -> float:
    return steady_level(spec, p, method, initial_state).entropy


def steady_entropy_dynamics(spec: SpinChainSpec, p=None, v0=None, dt: float = 0.05,
                            t_max: float = 200.0, tail_tol: float = 1e-12,
                            tol: float = 1e-4, return_series: bool = False):
    """Entropy after evolving ``v0`` (default: the product state) until it settles.

    The run stops when the entropy varies by less than ``tol`` over the
    trailing window of :class:`SteadyStateRule`, or at ``t_max``.
    """
    p = _partition(spec, p)
    v0 = default_initial_state(spec.N) if v0 is None else v0
    series = evolve_trajectory(
        spec, v0, t_max, dt, observers={"entropy": lambda v: entropy(v, p)},
        tail_tol=tail_tol, stop_rule=SteadyStateRule(spec, tol))
    S = float(series.values["entropy"][-1])
    return (S, series) if return_series else S


@dataclass
class ScalingRecord:
    N_values: list
    entropies: list
    gamma: float
    method: str
    fit_slope: float = float("nan")
    fit_intercept: float = float("nan")
    failed: dict = field(default_factory=dict)

    @property
    def classification(self) -> str:
        return classify(self.N_values, self.entropies, self.fit_slope, self.fit_intercept)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("N", "entropy", "gamma", "method"))
        for N, S in sorted(zip(self.N_values, self.entropies)):
            w.writerow((N, f"{S:.17g}", f"{self.gamma:.17g}", self.method))
        return buf.getvalue()

    def summary(self) -> dict:
        def fin(x):
            return float(x) if np.isfinite(x) else None

        return {"gamma": self.gamma, "slope": fin(self.fit_slope),
                "intercept": fin(self.fit_intercept), "classification": self.classification}

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def classify(N_values, entropies, slope, intercept) -> str:
    """Area law for ``|slope| < 0.02`` nats/site; volume law for
    ``slope > 0.1`` with every fit residual under 20% of the entropy range."""
    if not np.isfinite(slope):
        return "indeterminate"
    if abs(slope) < AREA_SLOPE:
        return "area"
    if slope > VOLUME_SLOPE:
        N = np.asarray(N_values, float)
        S = np.asarray(entropies, float)
        resid = np.abs(S - (slope * N + intercept))
        span = S.max() - S.min()
        if span > 0 and resid.max() < VOLUME_RESIDUAL * span:
            return "volume"
    return "indeterminate"


def scaling_analysis(spec_family: SpinChainSpec, N_list, gamma: float,
                     method: str = "dynamics", p_cut=None, **kwargs) -> ScalingRecord:
    """Steady-state half-cut entropy for each ``N`` and a least-squares line through it.

    ``spec_family`` supplies every field but ``N`` and ``gamma``. Extra
    keyword arguments go to the dynamical or spectral entropy routine.
    Chain lengths whose computation fails are listed in ``failed``; the fit
    needs at least three survivors.
    """
    Ns = [int(N) for N in N_list]
    for N in Ns:
        if N % 2 or not 4 <= N <= 14:
            raise ValueError(f"scaling needs even N in [4, 14], got {N}")
    if method not in ("dynamics", "spectral"):
        raise ValueError(f"unknown method {method!r}")
    rec = ScalingRecord([], [], float(gamma), method)
    for N in sorted(Ns):
        spec = spec_family.with_N(N).with_gamma(gamma)
        try:
            if method == "dynamics":
                S = steady_entropy_dynamics(spec, p_cut, **kwargs)
            else:
                S = steady_entropy_spectral(spec, p_cut, **kwargs)
        except Exception as exc:  # noqa: BLE001 - recorded per N, fit continues
            log.warning("N=%d failed: %s", N, exc)
            rec.failed[N] = str(exc)
            continue
        rec.N_values.append(N)
        rec.entropies.append(S)
    if len(rec.N_values) >= 3:
        rec.fit_slope, rec.fit_intercept = (float(x) for x in
                                            np.polyfit(rec.N_values, rec.entropies, 1))
    return rec
