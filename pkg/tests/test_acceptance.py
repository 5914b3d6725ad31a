"""Acceptance criteria, one test each.

Every test records a one-line PASS/FAIL verdict with the measured numbers;
the lines are printed in a summary section at the end of the pytest run.
Several of these take minutes (full N=12 sweeps).
"""

import math

import numpy as np
import pytest

from nhchain import (
    JumpModel, Model, SpinChainSpec, build_hamiltonian, complex_gap, critical_rate,
    default_initial_state, diagonalize_spec, entropy, evolve_trajectory, exact_evolve,
    gap_sweep, make_grid, no_jump_consistency, reduced_density_matrix, scaling_analysis,
    sector_populations, steady_entropy_spectral, track_levels,
)
from nhchain.trajectories import compare_with_lindblad
from oracles import fidelity_deficit, random_state

pytestmark = pytest.mark.slow

EVEN_N = [6, 8, 10, 12]


def test_criterion_01_analytic_gap_law(acceptance):
    worst = 0.0
    for N in (4, 8, 12):
        for g in (0.4, 0.8, 1.2):
            gap = complex_gap(diagonalize_spec(SpinChainSpec(Model.NHTFI, N, gamma=g)))
            worst = max(worst, abs(gap - g / 2))
    ok = acceptance(1, worst <= 1e-10, f"max |gap - gamma/2| = {worst:.2e} (tol 1e-10)")
    assert ok


def test_criterion_02_ising_transition(acceptance):
    spec = SpinChainSpec(Model.NHTFI, 12, Omega=2.0)
    grid = make_grid(0, 2, 0.05)
    gc = critical_rate(gap_sweep(spec, grid, entropies=False))
    flow = track_levels(spec, grid)
    near_11 = [c for c in flow.crossings if c[0] <= 1.1 <= c[1]]
    near_145 = [c for c in flow.crossings if c[0] <= 1.45 <= c[1]]
    ok = gc is not None and abs(gc - 1.45) <= 0.05 + 1e-12 and bool(near_11)
    acceptance(2, ok, f"gamma_c = {gc} (want 1.45 +- 0.05); crossing around 1.1: {near_11}; "
                      f"around 1.45: {near_145}; all crossings {flow.crossings}")
    assert ok


def test_criterion_03_weak_field_gapped_area_law(acceptance):
    spec = SpinChainSpec(Model.NHTFI, 12, Omega=0.9)
    table = gap_sweep(spec, make_grid(0.05, 3.0, 0.05), entropies=False)
    min_gap = float(table.gaps.min())
    slopes = {g: scaling_analysis(spec, EVEN_N, g).fit_slope for g in (0.4, 1.0)}
    ok = min_gap > 0 and all(abs(s) < 0.02 for s in slopes.values())
    acceptance(3, ok, f"min gap over gamma in [0.05, 3] = {min_gap:.4g}; "
                      f"slopes {{0.4: {slopes[0.4]:.4f}, 1.0: {slopes[1.0]:.4f}}} (|.| < 0.02)")
    assert ok


def test_criterion_04_ising_entanglement_phases(acceptance):
    spec = SpinChainSpec(Model.NHTFI, 6, Omega=2.0)
    vol = scaling_analysis(spec, EVEN_N, 0.4)
    area = scaling_analysis(spec, EVEN_N, 1.8)
    s12 = spec.with_N(12)
    S08 = steady_entropy_spectral(s12.with_gamma(0.8))
    S12 = steady_entropy_spectral(s12.with_gamma(1.2))
    ok = vol.fit_slope > 0.1 and abs(area.fit_slope) < 0.02 and S12 > S08
    acceptance(4, ok, f"slope(0.4) = {vol.fit_slope:.4f} (> 0.1, {vol.classification}); "
                      f"slope(1.8) = {area.fit_slope:.4f} (< 0.02, {area.classification}); "
                      f"N=12 max-imaginary level S(1.2) = {S12:.4f} > S(0.8) = {S08:.4f}")
    assert ok


def test_criterion_05_xx_large_field_transition(acceptance):
    grid = make_grid(0, 30, 0.05)
    rates = {}
    for N in (10, 12):
        table = gap_sweep(SpinChainSpec(Model.NHXX_FIELD, N, Omega=6.0), grid, entropies=False)
        rates[N] = critical_rate(table)
    target = 4 * 6.0
    ok = all(r is not None and abs(r - target) <= 0.05 * target for r in rates.values())
    acceptance(5, ok, f"gamma_c = {rates} vs 4*Omega = {target} (tol 5% = 1.2)")
    assert ok


def test_criterion_06_xx_anomaly(acceptance):
    spec = SpinChainSpec(Model.NHXX_FIELD, 10, Omega=2.0)
    S04 = steady_entropy_spectral(spec.with_gamma(0.4))
    S06 = steady_entropy_spectral(spec.with_gamma(0.6))
    grid = make_grid(0, 8, 0.1)
    table = gap_sweep(spec, grid, entropies=False)
    between = [c for c in table.crossings if 0.4 - 1e-12 <= c[0] and c[1] <= 0.6 + 1e-12]
    ground_im = 0.0
    for g in grid:
        w = diagonalize_spec(spec.with_gamma(g)).eigenvalues
        ground_im = max(ground_im, abs(w[np.argmin(w.real)].imag))
    ok = S04 > S06 and bool(between) and ground_im <= 1e-8
    acceptance(6, ok, f"S(0.4) = {S04:.4f} > S(0.6) = {S06:.4f}; crossing in [0.4, 0.6]: "
                      f"{between}; crossings on [0, 8]: {len(table.crossings)}; "
                      f"max |Im E_ground| = {ground_im:.2e}")
    assert ok


def test_criterion_07_propagator_oracle(acceptance):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for spec in (SpinChainSpec(Model.NHTFI, 8, Omega=2.0, gamma=1.0),
                 SpinChainSpec(Model.NHXX_FIELD, 8, Omega=2.0, gamma=1.0)):
        H = build_hamiltonian(spec)
        for _ in range(3):
            v0 = random_state(rng, 256)
            ts = evolve_trajectory(spec, v0, 5.0, 0.05, keep_states=True)
            for t, v in zip(ts.times, ts.states):
                worst = max(worst, fidelity_deficit(v, exact_evolve(H, t, v0)))
    ok = acceptance(7, worst <= 1e-8, f"max fidelity deficit vs eigendecomposition = "
                                      f"{worst:.2e} over 101 sample times x 6 runs (tol 1e-8)")
    assert ok


def test_criterion_08_sector_decay(acceptance):
    N, g = 6, 1.0
    spec = SpinChainSpec(Model.NHXX, N, gamma=g)
    v0 = default_initial_state(N)
    p0 = sector_populations(v0, N)
    ts = evolve_trajectory(spec, v0, 40.0, 0.05,
                           observers={"p": lambda v: sector_populations(v, N), "S": entropy})
    n = np.arange(N + 1)
    worst = 0.0
    for t, p, ln in zip(ts.times, ts.values["p"], ts.log_norm):
        # unnormalized populations under the jump-unraveling Hamiltonian (shift -i gamma N/4)
        unnorm = p * np.exp(2 * ln - g * N * t / 2)
        worst = max(worst, float(np.max(np.abs(unnorm / (p0 * np.exp(-n * g * t)) - 1))))
    S = ts.values["S"]
    ok = worst <= 1e-8 and S[-1] < 1e-6 and S[-1] < S[len(S) // 4]
    acceptance(8, ok, f"max relative deviation from p_n(0) e^(-n gamma t) = {worst:.2e} "
                      f"(tol 1e-8); entropy at t=40: {S[-1]:.2e}")
    assert ok


def test_criterion_09_open_system_consistency(acceptance):
    cases = {
        "NHTFI N=3 ring": (JumpModel.from_spec(SpinChainSpec(Model.NHTFI, 3, Omega=1.0, gamma=0.8)),
                           default_initial_state(3), 2.0, 0.0125),
        "NHXX N=2 open": (JumpModel.test_double("NHXX", 2, gamma=1.0),
                          np.full(4, 0.5, dtype=complex), 1.5, 0.01),
        "NHXX_FIELD N=3 ring": (JumpModel.from_spec(
            SpinChainSpec(Model.NHXX_FIELD, 3, Omega=0.9, gamma=0.8)),
            default_initial_state(3), 2.0, 0.0125),
    }
    parts, ok = [], True
    for name, (model, v0, T, dt) in cases.items():
        c = compare_with_lindblad(model, v0, T, dt, 10000, seed_base=17)
        nj = no_jump_consistency(model, v0, T, dt, n_traj=300, seed_base=17)
        fid = float(np.nanmax(nj.fidelity_deficit))
        good = c.passed and fid <= 1e-6 and nj.probability_error <= 1e-6
        ok &= good
        parts.append(f"{name}: D = {c.trace_distance_to_lindblad:.4f} <= 3 sigma = "
                     f"{3 * c.sigma:.4f}, no-jump deficit {fid:.1e}, "
                     f"P0 err {nj.probability_error:.1e}")
    acceptance(9, ok, "; ".join(parts))
    assert ok


def _reverse_sites(N):
    idx = np.arange(2 ** N)
    out = np.zeros_like(idx)
    for j in range(N):
        out |= ((idx >> j) & 1) << (N - 1 - j)
    return out


def test_criterion_10_structural_fuzz(acceptance):
    rng = np.random.default_rng(10)
    cases, failures = 120, []
    for c in range(cases):
        model = Model(rng.choice([m.value for m in Model]))
        N = int(rng.integers(3, 9))
        Om = 0.0 if model is Model.NHXX else float(rng.uniform(0, 3))
        g = float(rng.uniform(0, 4))
        spec = SpinChainSpec(model, N, Omega=Om, gamma=g)
        sp = diagonalize_spec(spec, want_vectors=True)
        w = sp.eigenvalues
        # conjugation closure by nearest-neighbour pairing
        d = np.abs(np.sort_complex(w)[:, None] - np.conj(w)[None, :]).min(axis=1).max()
        if d > 1e-8:
            failures.append((c, "conjugation", d))
        if abs(w.sum()) > 1e-8 * 2 ** N:
            failures.append((c, "trace", abs(w.sum())))
        states = [random_state(rng, 2 ** N), sp.eigenvectors[:, 0]]
        for v in states:
            for cut in range(1, N):
                rho = reduced_density_matrix(v, cut)
                ev = np.linalg.eigvalsh(rho)
                if (np.max(np.abs(rho - rho.conj().T)) > 1e-12 or ev.min() < -1e-12
                        or ev.max() > 1 + 1e-12 or abs(np.trace(rho) - 1) > 1e-12):
                    failures.append((c, "rho_A", cut))
                S = entropy(v, cut)
                if not 0 <= S <= min(cut, N - cut) * math.log(2) + 1e-10:
                    failures.append((c, "bounds", S))
                if abs(entropy(v[_reverse_sites(N)], N - cut) - S) > 1e-10:
                    failures.append((c, "schmidt", cut))
        grid = [g, g + 0.1]
        if gap_sweep(spec, grid).to_csv() != gap_sweep(spec, grid).to_csv():
            failures.append((c, "rerun sweep", None))
        a = evolve_trajectory(spec, default_initial_state(N), 0.5, 0.05,
                              observers={"S": entropy}).values["S"]
        b = evolve_trajectory(spec, default_initial_state(N), 0.5, 0.05,
                              observers={"S": entropy}).values["S"]
        if a.tobytes() != b.tobytes():
            failures.append((c, "rerun evolve", None))
    ok = acceptance(10, not failures, f"{cases} random specs, N in 3..8: "
                                      f"{len(failures)} violations {failures[:3]}")
    assert ok
