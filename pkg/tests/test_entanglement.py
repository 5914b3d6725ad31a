import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import unitary_group

from nhchain import (
    Bipartition, Model, SpinChainSpec, default_initial_state, entropy, evolve_trajectory,
    ghz_state, neel_state, reduced_density_matrix, scaling_analysis, schmidt_probabilities,
    steady_entropy_dynamics, steady_entropy_spectral, steady_level,
)
from nhchain.spin_algebra import excitation_number
from nhchain.steady import NoUniqueSteadyLevel, ScalingRecord, classify
from oracles import random_state, site_op


def test_product_state():
    v = default_initial_state(6)
    rho = reduced_density_matrix(v)
    assert np.linalg.matrix_rank(rho, tol=1e-10) == 1
    assert entropy(v) == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(default_initial_state(3), 2 ** -1.5)


def test_ghz():
    v = ghz_state(6)
    for cut in (1, 2, 3, 5):
        rho = reduced_density_matrix(v, cut)
        ref = np.zeros((2 ** cut, 2 ** cut))
        ref[0, 0] = ref[-1, -1] = 0.5
        np.testing.assert_allclose(rho, ref, atol=1e-15)
    assert entropy(v) == pytest.approx(math.log(2))


def test_rdm_matches_singular_values():
    v = random_state(np.random.default_rng(0), 64)
    ev = np.sort(np.linalg.eigvalsh(reduced_density_matrix(v, 3)))
    sv = np.linalg.svd(v.reshape(8, 8), compute_uv=False) ** 2
    np.testing.assert_allclose(ev, np.sort(sv), atol=1e-12)


def test_partial_trace_against_explicit_sum():
    # part A is sites 0..cut-1, the low-order bits
    N, cut = 5, 2
    v = random_state(np.random.default_rng(1), 2 ** N)
    ref = np.zeros((4, 4), complex)
    for a in range(4):
        for a2 in range(4):
            ref[a, a2] = sum(v[(b << cut) | a] * np.conj(v[(b << cut) | a2]) for b in range(8))
    np.testing.assert_allclose(reduced_density_matrix(v, cut), ref, atol=1e-14)


def test_input_validation():
    with pytest.raises(ValueError, match="normalized"):
        entropy(np.ones(8))
    with pytest.raises(ValueError):
        Bipartition(4, 4)
    with pytest.raises(ValueError):
        Bipartition(4, 0)
    assert Bipartition(7).cut == 3


def test_neel_state():
    v = neel_state(4)
    assert np.flatnonzero(v).tolist() == [0b0101]
    assert excitation_number(int(np.flatnonzero(neel_state(8))[0])) == 4
    assert entropy(neel_state(8), 3) == 0.0
    with pytest.raises(ValueError):
        neel_state(5)
    with pytest.raises(ValueError):
        default_initial_state(2)


def test_default_state_sector_populations():
    from nhchain import sector_populations

    np.testing.assert_allclose(sector_populations(default_initial_state(4), 4),
                               np.array([1, 4, 6, 4, 1]) / 16)


def _brute_entropy(v, N, cut):
    # explicit partial trace over sites cut..N-1 (the high-order bits)
    psi = v.reshape([2] * N)  # axis 0 is site N-1
    k = N - cut
    M = psi.reshape(2 ** k, 2 ** cut)
    lam = np.linalg.eigvalsh(M.T @ M.conj())
    lam = lam[lam > 1e-14]
    return float(-np.sum(lam * np.log(lam)))


def test_neel_entropy_grows_linearly_under_xx():
    from scipy.linalg import expm
    from oracles import kron_hamiltonian

    Ns, times = (4, 6, 8, 10), np.arange(0, 6.0001, 0.05)
    peaks = []
    for N in Ns:
        ts = evolve_trajectory(SpinChainSpec(Model.NHXX, N), neel_state(N), 6.0, 0.05,
                               observers={"S": entropy})
        peaks.append(ts.values["S"].max())
        if N <= 8:
            U = expm(-1j * 0.05 * kron_hamiltonian("NHXX", N))
            v, ref = neel_state(N), []
            for _ in times:
                ref.append(_brute_entropy(v, N, N // 2))
                v = U @ v
            assert peaks[-1] == pytest.approx(max(ref), abs=1e-8)
    assert np.all(np.diff(peaks) > 0)
    slope = np.polyfit(Ns, peaks, 1)[0]
    assert slope > 0.1


@given(st.integers(3, 8), st.integers(0, 2 ** 31))
def test_rdm_and_entropy_properties(N, seed):
    rng = np.random.default_rng(seed)
    v = random_state(rng, 2 ** N)
    for cut in range(1, N):
        rho = reduced_density_matrix(v, cut)
        assert np.max(np.abs(rho - rho.conj().T)) <= 1e-12
        ev = np.linalg.eigvalsh(rho)
        assert ev.min() >= -1e-12 and ev.max() <= 1 + 1e-12
        assert abs(np.trace(rho) - 1) <= 1e-12
        S = entropy(v, cut)
        assert 0 <= S <= min(cut, N - cut) * math.log(2) + 1e-10
        # Schmidt symmetry: the complementary cut has the same spectrum;
        # reversing site order swaps the roles of A and B
        idx = np.arange(2 ** N)
        rev = np.zeros_like(idx)
        for j in range(N):
            rev |= ((idx >> j) & 1) << (N - 1 - j)
        assert entropy(v[rev], N - cut) == pytest.approx(S, abs=1e-10)


@given(st.integers(3, 7), st.integers(0, 2 ** 31))
def test_local_unitary_invariance(N, seed):
    rng = np.random.default_rng(seed)
    v = random_state(rng, 2 ** N)
    cut = N // 2
    j = int(rng.integers(0, cut))
    U = site_op(unitary_group.rvs(2, random_state=seed % 2 ** 32), j, N)
    assert entropy(U @ v, cut) == pytest.approx(entropy(v, cut), abs=1e-10)


# ---- steady state


def test_ising_steady_level_is_all_down():
    L = steady_level(SpinChainSpec(Model.NHTFI, 6, gamma=0.7))
    assert L.entropy == 0.0
    assert abs(L.state[0]) == pytest.approx(1.0)


def test_gapless_is_flagged():
    with pytest.raises(NoUniqueSteadyLevel):
        steady_entropy_spectral(SpinChainSpec(Model.NHTFI, 4, Omega=2.0, gamma=0.4))
    with pytest.raises(NoUniqueSteadyLevel):
        steady_entropy_spectral(SpinChainSpec(Model.NHXX, 6))


def test_mirror_pair_resolved():
    L = steady_level(SpinChainSpec(Model.NHTFI, 12, Omega=2.0, gamma=1.2))
    assert L.symmetry_resolved and L.gap == 0.0 and L.sector == 2


@pytest.mark.parametrize("model,Om,g", [
    (Model.NHTFI, 0.9, 0.4), (Model.NHTFI, 2.0, 1.8), (Model.NHXX_FIELD, 0.9, 1.2),
    (Model.NHTFI, 0.9, 1.0)])
def test_dynamics_matches_spectral_when_gapped(model, Om, g):
    s = SpinChainSpec(model, 8, Omega=Om, gamma=g)
    Ss = steady_entropy_spectral(s)
    Sd = steady_entropy_dynamics(s)
    assert abs(Ss - Sd) <= 1e-3


def test_reachable_level_matches_dynamics():
    s = SpinChainSpec(Model.NHTFI, 8, Omega=2.0, gamma=0.8)
    L = steady_level(s, initial_state=default_initial_state(8))
    assert L.sector == 0
    assert abs(L.entropy - steady_entropy_dynamics(s)) <= 1e-3


def test_steady_entropy_jump_xx_field():
    lo = steady_level(SpinChainSpec(Model.NHXX_FIELD, 10, Omega=2.0, gamma=0.4))
    hi = steady_level(SpinChainSpec(Model.NHXX_FIELD, 10, Omega=2.0, gamma=0.6))
    assert lo.sector != hi.sector
    assert lo.entropy > hi.entropy + 0.3


def test_classification_rules():
    N = [6, 8, 10, 12]
    assert classify(N, [1, 1.01, 1.0, 1.02], 0.003, 1.0) == "area"
    S = [0.6 + 0.15 * n for n in N]
    assert classify(N, S, 0.15, 0.6) == "volume"
    S_bad = [1.0, 2.5, 1.2, 2.8]
    slope, icpt = np.polyfit(N, S_bad, 1)
    assert classify(N, S_bad, slope, icpt) == "indeterminate"
    assert classify(N, S, float("nan"), 0.0) == "indeterminate"


def test_scaling_record_formats():
    rec = scaling_analysis(SpinChainSpec(Model.NHTFI, 4, Omega=0.9), [4, 6, 8], 1.0,
                           method="spectral")
    lines = rec.to_csv().splitlines()
    assert lines[0] == "N,entropy,gamma,method"
    assert [int(l.split(",")[0]) for l in lines[1:]] == [4, 6, 8]
    import json

    d = json.loads(rec.summary_json())
    assert set(d) == {"gamma", "slope", "intercept", "classification"}
    assert d["classification"] == "area"
    for N, S in zip(rec.N_values, rec.entropies):
        assert 0 <= S <= N / 2 * math.log(2)


def test_scaling_failures_and_guards():
    rec = scaling_analysis(SpinChainSpec(Model.NHTFI, 4, Omega=2.0), [4, 6, 8], 0.4,
                           method="spectral")
    assert 4 in rec.failed and math.isnan(rec.fit_slope)
    assert rec.classification == "indeterminate"
    with pytest.raises(ValueError):
        scaling_analysis(SpinChainSpec(Model.NHTFI, 4), [5, 6, 8], 1.0)
    with pytest.raises(ValueError):
        scaling_analysis(SpinChainSpec(Model.NHTFI, 4), [4, 6, 16], 1.0)
    with pytest.raises(ValueError):
        scaling_analysis(SpinChainSpec(Model.NHTFI, 4), [4, 6, 8], 1.0, method="magic")
