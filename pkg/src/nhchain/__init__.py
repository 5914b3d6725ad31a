"""Exact numerics for non-Hermitian spin chains with imaginary longitudinal fields.

Complex spectra and gaps, Faber-polynomial propagation of the normalized
state, entanglement entropy and its scaling, and a quantum-jump/Lindblad
cross-check of the non-Hermitian description.
"""

__version__ = "0.1.0"

from .entanglement import (
    Bipartition, entropy, half_cut_entropy, reduced_density_matrix, schmidt_probabilities,
)
from .propagation import (
    Bounds, FaberPlan, PropagationError, SteadyStateRule, TimeSeries, evolve_trajectory,
    exact_evolve, faber_step, make_plan, make_plan_from_bounds, matrix_bounds,
    sector_populations, spectral_bounds,
)
from .spectral import (
    ComplexSpectrum, EigensolverError, LevelFlow, SweepTable, complex_gap, critical_rate,
    diagonalize_spec, full_diagonalize, gap_sweep, make_grid, track_levels,
)
from .spin_algebra import (
    Boundary, Model, SpinChainSpec, apply_operator, build_hamiltonian, excitation_number,
    sector_indices,
)
from .states import basis_state, default_initial_state, ghz_state, neel_state
from .steady import (
    NoUniqueSteadyLevel, ScalingRecord, SteadyLevel, scaling_analysis,
    steady_entropy_dynamics, steady_entropy_spectral, steady_level,
)
from .trajectories import (
    JumpModel, TrajectoryRecord, compare_with_lindblad, lindblad_evolve, no_jump_consistency,
    sample_batch, sample_trajectory,
)

__all__ = [name for name in dir() if not name.startswith("_")]
