"""Model definitions and sparse Hamiltonian assembly.

Basis convention: the computational index ``b`` of an ``N``-site chain stores
spin ``j`` (0-based) in bit ``j``. A set bit is the sigma^z = +1 ("up",
excited) state; a cleared bit is sigma^z = -1. With this choice the
non-Hermitian term ``-(i gamma / 4) sum_j sigma^z_j`` damps excitations, and
the all-zeros state is the least excited one.

Three models are supported, all with periodic boundary conditions:

* ``NHTFI``      -J sum s^z_j s^z_{j+1} - Omega sum s^x_j - (i gamma/4) sum s^z_j
* ``NHXX``       -J sum (s^x_j s^x_{j+1} + s^y_j s^y_{j+1}) - (i gamma/4) sum s^z_j
* ``NHXX_FIELD`` NHXX - Omega sum s^x_j
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from math import comb

import numpy as np
import scipy.sparse as sp

MAX_SITES = 14


class Model(str, enum.Enum):
    NHTFI = "NHTFI"
    NHXX = "NHXX"
    NHXX_FIELD = "NHXX_FIELD"

    @property
    def bond_weight(self) -> float:
        """Operator norm of one bond term divided by J."""
        return 1.0 if self is Model.NHTFI else 2.0

    @property
    def conserves_excitations(self) -> bool:
        return self is Model.NHXX


class Boundary(str, enum.Enum):
    PERIODIC = "PERIODIC"


@dataclass(frozen=True)
class SpinChainSpec:
    """Physical description of one model instance.

    Parameters
    ----------
    model : Model or str
        ``NHTFI``, ``NHXX`` or ``NHXX_FIELD``.
    N : int
        Number of sites, ``3 <= N <= 14`` (the upper bound is a resource guard
        lifted by ``allow_large=True``).
    J, Omega, gamma : float
        Coupling, transverse field and dissipation rate. ``J > 0``,
        ``Omega >= 0``, ``gamma >= 0``.
    """

    model: Model
    N: int
    J: float = 1.0
    Omega: float = 0.0
    gamma: float = 0.0
    boundary: Boundary = Boundary.PERIODIC
    allow_large: bool = False

    def __post_init__(self):
        try:
            model = Model(self.model)
        except ValueError:
            raise ValueError(f"unknown model kind {self.model!r}") from None
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if int(self.N) != self.N:
            raise ValueError(f"N must be an integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        if self.N < 3:
            raise ValueError(
                f"N={self.N}: periodic chains need N >= 3 (N=2 double-counts the bond)"
            )
        if self.N > MAX_SITES and not self.allow_large:
            raise ValueError(
                f"N={self.N} exceeds the default limit N <= {MAX_SITES}; "
                "pass allow_large=True to override"
            )
        if not self.J > 0:
            raise ValueError(f"J must be positive, got {self.J}")
        if not self.Omega >= 0:
            raise ValueError(f"Omega must be non-negative, got {self.Omega}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if model is Model.NHXX and self.Omega != 0:
            raise ValueError("NHXX takes no transverse field; use NHXX_FIELD")

    @property
    def dim(self) -> int:
        return 1 << self.N

    def with_gamma(self, gamma: float) -> "SpinChainSpec":
        return replace(self, gamma=float(gamma))

    def with_N(self, N: int) -> "SpinChainSpec":
        return replace(self, N=int(N))


def excitation_number(b: int) -> int:
    """Number of up spins (set bits) in basis index ``b``."""
    return int(b).bit_count()


def sector_indices(N: int, n: int) -> np.ndarray:
    """Ascending basis indices of ``N`` sites carrying exactly ``n`` excitations."""
    if not 0 <= n <= N:
        raise ValueError(f"excitation number n={n} outside [0, {N}]")
    idx = np.arange(1 << N)
    out = idx[popcounts(N) == n]
    assert out.size == comb(N, n)
    return out


def popcounts(N: int) -> np.ndarray:
    """Excitation number of every basis index of an ``N``-site chain."""
    idx = np.arange(1 << N)
    return ((idx[:, None] >> np.arange(N)) & 1).sum(axis=1)


def _spins(N: int) -> np.ndarray:
    # (2^N, N) array of sigma^z eigenvalues +-1
    idx = np.arange(1 << N)
    return 2 * ((idx[:, None] >> np.arange(N)) & 1) - 1


def assemble_hamiltonian(model, N, J=1.0, Omega=0.0, gamma=0.0, periodic=True):
    """Assemble the sparse Hamiltonian without the public spec guards.

    Allows ``N = 2`` and open chains; used by test doubles. Prefer
    :func:`build_hamiltonian` everywhere else.
    """
    model = Model(model)
    dim = 1 << N
    idx = np.arange(dim)
    s = _spins(N)
    bonds = [(j, (j + 1) % N) for j in range(N if periodic else N - 1)]

    diag = -(1j * gamma / 4.0) * s.sum(axis=1).astype(complex)
    if model is Model.NHTFI:
        for j, k in bonds:
            diag += -J * s[:, j] * s[:, k]
    rows, cols, vals = [idx], [idx], [diag]

    if model in (Model.NHXX, Model.NHXX_FIELD):
        for j, k in bonds:
            # s^x s^x + s^y s^y = 2 (s^+ s^- + s^- s^+): flips an antiparallel pair
            anti = idx[s[:, j] != s[:, k]]
            rows.append(anti)
            cols.append(anti ^ ((1 << j) | (1 << k)))
            vals.append(np.full(anti.size, -2.0 * J, dtype=complex))
    if Omega:
        for j in range(N):
            rows.append(idx)
            cols.append(idx ^ (1 << j))
            vals.append(np.full(dim, -Omega, dtype=complex))

    H = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dim, dim),
    )
    H.sum_duplicates()
    H.eliminate_zeros()
    H.sort_indices()
    return H


def build_hamiltonian(spec: SpinChainSpec) -> sp.csr_matrix:
    """Sparse CSR matrix of the model described by ``spec``.

    Column indices within each row are sorted, so matrix-vector products
    are reproducible bit for bit.
    """
    return assemble_hamiltonian(spec.model, spec.N, spec.J, spec.Omega, spec.gamma)


def apply_operator(M, v):
    v = np.asarray(v)
    if M.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: operator {M.shape} vs vector {v.shape}")
    return M @ v


def shift_permutation(N: int) -> np.ndarray:
    """Image of every basis index under the cyclic shift j -> j+1."""
    idx = np.arange(1 << N)
    mask = (1 << N) - 1
    return ((idx << 1) & mask) | (idx >> (N - 1))


def flip_permutation(N: int) -> np.ndarray:
    """Image of every basis index under the global spin flip prod_j s^x_j."""
    return np.arange(1 << N) ^ ((1 << N) - 1)
