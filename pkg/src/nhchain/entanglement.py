"""Half-chain reduced density matrices and von Neumann entropy (in nats)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-8
EIG_CLIP = 1e-14


@dataclass(frozen=True)
class Bipartition:
    """Contiguous cut: part A holds sites ``0..cut-1`` (the low-order bits)."""

    N: int
    cut: int | None = None

    def __post_init__(self):
        if self.cut is None:
            object.__setattr__(self, "cut", self.N // 2)
        if not 1 <= self.cut <= self.N - 1:
            raise ValueError(f"cut={self.cut} outside [1, {self.N - 1}]")


def _as_partition(p, v) -> Bipartition:
    if isinstance(p, Bipartition):
        return p
    N = int(np.log2(len(v)))
    return Bipartition(N, p)


def _amplitude_matrix(v, p: Bipartition) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if v.shape != (1 << p.N,):
        raise ValueError(f"state of shape {v.shape} does not match N={p.N}")
    nrm = np.linalg.norm(v)
    if abs(nrm - 1.0) > NORM_TOL:
        raise ValueError(f"state is not normalized (norm={nrm!r})")
    # index = b * 2^cut + a, with a the bits of part A
    return v.reshape(1 << (p.N - p.cut), 1 << p.cut)


def reduced_density_matrix(v, p=None) -> np.ndarray:
    """``rho_A = Tr_B |v><v|`` as a dense ``2^cut x 2^cut`` matrix.

    ``p`` is a :class:`Bipartition` or an integer cut size; the default is
    the half cut.
    """
    p = _as_partition(p, v)
    M = _amplitude_matrix(v, p)
    rho = M.T @ M.conj()
    return 0.5 * (rho + rho.conj().T)


def schmidt_probabilities(v, p=None) -> np.ndarray:
    """Eigenvalues of ``rho_A``, obtained as squared singular values."""
    p = _as_partition(p, v)
    s = np.linalg.svd(_amplitude_matrix(v, p), compute_uv=False)
    return s**2


def entropy(v, p=None) -> float:
    """Von Neumann entanglement entropy ``-Tr rho_A ln rho_A`` in nats.

    Schmidt weights below ``1e-14`` are dropped before taking the log.
    """
    lam = schmidt_probabilities(v, p)
    lam = lam[lam >= EIG_CLIP]
    return float(max(0.0, -np.sum(lam * np.log(lam))))


def half_cut_entropy(v) -> float:
    return entropy(v, None)
