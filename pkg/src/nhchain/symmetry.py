"""Translation-symmetry sectors of periodic chains.

All three models commute with the cyclic shift ``T`` and with the site
reflection ``R`` (j -> N-1-j). Bloch states built from shift orbits
block-diagonalize the Hamiltonian into ``N`` momentum sectors, and ``R``
maps sector ``k`` onto sector ``N-k`` so only ``k = 0..N//2`` need solving.
The speedup over a dense 2^N solve is roughly ``(N/2)^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .spin_algebra import shift_permutation


@dataclass(frozen=True)
class MomentumSector:
    """Isometry ``P`` (2^N x d) onto the momentum-``k`` Bloch states."""

    N: int
    k: int
    P: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.P.shape[1]

    @property
    def multiplicity(self) -> int:
        """1 for self-conjugate momenta (k = 0, N/2), else 2 (k and N-k)."""
        return 1 if (2 * self.k) % self.N == 0 else 2

    def block(self, H) -> np.ndarray:
        """Dense restriction ``P^dag H P`` of a translation-invariant operator."""
        return np.asarray((self.P.conj().T @ (H @ self.P)).todense())

    def lift(self, u: np.ndarray) -> np.ndarray:
        """Embed block-basis vectors (columns) back into the full space."""
        return self.P @ u


@lru_cache(maxsize=8)
def _orbits(N: int):
    dim = 1 << N
    T = shift_permutation(N)
    # rep[b] = smallest index on the orbit of b, dist[b] = r with b = T^r rep
    rep = np.arange(dim)
    dist = np.zeros(dim, dtype=np.int64)
    length = np.zeros(dim, dtype=np.int64)
    x = np.arange(dim)
    for r in range(1, N + 1):
        x = T[x]
        back = x < rep
        # x = T^r b, so b = T^{-r} x = T^{N-r} x
        rep = np.where(back, x, rep)
        dist = np.where(back, (N - r) % N, dist)
        length = np.where((length == 0) & (x == np.arange(dim)), r, length)
    return rep, dist, length


@lru_cache(maxsize=8)
def momentum_sectors(N: int) -> tuple[MomentumSector, ...]:
    """Sectors ``k = 0..N//2`` with isometries of deterministic column order."""
    rep, dist, length = _orbits(N)
    dim = 1 << N
    idx = np.arange(dim)
    reps = np.unique(rep)
    out = []
    for k in range(N // 2 + 1):
        allowed = reps[(k * length[reps]) % N == 0]
        col = -np.ones(dim, dtype=np.int64)
        col_of_rep = np.full(dim, -1, dtype=np.int64)
        col_of_rep[allowed] = np.arange(allowed.size)
        col = col_of_rep[rep]
        keep = col >= 0
        R = length[idx[keep]]
        phase = np.exp(-2j * np.pi * k * dist[keep] / N) / np.sqrt(R)
        P = sp.csr_matrix((phase, (idx[keep], col[keep])), shape=(dim, allowed.size))
        P.sort_indices()
        out.append(MomentumSector(N, k, P))
    return tuple(out)


def is_translation_invariant(H, N: int, atol: float = 1e-12) -> bool:
    T = shift_permutation(N)
    Pm = sp.csr_matrix((np.ones(1 << N), (T, np.arange(1 << N))), shape=H.shape)
    diff = Pm @ H - H @ Pm
    return diff.nnz == 0 or abs(diff).max() <= atol


def reflection_permutation(N: int) -> np.ndarray:
    """Image of every basis index under the site reflection j -> N-1-j."""
    idx = np.arange(1 << N)
    out = np.zeros_like(idx)
    for j in range(N):
        out |= ((idx >> j) & 1) << (N - 1 - j)
    return out
