"""Standard initial states."""

import numpy as np


def default_initial_state(N: int) -> np.ndarray:
    """Product state ``((|0> + |1>)/sqrt 2)^N``: every amplitude equals ``2^{-N/2}``."""
    if N < 3:
        raise ValueError(f"N={N}: chains need N >= 3")
    return np.full(1 << N, 2.0 ** (-N / 2), dtype=complex)


def neel_state(N: int) -> np.ndarray:
    """Alternating basis state ``|0101...>`` written as a binary numeral.

    The leading (highest) bit is 0, so ``N = 4`` gives index ``0b0101 = 5``.
    """
    if N % 2:
        raise ValueError(f"Neel state needs an even chain, got N={N}")
    index = sum(1 << j for j in range(0, N, 2))
    v = np.zeros(1 << N, dtype=complex)
    v[index] = 1.0
    return v


def basis_state(N: int, index: int) -> np.ndarray:
    v = np.zeros(1 << N, dtype=complex)
    v[index] = 1.0
    return v


def ghz_state(N: int) -> np.ndarray:
    v = np.zeros(1 << N, dtype=complex)
    v[0] = v[-1] = 2 ** -0.5
    return v
