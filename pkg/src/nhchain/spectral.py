"""Complex spectra, the imaginary-part gap, and level flow across gamma sweeps.

Two solvers sit behind one contract. ``method="dense"`` diagonalizes the full
2^N matrix. ``method="momentum"`` solves the translation sectors
``k = 0..N//2`` and mirrors ``k -> N-k``; it returns the same eigenvalue
multiset at a fraction of the cost and is the default for sweeps.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .entanglement import half_cut_entropy
from .spin_algebra import SpinChainSpec, build_hamiltonian
from .symmetry import is_translation_invariant, momentum_sectors, reflection_permutation

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-9
AMBIGUITY_TOL = 1e-6
LOW_OVERLAP = 0.5
CLUSTER_TOL = 1e-8
MAX_DENSE_DIM = 1 << 14

SWEEP_HEADER = ("gamma", "gap", "re_max", "im_max", "entropy_max_level",
                "crossing_flag", "converged")


class EigensolverError(RuntimeError):
    """The dense eigensolver failed to converge."""

    def __init__(self, message, spec=None):
        super().__init__(f"{message} (spec={spec!r})" if spec is not None else message)
        self.spec = spec


def spectrum_order(values) -> np.ndarray:
    """Indices sorting eigenvalues by descending imaginary part, then ascending real part."""
    values = np.asarray(values)
    # round so that numerically equal imaginary parts tie
    return np.lexsort((values.real, -np.round(values.imag, 10)))


@dataclass
class ComplexSpectrum:
    """All eigenvalues of one Hamiltonian, sorted by :func:`spectrum_order`.

    ``eigenvectors`` holds unit-norm right eigenvectors as columns when
    requested. ``momenta`` carries the folded sector label ``k`` of every
    level when the momentum solver produced the spectrum.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None
    momenta: np.ndarray | None = None

    def __len__(self):
        return len(self.eigenvalues)

    @property
    def max_imag_level(self) -> complex:
        return complex(self.eigenvalues[0])


def _dim_to_N(dim: int) -> int:
    N = int(dim).bit_length() - 1
    if 1 << N != dim:
        raise ValueError(f"matrix dimension {dim} is not a power of two")
    return N


def _eig(A, vectors, spec=None):
    try:
        if vectors:
            return np.linalg.eig(A)
        return np.linalg.eigvals(A), None
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(f"eigensolver did not converge: {exc}", spec) from exc


def full_diagonalize(H, want_vectors: bool = False, method: str = "dense",
                     spec: SpinChainSpec | None = None) -> ComplexSpectrum:
    """Diagonalize ``H`` completely.

    Parameters
    ----------
    H : sparse or dense (2^N, 2^N) matrix
    want_vectors : bool
        Also return unit-norm right eigenvectors.
    method : {"dense", "momentum"}
        ``"momentum"`` requires a translation-invariant ``H``.
    spec : SpinChainSpec, optional
        Echoed in :class:`EigensolverError` messages.
    """
    dim = H.shape[0]
    if dim > MAX_DENSE_DIM:
        raise ValueError(f"dimension {dim} exceeds the dense workspace guard {MAX_DENSE_DIM}")
    N = _dim_to_N(dim)

    if method == "dense":
        A = H.toarray() if hasattr(H, "toarray") else np.asarray(H)
        w, V = _eig(A, want_vectors, spec)
        momenta = None
    elif method == "momentum":
        if not is_translation_invariant(H, N):
            raise ValueError("momentum solver needs a translation-invariant operator")
        ws, Vs, ks = [], [], []
        refl = reflection_permutation(N) if want_vectors else None
        for sec in momentum_sectors(N):
            w_k, U = _eig(sec.block(H), want_vectors, spec)
            copies = sec.multiplicity
            ws.extend([w_k] * copies)
            ks.extend([np.full(w_k.size, sec.k)] * copies)
            if want_vectors:
                Vk = sec.lift(U)
                Vs.append(Vk)
                if copies == 2:
                    Vs.append(Vk[refl])
        w = np.concatenate(ws)
        momenta = np.concatenate(ks)
        V = np.hstack(Vs) if want_vectors else None
    else:
        raise ValueError(f"unknown method {method!r}")

    order = spectrum_order(w)
    w = w[order]
    if V is not None:
        V = V[:, order]
        V = V / np.linalg.norm(V, axis=0)
    return ComplexSpectrum(w, V, None if momenta is None else momenta[order])


def diagonalize_spec(spec: SpinChainSpec, want_vectors=False, method="momentum"):
    return full_diagonalize(build_hamiltonian(spec), want_vectors, method, spec=spec)


def complex_gap(s) -> float:
    """Largest minus second-largest imaginary part; 0 when the top is degenerate."""
    w = s.eigenvalues if isinstance(s, ComplexSpectrum) else np.asarray(s)
    if len(w) < 2:
        raise ValueError("need at least two eigenvalues")
    im = np.sort(np.asarray(w).imag)[::-1]
    gap = float(im[0] - im[1])
    return 0.0 if gap <= DEGENERACY_TOL else gap


# --------------------------------------------------------------------------
# per-point solutions shared by gap_sweep and track_levels


@dataclass
class _Block:
    label: int
    multiplicity: int
    sector: object  # MomentumSector or None for the dense solve
    values: np.ndarray
    vectors: np.ndarray | None = None  # block basis, unit columns

    def lift(self, u):
        return u if self.sector is None else self.sector.lift(u)


@dataclass
class _Point:
    gamma: float
    blocks: list
    top: tuple  # (block position, level index)

    @property
    def all_values(self):
        return np.concatenate([np.tile(b.values, b.multiplicity) for b in self.blocks])

    @property
    def top_value(self) -> complex:
        b, i = self.top
        return complex(self.blocks[b].values[i])

    def top_vector(self):
        b, i = self.top
        return self.blocks[b].vectors[:, i]


def _top_of(blocks):
    best = None
    for pos, blk in enumerate(blocks):
        i = spectrum_order(blk.values)[0]
        cand = blk.values[i]
        if best is None:
            best = (pos, i, cand)
            continue
        d = cand.imag - best[2].imag
        if d > DEGENERACY_TOL or (abs(d) <= DEGENERACY_TOL and cand.real < best[2].real):
            best = (pos, i, cand)
    return best[0], best[1]


def _solve_point(spec, method, vectors):
    """Eigenvalues of every block; eigenvectors for all blocks or only the top one."""
    H = build_hamiltonian(spec)
    N = spec.N
    if method == "dense":
        raw = [(0, 1, None, H.toarray())]
    elif method == "momentum":
        raw = [(s.k, s.multiplicity, s, s.block(H)) for s in momentum_sectors(N)]
    else:
        raise ValueError(f"unknown method {method!r}")

    blocks = []
    for label, mult, sec, A in raw:
        w, V = _eig(A, vectors == "all", spec)
        blocks.append(_Block(label, mult, sec, w, V))
    if vectors == "top":
        pos, _ = _top_of(blocks)
        blk = blocks[pos]
        A = raw[pos][3]
        blk.values, blk.vectors = _eig(A, True, spec)
    if vectors:
        for blk in blocks:
            if blk.vectors is not None:
                blk.vectors = blk.vectors / np.linalg.norm(blk.vectors, axis=0)
    pos, i = _top_of(blocks)
    return _Point(spec.gamma, blocks, (pos, i))


def _top_crossed(prev: _Point, cur: _Point):
    """Did the max-imaginary level change identity between two grid points?"""
    pb, _ = prev.top
    cb, ci = cur.top
    if prev.blocks[pb].label != cur.blocks[cb].label:
        return True, False, 0.0
    blk = cur.blocks[cb]
    ov = np.abs(blk.vectors.conj().T @ prev.top_vector())
    # a degenerate top is an eigenspace; compare its total weight to the best outsider
    cluster = np.abs(blk.values - blk.values[ci]) <= CLUSTER_TOL
    inside = float(np.sqrt(np.sum(ov[cluster] ** 2)))
    outside = float(ov[~cluster].max()) if (~cluster).any() else 0.0
    return outside > inside, abs(outside - inside) < AMBIGUITY_TOL, max(inside, outside)


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepRow:
    gamma: float
    gap: float = float("nan")
    re_max: float = float("nan")
    im_max: float = float("nan")
    entropy_max_level: float = float("nan")
    crossing_flag: bool = False
    converged: bool = True
    sector: int | None = None
    ambiguous: bool = False


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    x = float(x)
    return "" if not np.isfinite(x) else f"{x:.17g}"


@dataclass
class SweepTable:
    """Per-gamma records of one sweep, keyed and sorted by gamma."""

    spec: SpinChainSpec
    rows: list = field(default_factory=list)

    @property
    def gammas(self):
        return np.array([r.gamma for r in self.rows])

    @property
    def gaps(self):
        return np.array([r.gap for r in self.rows])

    @property
    def crossings(self):
        """Grid intervals (gamma_prev, gamma) whose row carries a crossing flag."""
        return [(self.rows[i - 1].gamma, self.rows[i].gamma)
                for i in range(1, len(self.rows)) if self.rows[i].crossing_flag]

    @property
    def all_converged(self):
        return all(r.converged for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in sorted(self.rows, key=lambda r: r.gamma):
            w.writerow([_fmt(r.gamma), _fmt(r.gap), _fmt(r.re_max), _fmt(r.im_max),
                        _fmt(r.entropy_max_level), _fmt(r.crossing_flag),
                        _fmt(r.converged)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, spec=None) -> "SweepTable":
        rows = []
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != SWEEP_HEADER:
            raise ValueError(f"unexpected sweep header {reader.fieldnames}")

        def num(s):
            return float(s) if s != "" else float("nan")

        for rec in reader:
            rows.append(SweepRow(
                gamma=num(rec["gamma"]), gap=num(rec["gap"]), re_max=num(rec["re_max"]),
                im_max=num(rec["im_max"]), entropy_max_level=num(rec["entropy_max_level"]),
                crossing_flag=rec["crossing_flag"] == "1", converged=rec["converged"] == "1"))
        return cls(spec, rows)


def _check_grid(gamma_grid):
    grid = np.asarray(gamma_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("gamma grid must be a non-empty 1-d sequence")
    if np.any(grid < 0):
        raise ValueError("gamma grid must be non-negative")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("gamma grid must be strictly ascending")
    return grid


def make_grid(start: float, stop: float, step: float) -> np.ndarray:
    """Inclusive grid ``start, start+step, ..., stop`` free of accumulated drift."""
    n = int(np.floor((stop - start) / step + 1e-9))
    return np.round(start + step * np.arange(n + 1), 12)


def gap_sweep(spec_template: SpinChainSpec, gamma_grid, method: str = "momentum",
              entropies: bool = True) -> SweepTable:
    """Gap, max-imaginary level and its half-cut entropy at every grid point.

    Points whose eigensolve fails are recorded with ``converged=False`` and
    the sweep continues. ``crossing_flag`` on row ``i`` marks a change of the
    max-imaginary level's identity between rows ``i-1`` and ``i``.
    """
    grid = _check_grid(gamma_grid)
    table = SweepTable(spec_template)
    prev = None
    for g in grid:
        spec = spec_template.with_gamma(g)
        row = SweepRow(gamma=float(g))
        try:
            pt = _solve_point(spec, method, "top")
        except EigensolverError as exc:
            log.warning("gamma=%g: %s", g, exc)
            row.converged = False
            table.rows.append(row)
            prev = None
            continue
        top = pt.top_value
        row.gap = complex_gap(pt.all_values)
        row.re_max, row.im_max = top.real, top.imag
        row.sector = pt.blocks[pt.top[0]].label
        if entropies:
            v = pt.blocks[pt.top[0]].lift(pt.top_vector())
            row.entropy_max_level = half_cut_entropy(v / np.linalg.norm(v))
        if prev is not None:
            row.crossing_flag, row.ambiguous, _ = _top_crossed(prev, pt)
        table.rows.append(row)
        prev = pt
    return table


@dataclass
class TrackedLevel:
    """Continuation curve of one level, ordered like the gamma grid."""

    eigenvalues: np.ndarray
    sector: np.ndarray
    index: np.ndarray
    ambiguous: list = field(default_factory=list)


@dataclass
class LevelFlow:
    gamma_grid: np.ndarray
    tracked_levels: list
    max_imag_curve: np.ndarray
    max_imag_sector: np.ndarray
    crossings: list
    ambiguous: list = field(default_factory=list)
    low_overlap: list = field(default_factory=list)


def track_levels(spec_template: SpinChainSpec, gamma_grid, k_levels: int = 4,
                 method: str = "momentum") -> LevelFlow:
    """Follow the ``k_levels`` highest-imaginary levels of the last grid point
    backward through the grid by greedy maximal right-eigenvector overlap.

    Crossings are the grid intervals across which the pointwise
    max-imaginary level is not the continuation of its neighbour. Ties
    within ``1e-6`` in overlap are reported in ``ambiguous`` rather than
    resolved silently; best overlaps under 0.5 trigger a warning because the
    grid is then too coarse for continuation to mean much.
    """
    grid = _check_grid(gamma_grid)
    n = grid.size
    max_curve = np.empty(n, dtype=complex)
    max_sector = np.empty(n, dtype=int)
    crossings, ambiguous, low = [], [], []

    cur = _solve_point(spec_template.with_gamma(grid[-1]), method, "all")
    # initial tracked set: top k_levels over distinct (block, index) pairs
    cands = [(pos, i, blk.values[i]) for pos, blk in enumerate(cur.blocks)
             for i in range(len(blk.values))]
    vals = np.array([c[2] for c in cands])
    picks = [cands[j] for j in spectrum_order(vals)[:k_levels]]
    curves = [TrackedLevel(np.empty(n, complex), np.empty(n, int), np.empty(n, int))
              for _ in picks]
    state = [(pos, i) for pos, i, _ in picks]

    def record(k, pt):
        max_curve[k] = pt.top_value
        max_sector[k] = pt.blocks[pt.top[0]].label
        for c, (pos, i) in zip(curves, state):
            c.eigenvalues[k] = pt.blocks[pos].values[i]
            c.sector[k] = pt.blocks[pos].label
            c.index[k] = i

    record(n - 1, cur)
    for k in range(n - 2, -1, -1):
        prev = _solve_point(spec_template.with_gamma(grid[k]), method, "all")

        crossed, amb, best = _top_crossed(prev, cur)
        if crossed:
            crossings.append((float(grid[k]), float(grid[k + 1])))
        if amb:
            ambiguous.append((float(grid[k]), float(grid[k + 1]), "max_imag"))

        # greedy assignment of tracked levels, block by block
        new_state = [None] * len(state)
        by_block = {}
        for t, (pos, i) in enumerate(state):
            by_block.setdefault(pos, []).append(t)
        for pos, members in by_block.items():
            U = np.column_stack([cur.blocks[pos].vectors[:, state[t][1]] for t in members])
            ov = np.abs(prev.blocks[pos].vectors.conj().T @ U)
            taken = set()
            for flat in np.argsort(ov, axis=None)[::-1]:
                j, col = np.unravel_index(flat, ov.shape)
                t = members[col]
                if new_state[t] is not None or j in taken:
                    continue
                colv = np.sort(ov[:, col])[::-1]
                if colv.size > 1 and colv[0] - colv[1] < AMBIGUITY_TOL:
                    curves[t].ambiguous.append(float(grid[k]))
                    ambiguous.append((float(grid[k]), float(grid[k + 1]), f"level{t}"))
                if ov[j, col] < LOW_OVERLAP:
                    low.append((float(grid[k]), float(ov[j, col])))
                new_state[t] = (pos, int(j))
                taken.add(j)
                if all(new_state[m] is not None for m in members):
                    break
        state = new_state
        record(k, prev)
        cur = prev

    if low:
        warnings.warn(f"{len(low)} continuation steps with overlap < {LOW_OVERLAP}; "
                      "refine the gamma grid", RuntimeWarning, stacklevel=2)
    crossings.sort()
    return LevelFlow(grid, curves, max_curve, max_sector, crossings, ambiguous, low)


def critical_rate(table: SweepTable, threshold: float = 0.02):
    """Smallest grid gamma from which the gap stays above ``threshold * gamma/2``.

    Returns ``None`` when even the last grid point fails the test.
    """
    rows = sorted(table.rows, key=lambda r: r.gamma)
    result = None
    for r in reversed(rows):
        if r.converged and np.isfinite(r.gap) and r.gap > threshold * r.gamma / 2:
            result = r.gamma
        else:
            break
    return result
