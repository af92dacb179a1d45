"""The two-by-two DID system: design matrix A, index maps, and comparison types.

Every ordered pair of units (i < i') and periods (j < j') defines one
two-by-two difference-in-differences

    D[i, i', j, j'] = (Y[i, j'] - Y[i, j]) - (Y[i', j'] - Y[i', j]),

so a design yields K = C(N,2) * C(J,2) of them.  Stacking their coefficient
rows against the flattened outcome vector gives the K x NJ matrix A with
entries in {-1, 0, 1}: two +1 and two -1 per row, d = A y.

Rows are ordered lexicographically in (i, i', j, j').  With units sorted by
adoption time, each comparison falls into exactly one of six types defined by
the treatment state of both units in both periods (see :func:`classify_did`).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Iterator

import numpy as np

from .errors import DesignTooLargeError, DesignTooSmallError
from .panel import AdoptionPattern

# Dense A matrices above this many cells (rows x columns) are not materialised;
# use iter_a_entries to stream rows instead.
DENSE_CELL_CAP = 4096 * 4096

TYPE_NAMES = {
    1: "both untreated in both periods",
    2: "first unit switches, second untreated",
    3: "first unit treated throughout, second untreated",
    4: "both units switch",
    5: "first unit treated throughout, second switches",
    6: "both treated in both periods",
}


@dataclass(frozen=True)
class DIDIndex:
    """1-based labels (i, i', j, j') of one two-by-two comparison."""

    i: int
    i_prime: int
    j: int
    j_prime: int

    def __post_init__(self) -> None:
        if not (1 <= self.i < self.i_prime and 1 <= self.j < self.j_prime):
            raise IndexError(
                f"need 1 <= i < i' and 1 <= j < j', got {self.astuple()}"
            )

    def astuple(self) -> tuple[int, int, int, int]:
        return (self.i, self.i_prime, self.j, self.j_prime)

    def validate(self, n_units: int, n_periods: int) -> None:
        if self.i_prime > n_units or self.j_prime > n_periods:
            raise IndexError(
                f"{self.astuple()} out of range for N={n_units}, J={n_periods}"
            )


def n_did_rows(n_units: int, n_periods: int) -> int:
    """Number of two-by-two comparisons, C(N,2) * C(J,2)."""
    return comb(n_units, 2) * comb(n_periods, 2)


def _pair_rank(a: int, b: int, n: int) -> int:
    """1-based lexicographic rank of the pair (a, b), 1 <= a < b <= n."""
    return (a - 1) * (2 * n - a) // 2 + (b - a)


def _pair_unrank(rank: int, n: int) -> tuple[int, int]:
    """Inverse of :func:`_pair_rank` (integer arithmetic throughout)."""
    a, r = 1, rank
    while r > n - a:
        r -= n - a
        a += 1
    return a, a + r


def did_row_index(idx: DIDIndex, n_units: int, n_periods: int) -> int:
    """1-based row of comparison ``idx`` in the lexicographic (i, i', j, j') order."""
    idx.validate(n_units, n_periods)
    unit_rank = _pair_rank(idx.i, idx.i_prime, n_units)
    period_rank = _pair_rank(idx.j, idx.j_prime, n_periods)
    return (unit_rank - 1) * comb(n_periods, 2) + period_rank


def row_to_index(row: int, n_units: int, n_periods: int) -> DIDIndex:
    """Inverse of :func:`did_row_index` for 1-based ``row``."""
    total = n_did_rows(n_units, n_periods)
    if not 1 <= row <= total:
        raise IndexError(f"row {row} outside 1..{total}")
    per_block = comb(n_periods, 2)
    unit_rank, period_rank = divmod(row - 1, per_block)
    i, i_prime = _pair_unrank(unit_rank + 1, n_units)
    j, j_prime = _pair_unrank(period_rank + 1, n_periods)
    return DIDIndex(i, i_prime, j, j_prime)


def iter_did_indices(n_units: int, n_periods: int) -> Iterator[DIDIndex]:
    """All comparisons in row order without materialising the matrix."""
    for i in range(1, n_units):
        for i_prime in range(i + 1, n_units + 1):
            for j in range(1, n_periods):
                for j_prime in range(j + 1, n_periods + 1):
                    yield DIDIndex(i, i_prime, j, j_prime)


def row_entries(idx: DIDIndex, n_periods: int) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero columns and signs of one A row against the flattened panel.

    Columns are 0-based positions in the row-major flattening of the N x J
    outcome array: +1 at (i, j') and (i', j), -1 at (i, j) and (i', j').
    """
    base_i = (idx.i - 1) * n_periods
    base_ip = (idx.i_prime - 1) * n_periods
    cols = np.array(
        [
            base_i + idx.j_prime - 1,
            base_i + idx.j - 1,
            base_ip + idx.j_prime - 1,
            base_ip + idx.j - 1,
        ],
        dtype=np.int64,
    )
    vals = np.array([1, -1, -1, 1], dtype=np.int8)
    return cols, vals


def iter_a_entries(
    n_units: int, n_periods: int
) -> Iterator[tuple[DIDIndex, np.ndarray, np.ndarray]]:
    """Stream (index, columns, signs) for every A row; memory stays O(1)."""
    for idx in iter_did_indices(n_units, n_periods):
        cols, vals = row_entries(idx, n_periods)
        yield idx, cols, vals


def _period_pair_block(n_periods: int) -> np.ndarray:
    """C(J,2) x J block of within-unit difference rows, (j, j') lexicographic."""
    rows = comb(n_periods, 2)
    block = np.zeros((rows, n_periods), dtype=np.int8)
    r = 0
    for j in range(1, n_periods):
        for j_prime in range(j + 1, n_periods + 1):
            block[r, j - 1] = -1
            block[r, j_prime - 1] = 1
            r += 1
    return block


def build_a_matrix(
    n_units: int, n_periods: int, max_cells: int | None = DENSE_CELL_CAP
) -> np.ndarray:
    """Dense A matrix, K x NJ with entries in {-1, 0, 1}.

    Parameters
    ----------
    n_units, n_periods : int
        Panel dimensions, both at least 2.
    max_cells : int or None
        Cap on rows * columns for the dense array; pass None to disable.
        Above the cap, raise and point callers at :func:`iter_a_entries`.
    """
    if n_units < 2 or n_periods < 2:
        raise DesignTooSmallError(
            f"need N >= 2 and J >= 2, got N={n_units}, J={n_periods}"
        )
    rows = n_did_rows(n_units, n_periods)
    cells = rows * n_units * n_periods
    if max_cells is not None and cells > max_cells:
        raise DesignTooLargeError(
            f"dense A would hold {cells} cells (cap {max_cells}); "
            "stream rows with iter_a_entries instead"
        )
    block = _period_pair_block(n_periods)
    per_block = block.shape[0]
    a = np.zeros((rows, n_units * n_periods), dtype=np.int8)
    r = 0
    for i in range(1, n_units):
        for i_prime in range(i + 1, n_units + 1):
            a[r : r + per_block, (i - 1) * n_periods : i * n_periods] = block
            a[r : r + per_block, (i_prime - 1) * n_periods : i_prime * n_periods] = -block
            r += per_block
    return a


# Comparison types keyed by the (unit i, unit i') treatment course over
# (j, j'): 0 = untreated in both periods, 1 = switches, 2 = treated in both.
# With units sorted by adoption time the second unit never leads the first.
_TYPE_TABLE = {
    (0, 0): 1,
    (1, 0): 2,
    (2, 0): 3,
    (1, 1): 4,
    (2, 1): 5,
    (2, 2): 6,
}


def _course(adoption: int, j: int, j_prime: int) -> int:
    if j_prime < adoption:
        return 0
    if adoption <= j:
        return 2
    return 1


def classify_did(idx: DIDIndex, pattern: AdoptionPattern) -> int:
    """Type 1-6 of one comparison under a canonically ordered pattern."""
    idx.validate(pattern.n_units, pattern.n_periods)
    t_i = pattern.adoption[idx.i - 1]
    t_ip = pattern.adoption[idx.i_prime - 1]
    return _TYPE_TABLE[(_course(t_i, idx.j, idx.j_prime), _course(t_ip, idx.j, idx.j_prime))]


def classify_all(pattern: AdoptionPattern) -> np.ndarray:
    """Types of all K comparisons in row order."""
    out = np.empty(n_did_rows(pattern.n_units, pattern.n_periods), dtype=np.int8)
    for k, idx in enumerate(iter_did_indices(pattern.n_units, pattern.n_periods)):
        out[k] = classify_did(idx, pattern)
    return out


def count_types(pattern: AdoptionPattern) -> tuple[int, int, int, int, int, int]:
    """Closed-form counts of the six comparison types.

    For each unit pair with adoption times t <= t' (never treated coded
    J + 1) the per-type contributions are products of run lengths of the
    pre, between, and post segments of the two treatment courses.
    """
    j_max = pattern.n_periods
    counts = [0] * 6
    adoption = pattern.adoption
    for a in range(pattern.n_units - 1):
        for b in range(a + 1, pattern.n_units):
            t, tp = adoption[a], adoption[b]
            post = j_max - (tp - 1)  # treated periods of the later adopter
            counts[0] += comb(t - 1, 2)
            counts[1] += (t - 1) * (tp - t)
            counts[2] += comb(tp - t, 2)
            counts[3] += (t - 1) * post
            counts[4] += (tp - t) * post
            counts[5] += comb(post, 2)
    return tuple(counts)


@dataclass(frozen=True)
class DIDSystem:
    """A design together with its comparison matrix and type labels.

    Attributes
    ----------
    pattern : AdoptionPattern
        Canonically ordered design.
    a_matrix : numpy.ndarray or None
        Dense K x NJ matrix (int8); None above the dense cap, in which case
        rows must be streamed via :func:`iter_a_entries`.
    types : numpy.ndarray
        K comparison types in row order.
    """

    pattern: AdoptionPattern
    a_matrix: np.ndarray | None
    types: np.ndarray

    @property
    def n_rows(self) -> int:
        return n_did_rows(self.pattern.n_units, self.pattern.n_periods)

    def a_float(self) -> np.ndarray:
        """A as float64 for linear algebra; raises above the dense cap."""
        if self.a_matrix is None:
            raise DesignTooLargeError(
                "design exceeds the dense cap; dense solves are unavailable"
            )
        return self.a_matrix.astype(np.float64)

    def index(self, row: int) -> DIDIndex:
        return row_to_index(row, self.pattern.n_units, self.pattern.n_periods)

    def row_of(self, idx: DIDIndex) -> int:
        return did_row_index(idx, self.pattern.n_units, self.pattern.n_periods)


def build_system(
    pattern: AdoptionPattern, max_cells: int | None = DENSE_CELL_CAP
) -> DIDSystem:
    """Assemble the DID system for a design, dense when within the cap."""
    try:
        a = build_a_matrix(pattern.n_units, pattern.n_periods, max_cells)
    except DesignTooLargeError:
        a = None
    return DIDSystem(pattern=pattern, a_matrix=a, types=classify_all(pattern))
