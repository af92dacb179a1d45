"""Balanced staggered-adoption panels: ingestion, validation, canonical ordering.

A design is a balanced N x J panel in which each unit is untreated up to some
first-treated period T and treated from T onward (an absorbing state).  Units
that never adopt carry the internal code J + 1 so that every comparison of
adoption times works uniformly; they sort after all adopters.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import (
    AdoptionAtStartError,
    BalancedPanelError,
    DesignTooSmallError,
    PeriodIndexError,
    TransformDomainError,
)

NEVER = "never"

TRANSFORMS = ("identity", "log", "logit")


def never_code(n_periods: int) -> int:
    """Internal adoption code for a never-treated unit."""
    return n_periods + 1


@dataclass(frozen=True)
class AdoptionPattern:
    """First-treated periods for ``n_units`` units observed over ``n_periods``.

    Attributes
    ----------
    n_units : int
        Number of units N (rows).
    n_periods : int
        Number of periods J (columns).
    adoption : tuple of int
        First-treated period per unit, non-decreasing.  Values lie in
        ``2..J`` for adopters and equal ``J + 1`` for never-treated units.
        Adoption in period 1 is rejected: such a unit has no pre-treatment
        period and no within-unit difference identifies its effect.
    """

    n_units: int
    n_periods: int
    adoption: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.n_units < 2 or self.n_periods < 2:
            raise DesignTooSmallError(
                f"need at least 2 units and 2 periods, got N={self.n_units}, J={self.n_periods}"
            )
        if len(self.adoption) != self.n_units:
            raise ValueError(
                f"adoption has {len(self.adoption)} entries for {self.n_units} units"
            )
        never = never_code(self.n_periods)
        for t in self.adoption:
            if t == 1:
                raise AdoptionAtStartError(
                    "a unit adopting in period 1 has no pre-treatment period"
                )
            if not isinstance(t, (int, np.integer)) or not 2 <= int(t) <= never:
                raise ValueError(
                    f"adoption time {t!r} outside 2..{self.n_periods} or never ({never})"
                )
        if any(a > b for a, b in zip(self.adoption, self.adoption[1:])):
            raise ValueError(
                "adoption times must be non-decreasing; build via from_times() to sort"
            )
        object.__setattr__(self, "adoption", tuple(int(t) for t in self.adoption))

    @classmethod
    def from_times(
        cls, times: Sequence[int | None], n_periods: int
    ) -> "AdoptionPattern":
        """Build a pattern from possibly unsorted times; ``None`` = never treated."""
        sorted_times, _ = canonical_permutation(times, n_periods)
        return cls(len(sorted_times), n_periods, sorted_times)

    @property
    def never_code(self) -> int:
        return never_code(self.n_periods)

    def is_never_treated(self, unit: int) -> bool:
        """True if 1-based ``unit`` never adopts within the window."""
        return self.adoption[unit - 1] == self.never_code

    def is_treated(self, unit: int, period: int) -> bool:
        """Treatment indicator X for 1-based ``unit`` at 1-based ``period``."""
        return self.adoption[unit - 1] <= period

    def exposure(self, unit: int, period: int) -> int:
        """Exposure time a = period - T + 1 for a treated cell (1 in the first treated period)."""
        return period - self.adoption[unit - 1] + 1

    def treatment_indicator(self) -> np.ndarray:
        """N x J array of 0/1 treatment indicators."""
        periods = np.arange(1, self.n_periods + 1)
        return (np.asarray(self.adoption)[:, None] <= periods[None, :]).astype(np.int8)

    def treated_cells(self) -> Iterable[tuple[int, int]]:
        """Yield treated (unit, period) cells, unit-major, both 1-based."""
        for i, t in enumerate(self.adoption, start=1):
            for j in range(t, self.n_periods + 1):
                yield i, j

    def adoption_labels(self) -> tuple[str, ...]:
        """Adoption times as strings, never-treated spelled out."""
        return tuple(
            NEVER if t == self.never_code else str(t) for t in self.adoption
        )

    def distinct_adoption_times(self) -> tuple[int, ...]:
        """Sorted distinct adoption codes (never code included if present)."""
        return tuple(sorted(set(self.adoption)))


def canonical_permutation(
    times: Sequence[int | None], n_periods: int
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Sort adoption times ascending, never-treated last, ties in input order.

    Returns
    -------
    sorted_times : tuple of int
        Adoption codes in canonical order (never mapped to ``n_periods + 1``).
    order : tuple of int
        ``order[r]`` is the 0-based input position stored at canonical row r.
    """
    never = never_code(n_periods)
    coded = [never if t is None else int(t) for t in times]
    order = tuple(sorted(range(len(coded)), key=lambda k: (coded[k], k)))
    return tuple(coded[k] for k in order), order


@dataclass(frozen=True)
class PanelData:
    """A balanced panel in canonical (adoption-sorted) unit order.

    Attributes
    ----------
    pattern : AdoptionPattern
        The design, rows aligned with ``outcomes``.
    outcomes : numpy.ndarray
        N x J array of (possibly transformed) outcomes.
    unit_labels : tuple of str
        Original unit identifiers in canonical row order.
    transform_applied : str
        One of ``identity``, ``log``, ``logit``.
    source_order : tuple of int
        ``source_order[r]`` is the 0-based position of canonical row r in the
        input, so original ordering can be reconstructed.
    """

    pattern: AdoptionPattern
    outcomes: np.ndarray
    unit_labels: tuple[str, ...]
    transform_applied: str = "identity"
    source_order: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        out = np.asarray(self.outcomes, dtype=float)
        if out.shape != (self.pattern.n_units, self.pattern.n_periods):
            raise BalancedPanelError(
                f"outcomes shape {out.shape} does not match "
                f"N={self.pattern.n_units}, J={self.pattern.n_periods}"
            )
        if not np.all(np.isfinite(out)):
            raise BalancedPanelError("outcomes contain missing or non-finite values")
        if self.transform_applied not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.transform_applied!r}")
        if len(self.unit_labels) != self.pattern.n_units:
            raise ValueError("one label per unit required")
        if not self.source_order:
            object.__setattr__(
                self, "source_order", tuple(range(self.pattern.n_units))
            )
        out = out.copy()
        out.flags.writeable = False
        object.__setattr__(self, "outcomes", out)
        object.__setattr__(self, "unit_labels", tuple(str(u) for u in self.unit_labels))

    @property
    def y(self) -> np.ndarray:
        """Outcomes flattened row-major: all periods of unit 1, then unit 2, ..."""
        return self.outcomes.ravel()


def apply_transform(values: np.ndarray, transform: str) -> np.ndarray:
    """Apply an outcome transform elementwise, checking its domain.

    ``log`` requires strictly positive values, ``logit`` values strictly
    inside (0, 1).  Violations raise :class:`TransformDomainError`.
    """
    values = np.asarray(values, dtype=float)
    if transform == "identity":
        return values
    if transform == "log":
        if np.any(values <= 0):
            raise TransformDomainError("log transform requires outcomes > 0")
        return np.log(values)
    if transform == "logit":
        if np.any((values <= 0) | (values >= 1)):
            raise TransformDomainError("logit transform requires outcomes in (0, 1)")
        return np.log(values / (1.0 - values))
    raise ValueError(f"unknown transform {transform!r}; choose from {TRANSFORMS}")


def _coerce_adoption(raw, p_min: int, p_max: int) -> int | None:
    """Map a raw adoption entry onto re-indexed periods; None = never.

    Adoption strictly after the observation window counts as never treated;
    adoption at or before the first observed period leaves no pre-period.
    """
    if raw is None:
        return None
    if isinstance(raw, float) and np.isnan(raw):
        return None
    if isinstance(raw, str):
        s = raw.strip().lower()
        if s in ("", NEVER, "na", "nan", "none"):
            return None
        raw = float(s)
    val = float(raw)
    if val != int(val):
        raise ValueError(f"adoption period {raw!r} is not an integer")
    val = int(val)
    if val > p_max:
        return None
    if val <= p_min:
        raise AdoptionAtStartError(
            f"adoption at period {val} is not after the first observed period {p_min}"
        )
    return val - p_min + 1


def _from_records(
    units: list, adoptions: list, matrix: np.ndarray, n_periods: int, transform: str
) -> PanelData:
    sorted_times, order = canonical_permutation(adoptions, n_periods)
    pattern = AdoptionPattern(len(units), n_periods, sorted_times)
    outcomes = apply_transform(matrix[list(order), :], transform)
    labels = tuple(str(units[k]) for k in order)
    return PanelData(
        pattern=pattern,
        outcomes=outcomes,
        unit_labels=labels,
        transform_applied=transform,
        source_order=order,
    )


def load_panel(
    source: str | Path | IO[str],
    format: str = "long",
    transform: str = "identity",
) -> PanelData:
    """Read a CSV panel and return it in canonical unit order.

    Parameters
    ----------
    source : path or text file handle
        CSV input.  Long format needs columns ``unit, period, outcome,
        adoption_period``; wide format needs ``unit, adoption_period,
        y1..yJ``.
    format : {"long", "wide"}
    transform : {"identity", "log", "logit"}
        Elementwise outcome transform applied at load time.

    Notes
    -----
    Long-format periods may be any contiguous run of integers (calendar
    weeks, months); they are re-indexed to 1..J and ``adoption_period`` is
    re-indexed on the same scale.  Adoption after the last observed period
    counts as never treated; adoption at or before the first observed period
    raises :class:`AdoptionAtStartError`.  Never-treated units may leave
    ``adoption_period`` empty or spell it ``never``.
    """
    if transform not in TRANSFORMS:
        raise ValueError(f"unknown transform {transform!r}; choose from {TRANSFORMS}")
    if isinstance(source, (str, Path)):
        df = pd.read_csv(source, dtype={"unit": str})
    else:
        df = pd.read_csv(source, dtype={"unit": str})
    if format == "long":
        return _load_long(df, transform)
    if format == "wide":
        return _load_wide(df, transform)
    raise ValueError(f"unknown format {format!r}; choose 'long' or 'wide'")


def _load_long(df: pd.DataFrame, transform: str) -> PanelData:
    required = {"unit", "period", "outcome", "adoption_period"}
    missing = required - set(df.columns)
    if missing:
        raise BalancedPanelError(f"long format missing columns: {sorted(missing)}")
    periods = np.unique(df["period"].to_numpy())
    if not np.all(periods == periods.astype(int)):
        raise PeriodIndexError("periods must be integers")
    periods = periods.astype(int)
    p_min, p_max = int(periods.min()), int(periods.max())
    n_periods = p_max - p_min + 1
    if len(periods) != n_periods:
        raise PeriodIndexError(
            f"periods {p_min}..{p_max} are not contiguous: {len(periods)} distinct values"
        )

    units, adoptions, rows = [], [], []
    for unit, grp in df.groupby("unit", sort=False):
        if len(grp) != n_periods or grp["period"].nunique() != n_periods:
            raise BalancedPanelError(
                f"unit {unit!r} has {len(grp)} rows over {grp['period'].nunique()} "
                f"distinct periods; expected one row for each of {n_periods} periods"
            )
        adopt_vals = grp["adoption_period"].astype(object).unique()
        coded = {_coerce_adoption(v, p_min, p_max) for v in adopt_vals}
        if len(coded) != 1:
            raise BalancedPanelError(
                f"unit {unit!r} has conflicting adoption_period values {adopt_vals!r}"
            )
        ordered = grp.sort_values("period")["outcome"].to_numpy(dtype=float)
        units.append(unit)
        adoptions.append(coded.pop())
        rows.append(ordered)
    return _from_records(units, adoptions, np.vstack(rows), n_periods, transform)


def _load_wide(df: pd.DataFrame, transform: str) -> PanelData:
    if "unit" not in df.columns or "adoption_period" not in df.columns:
        raise BalancedPanelError("wide format requires 'unit' and 'adoption_period'")
    ycols = {}
    for col in df.columns:
        if col.startswith("y") and col[1:].isdigit():
            ycols[int(col[1:])] = col
    if not ycols:
        raise BalancedPanelError("wide format requires outcome columns y1..yJ")
    n_periods = max(ycols)
    if sorted(ycols) != list(range(1, n_periods + 1)):
        raise PeriodIndexError(
            f"outcome columns must be y1..y{n_periods} with no gaps, got {sorted(ycols)}"
        )
    if df["unit"].duplicated().any():
        raise BalancedPanelError("wide format has duplicate unit rows")
    matrix = df[[ycols[j] for j in range(1, n_periods + 1)]].to_numpy(dtype=float)
    if np.isnan(matrix).any():
        raise BalancedPanelError("outcomes contain missing values")
    units = df["unit"].tolist()
    adoptions = [_coerce_adoption(v, 1, n_periods) for v in df["adoption_period"]]
    return _from_records(units, adoptions, matrix, n_periods, transform)


def canonical_order(panel: PanelData) -> PanelData:
    """Re-sort a panel into canonical adoption order (idempotent)."""
    times = list(panel.pattern.adoption)
    sorted_times, order = canonical_permutation(times, panel.pattern.n_periods)
    if sorted_times == panel.pattern.adoption and order == tuple(
        range(panel.pattern.n_units)
    ):
        return panel
    pattern = AdoptionPattern(panel.pattern.n_units, panel.pattern.n_periods, sorted_times)
    return PanelData(
        pattern=pattern,
        outcomes=panel.outcomes[list(order), :],
        unit_labels=tuple(panel.unit_labels[k] for k in order),
        transform_applied=panel.transform_applied,
        source_order=tuple(panel.source_order[k] for k in order),
    )
