"""Established staggered-adoption estimators expressed as weight vectors.

Each method here is reduced to the weights it places on the K two-by-two
comparisons (``did_weights``) and, equivalently, on the NJ observations
(``obs_weights``), so its implied estimand and variance can be audited with
the same machinery as the minimum-variance weights.  Methods:

* ``tw``  two-way fixed-effects regression coefficient (observation
  weights from partialling unit and period means out of the treatment
  indicator; it has no comparison-level representation here),
* ``cs``  group-time average effects with clean (not-yet-treated) controls
  and a baseline at the group's last pre-treatment period, aggregated
  simple / dynamic / group / calendar,
* ``sa``  event-study contrasts against the latest-adopting cohort only,
* ``ch``  first-difference switch contrasts against not-yet-treated units,
* ``co``  crossover variants 1-3: CO-1 equals ``ch``; CO-2 reweights
  timing groups by the harmonic mean of switcher and control counts;
  CO-3 also admits already-treated units as controls (entering with
  negative sign, since the switcher is the second unit of those rows),
* ``np``  within-period vertical contrasts of treated versus untreated
  units (observation weights only; such contrasts cannot be built from
  two-by-two comparisons).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .didmat import DIDIndex, did_row_index, n_did_rows, row_entries, row_to_index
from .errors import DegenerateDesignError
from .panel import AdoptionPattern

CS_AGGREGATIONS = ("simple", "dynamic", "group", "calendar")
NP_WEIGHTINGS = ("equal", "treated_prop", "inv_var")


@dataclass(frozen=True)
class ComparatorSpec:
    """A comparison-method's weights and bookkeeping.

    Attributes
    ----------
    method : str
        Label such as ``cs:dynamic`` or ``co-3``.
    obs_weights : numpy.ndarray
        Length-NJ weights against the flattened panel.
    did_weights : numpy.ndarray or None
        Length-K weights over two-by-two comparisons; None for methods
        without such a representation (``tw``, ``np``).
    dropped : tuple of str
        Human-readable notes on cells or periods that had to be dropped.
    """

    method: str
    obs_weights: np.ndarray
    did_weights: np.ndarray | None = None
    dropped: tuple[str, ...] = ()


def _obs_from_did(pattern: AdoptionPattern, w: np.ndarray) -> np.ndarray:
    """Observation weights A' w, scattering only the nonzero rows."""
    n, j = pattern.n_units, pattern.n_periods
    obs = np.zeros(n * j)
    for k in np.nonzero(w)[0]:
        cols, vals = row_entries(row_to_index(k + 1, n, j), j)
        obs[cols] += w[k] * vals
    return obs


def _finish(
    pattern: AdoptionPattern,
    method: str,
    w: np.ndarray,
    dropped: Iterable[str] = (),
) -> ComparatorSpec:
    dropped = tuple(dropped)
    if dropped:
        warnings.warn(f"{method}: dropped {', '.join(dropped)}", stacklevel=3)
    return ComparatorSpec(
        method=method,
        obs_weights=_obs_from_did(pattern, w),
        did_weights=w,
        dropped=dropped,
    )


def tw_weights(pattern: AdoptionPattern) -> ComparatorSpec:
    """Observation weights of the two-way fixed-effects coefficient.

    By partialling out, the coefficient equals sum(r * Y) / sum(r^2) where
    r is the treatment indicator after removing unit means, period means,
    and adding back the grand mean.
    """
    x = pattern.treatment_indicator().astype(float)
    r = x - x.mean(axis=1, keepdims=True) - x.mean(axis=0, keepdims=True) + x.mean()
    denom = float((r * r).sum())
    if denom <= 1e-12:
        raise DegenerateDesignError(
            "tw: treatment indicator has no variation after removing unit and period means"
        )
    return ComparatorSpec(
        method="tw", obs_weights=(r / denom).ravel(), did_weights=None
    )


def _adopting_groups(pattern: AdoptionPattern) -> dict[int, list[int]]:
    """Adoption time -> 1-based units, never-treated excluded."""
    groups: dict[int, list[int]] = {}
    for i, t in enumerate(pattern.adoption, start=1):
        if t <= pattern.n_periods:
            groups.setdefault(t, []).append(i)
    if not groups:
        raise DegenerateDesignError("no unit ever adopts treatment")
    return groups


def cs_weights(pattern: AdoptionPattern, aggregation: str = "simple") -> ComparatorSpec:
    """Group-time effects with clean controls, aggregated four ways.

    The block for group g (adopting at g) in period t >= g averages the
    comparisons D[i, i', g-1, t] over group members i and controls i' that
    are still untreated at t.  Cells without any clean control are dropped
    with a warning.  Aggregation weights over the surviving cells:

    * ``simple``    proportional to group size,
    * ``dynamic``   equal across exposure buckets e = t - g + 1, equal within,
    * ``group``     equal across groups, equal across each group's cells,
    * ``calendar``  equal across periods, equal across each period's cells.
    """
    if aggregation not in CS_AGGREGATIONS:
        raise ValueError(
            f"unknown aggregation {aggregation!r}; choose from {CS_AGGREGATIONS}"
        )
    groups = _adopting_groups(pattern)
    n, j_max = pattern.n_units, pattern.n_periods
    cells = []  # (g, t, members, controls)
    dropped = []
    for g in sorted(groups):
        for t in range(g, j_max + 1):
            controls = [i for i, ti in enumerate(pattern.adoption, start=1) if ti > t]
            if controls:
                cells.append((g, t, groups[g], controls))
            else:
                dropped.append(f"group-time ({g},{t}) without clean controls")
    if not cells:
        raise DegenerateDesignError(
            "cs: no group-time cell has a not-yet-treated control"
        )

    if aggregation == "simple":
        total = sum(len(members) for _, _, members, _ in cells)
        agg = {(g, t): len(members) / total for g, t, members, _ in cells}
    elif aggregation == "dynamic":
        buckets: dict[int, list] = {}
        for g, t, *_ in cells:
            buckets.setdefault(t - g + 1, []).append((g, t))
        agg = {
            cell: 1.0 / (len(buckets) * len(members))
            for e, members in buckets.items()
            for cell in members
        }
        max_exposure = max(j_max - g + 1 for g in groups)
        for e in range(1, max_exposure + 1):
            if e not in buckets:
                dropped.append(f"exposure bucket e={e} left with no estimable cell")
    elif aggregation == "group":
        by_group: dict[int, list] = {}
        for g, t, *_ in cells:
            by_group.setdefault(g, []).append((g, t))
        agg = {
            cell: 1.0 / (len(by_group) * len(members))
            for g, members in by_group.items()
            for cell in members
        }
    else:  # calendar
        by_period: dict[int, list] = {}
        for g, t, *_ in cells:
            by_period.setdefault(t, []).append((g, t))
        agg = {
            cell: 1.0 / (len(by_period) * len(members))
            for t, members in by_period.items()
            for cell in members
        }

    w = np.zeros(n_did_rows(n, j_max))
    for g, t, members, controls in cells:
        share = agg[(g, t)] / (len(members) * len(controls))
        for i in members:
            for ip in controls:
                w[did_row_index(DIDIndex(i, ip, g - 1, t), n, j_max) - 1] += share
    return _finish(pattern, f"cs:{aggregation}", w, dropped)


def sa_weights(pattern: AdoptionPattern) -> ComparatorSpec:
    """Event-study contrasts using only the latest-adopting cohort as controls.

    For each period j' before the last cohort's adoption, every earlier
    adopter i contributes D[i, i', T_i - 1, j'] against each member i' of
    the last cohort, weighted equally across units within the period and
    equally across periods.
    """
    n, j_max = pattern.n_units, pattern.n_periods
    t_last = max(pattern.adoption)
    cohort = [i for i, t in enumerate(pattern.adoption, start=1) if t == t_last]
    earlier = [i for i, t in enumerate(pattern.adoption, start=1) if t < t_last]
    if not earlier:
        raise DegenerateDesignError("sa: all units adopt together; no control cohort")
    periods = [
        jp
        for jp in range(2, min(j_max, t_last - 1) + 1)
        if any(pattern.adoption[i - 1] <= jp for i in earlier)
    ]
    if not periods:
        raise DegenerateDesignError("sa: no treated period precedes the last cohort")
    w = np.zeros(n_did_rows(n, j_max))
    for jp in periods:
        switched = [i for i in earlier if pattern.adoption[i - 1] <= jp]
        share = 1.0 / (len(periods) * len(switched) * len(cohort))
        for i in switched:
            base = pattern.adoption[i - 1] - 1
            for ip in cohort:
                w[did_row_index(DIDIndex(i, ip, base, jp), n, j_max) - 1] += share
    return _finish(pattern, "sa", w)


def _switch_groups(pattern: AdoptionPattern):
    """Adoption times with their switchers and not-yet-treated controls."""
    groups = _adopting_groups(pattern)
    out = []
    for t in sorted(groups):
        controls = [i for i, ti in enumerate(pattern.adoption, start=1) if ti > t]
        out.append((t, groups[t], controls))
    return out


def ch_weights(pattern: AdoptionPattern) -> ComparatorSpec:
    """One-period switch contrasts averaged equally across adoption times.

    For each adoption time t, D[i, i', t-1, t] is averaged over switchers i
    (T_i = t) and not-yet-treated controls i' (T_i' > t); adoption times
    without controls are dropped with a warning.
    """
    n, j_max = pattern.n_units, pattern.n_periods
    eligible = [(t, s, c) for t, s, c in _switch_groups(pattern) if c]
    dropped = [
        f"adoption time t={t} without not-yet-treated controls"
        for t, _, c in _switch_groups(pattern)
        if not c
    ]
    if not eligible:
        raise DegenerateDesignError(
            "ch: no adoption time has a not-yet-treated control"
        )
    w = np.zeros(n_did_rows(n, j_max))
    for t, switchers, controls in eligible:
        share = 1.0 / (len(eligible) * len(switchers) * len(controls))
        for i in switchers:
            for ip in controls:
                w[did_row_index(DIDIndex(i, ip, t - 1, t), n, j_max) - 1] += share
    return _finish(pattern, "ch", w, dropped)


def co_weights(pattern: AdoptionPattern, variant: int = 1) -> ComparatorSpec:
    """Crossover estimators CO-1/2/3 over one-period switch contrasts.

    CO-1 weights adoption times equally (and so matches :func:`ch_weights`).
    CO-2 weights each adoption time by the harmonic mean of its switcher
    and control counts.  CO-3 enlarges the control pool with units already
    treated at t-1; those contrasts enter negatively because the switcher
    sits second in the comparison's canonical order.
    """
    if variant not in (1, 2, 3):
        raise ValueError(f"co variant must be 1, 2 or 3, got {variant!r}")
    n, j_max = pattern.n_units, pattern.n_periods
    w = np.zeros(n_did_rows(n, j_max))
    dropped = []

    if variant in (1, 2):
        eligible = [(t, s, c) for t, s, c in _switch_groups(pattern) if c]
        dropped = [
            f"adoption time t={t} without not-yet-treated controls"
            for t, _, c in _switch_groups(pattern)
            if not c
        ]
        if not eligible:
            raise DegenerateDesignError(
                f"co-{variant}: no adoption time has a not-yet-treated control"
            )
        if variant == 1:
            group_w = {t: 1.0 / len(eligible) for t, *_ in eligible}
        else:
            harmonic = {
                t: 2.0 * len(s) * len(c) / (len(s) + len(c)) for t, s, c in eligible
            }
            total = sum(harmonic.values())
            group_w = {t: h / total for t, h in harmonic.items()}
        for t, switchers, controls in eligible:
            share = group_w[t] / (len(switchers) * len(controls))
            for i in switchers:
                for ip in controls:
                    w[did_row_index(DIDIndex(i, ip, t - 1, t), n, j_max) - 1] += share
        return _finish(pattern, f"co-{variant}", w, dropped)

    cells = []
    for t, switchers, not_yet in _switch_groups(pattern):
        already = [
            i for i, ti in enumerate(pattern.adoption, start=1) if ti <= t - 1
        ]
        if not_yet or already:
            cells.append((t, switchers, not_yet, already))
        else:
            dropped.append(f"adoption time t={t} without any control")
    if not cells:
        raise DegenerateDesignError("co-3: no adoption time has any control")
    for t, switchers, not_yet, already in cells:
        share = 1.0 / (len(cells) * len(switchers) * (len(not_yet) + len(already)))
        for i in switchers:
            for ip in not_yet:
                w[did_row_index(DIDIndex(i, ip, t - 1, t), n, j_max) - 1] += share
            for ipp in already:
                # already-treated control: the switcher is the later unit, so
                # the row measures control minus switcher and enters negated
                w[did_row_index(DIDIndex(ipp, i, t - 1, t), n, j_max) - 1] -= share
    return _finish(pattern, "co-3", w, dropped)


def np_weights(pattern: AdoptionPattern, weighting: str = "equal") -> ComparatorSpec:
    """Within-period treated-minus-untreated contrasts (vertical comparisons).

    Periods with both treated and untreated units contribute the difference
    of group means; periods are combined with weights that are equal,
    proportional to the treated count, or proportional to the inverse of
    the equal-variance contrast variance 1/n1 + 1/n0.  These weights do not
    difference out unit effects, so no comparison-level representation
    exists; only observation weights are returned.
    """
    if weighting not in NP_WEIGHTINGS:
        raise ValueError(
            f"unknown weighting {weighting!r}; choose from {NP_WEIGHTINGS}"
        )
    x = pattern.treatment_indicator()
    n, j_max = pattern.n_units, pattern.n_periods
    n1 = x.sum(axis=0)
    eligible = [j for j in range(j_max) if 0 < n1[j] < n]
    if not eligible:
        raise DegenerateDesignError(
            "np: no period has both treated and untreated units"
        )
    dropped = [
        f"period {j + 1} with every unit treated (no within-period controls)"
        for j in range(j_max)
        if n1[j] == n
    ]
    if dropped:
        warnings.warn(f"np:{weighting}: dropped {', '.join(dropped)}", stacklevel=2)
    if weighting == "equal":
        raw = {j: 1.0 for j in eligible}
    elif weighting == "treated_prop":
        raw = {j: float(n1[j]) for j in eligible}
    else:
        raw = {j: 1.0 / (1.0 / n1[j] + 1.0 / (n - n1[j])) for j in eligible}
    total = sum(raw.values())
    obs = np.zeros((n, j_max))
    for j in eligible:
        alpha = raw[j] / total
        treated = x[:, j] == 1
        obs[treated, j] += alpha / n1[j]
        obs[~treated, j] -= alpha / (n - n1[j])
    return ComparatorSpec(
        method=f"np:{weighting}",
        obs_weights=obs.ravel(),
        did_weights=None,
        dropped=tuple(dropped),
    )
