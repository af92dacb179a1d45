"""Treatment-effect heterogeneity settings, effect catalogs, and estimands.

Each setting S1..S5 restricts how the effect of a treated cell (unit i,
period j, exposure a = j - T_i + 1) may vary:

======= ==================================== =====================
setting effect key                           interpretation
======= ==================================== =====================
S1      (i, j, a)                            unit x period specific
S2      (j, a)                               calendar x exposure
S3      (a,)                                 exposure time only
S4      (j,)                                 calendar time only
S5      ()                                   one common effect
======= ==================================== =====================

Under parallel trends plus a setting, every two-by-two comparison has
expectation equal to a small signed sum of effect keys: each of its four
cells contributes its key with the sign that cell carries in the comparison,
and untreated cells contribute nothing.  Collecting those rows gives the
K x m matrix F with E[d] = F theta, so a weight vector w estimates the
linear combination v = F' w of effects without bias.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Sequence

import numpy as np

from .didmat import iter_did_indices, n_did_rows
from .errors import EmptyEstimandError, NoTreatmentError
from .panel import AdoptionPattern

SETTINGS = ("S1", "S2", "S3", "S4", "S5")

# Membership of e_k in the span of F' columns is decided at this tolerance.
_SPAN_TOL = 1e-8


@dataclass(frozen=True)
class EffectKey:
    """Identifier of one treatment-effect parameter within a setting.

    Fields not used by the setting stay None; ``overall`` is the S5 key.
    """

    unit: int | None = None
    period: int | None = None
    exposure: int | None = None

    def sort_key(self) -> tuple[int, int, int]:
        return (self.unit or 0, self.period or 0, self.exposure or 0)

    def label(self) -> str:
        parts = []
        if self.unit is not None:
            parts.append(f"i={self.unit}")
        if self.period is not None:
            parts.append(f"j={self.period}")
        if self.exposure is not None:
            parts.append(f"a={self.exposure}")
        return ",".join(parts) if parts else "overall"

    def matches(self, unit=None, period=None, exposure=None) -> bool:
        """True when every given field agrees with this key."""
        if unit is not None and self.unit != unit:
            return False
        if period is not None and self.period != period:
            return False
        if exposure is not None and self.exposure != exposure:
            return False
        return True


def effect_key(setting: str, unit: int, period: int, adoption: int) -> EffectKey:
    """Key of the treated cell (unit, period) under a setting."""
    a = period - adoption + 1
    if setting == "S1":
        return EffectKey(unit=unit, period=period, exposure=a)
    if setting == "S2":
        return EffectKey(period=period, exposure=a)
    if setting == "S3":
        return EffectKey(exposure=a)
    if setting == "S4":
        return EffectKey(period=period)
    if setting == "S5":
        return EffectKey()
    raise ValueError(f"unknown setting {setting!r}; choose from {SETTINGS}")


@dataclass(frozen=True)
class ThetaCatalog:
    """Ordered effect keys of a (setting, design) pair with estimability flags.

    Keys are sorted lexicographically by (unit, period, exposure).  A key is
    flagged identifiable when a weight vector can isolate it without bias,
    i.e. its unit vector lies in the span of attainable expectation profiles;
    non-identifiable keys are retained so estimand coefficients stay honest.
    """

    setting: str
    n_units: int
    n_periods: int
    keys: tuple[EffectKey, ...]
    identifiable: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.keys)

    def index(self, key: EffectKey) -> int:
        try:
            return self.keys.index(key)
        except ValueError:
            raise KeyError(f"effect key {key.label()!r} not in {self.setting} catalog")

    def labels(self) -> tuple[str, ...]:
        return tuple(k.label() for k in self.keys)

    def find(self, unit=None, period=None, exposure=None) -> list[EffectKey]:
        """All keys whose given fields match."""
        return [
            k for k in self.keys if k.matches(unit=unit, period=period, exposure=exposure)
        ]

    def identifiable_keys(self) -> list[EffectKey]:
        return [k for k, ok in zip(self.keys, self.identifiable) if ok]


@dataclass(frozen=True)
class FMatrix:
    """Expected comparison values as a K x m integer-valued matrix.

    ``matrix[k, c]`` is the signed multiplicity of effect ``catalog.keys[c]``
    in comparison k; E[d] = matrix @ theta.  Rows of type-1 comparisons are
    zero and cancellations (same key entering twice with opposite sign)
    are already applied, so entries are small integers.
    """

    matrix: np.ndarray
    catalog: ThetaCatalog

    @property
    def setting(self) -> str:
        return self.catalog.setting

    @property
    def n_effects(self) -> int:
        return len(self.catalog)


def _catalog_keys(setting: str, pattern: AdoptionPattern) -> list[EffectKey]:
    keys = {
        effect_key(setting, i, j, pattern.adoption[i - 1])
        for i, j in pattern.treated_cells()
    }
    if not keys:
        raise NoTreatmentError("no unit is ever treated under this design")
    return sorted(keys, key=EffectKey.sort_key)


def build_f(setting: str, pattern: AdoptionPattern) -> FMatrix:
    """Build F for a setting and design, flagging identifiable keys.

    Each comparison row collects +1 for its treated (i, j') and (i', j)
    cells and -1 for its treated (i, j) and (i', j') cells, mapped onto the
    setting's keys.  The identifiability flag per key marks whether e_key is
    attainable as F' w for some weight vector w.
    """
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}; choose from {SETTINGS}")
    keys = _catalog_keys(setting, pattern)
    col = {k: c for c, k in enumerate(keys)}
    n_rows = n_did_rows(pattern.n_units, pattern.n_periods)
    f = np.zeros((n_rows, len(keys)), dtype=np.float64)
    adoption = pattern.adoption
    for k_row, idx in enumerate(iter_did_indices(pattern.n_units, pattern.n_periods)):
        for unit, period, sign in (
            (idx.i, idx.j_prime, 1.0),
            (idx.i, idx.j, -1.0),
            (idx.i_prime, idx.j_prime, -1.0),
            (idx.i_prime, idx.j, 1.0),
        ):
            t = adoption[unit - 1]
            if t <= period:
                f[k_row, col[effect_key(setting, unit, period, t)]] += sign

    identifiable = _identifiable_flags(f)
    catalog = ThetaCatalog(
        setting=setting,
        n_units=pattern.n_units,
        n_periods=pattern.n_periods,
        keys=tuple(keys),
        identifiable=identifiable,
    )
    return FMatrix(matrix=f, catalog=catalog)


def _identifiable_flags(f: np.ndarray) -> tuple[bool, ...]:
    """Flag columns whose unit vector lies in the span of F' w profiles.

    The attainable profiles {F' w} span the row space of F; e_k belongs to
    that span iff its residual against an orthonormal row-space basis
    vanishes.  A zero column is never identifiable, but nonzero columns can
    also fail (keys that only ever enter in differences with other keys).
    """
    m = f.shape[1]
    u, s, vt = np.linalg.svd(f, full_matrices=False)
    if s.size == 0:
        return tuple([False] * m)
    rank = int(np.sum(s > s[0] * max(f.shape) * 1e-12))
    basis = vt[:rank].T  # m x rank, orthonormal columns
    residual = np.eye(m) - basis @ basis.T
    return tuple(bool(np.linalg.norm(residual[:, c]) <= _SPAN_TOL) for c in range(m))


def enumerate_theta(setting: str, pattern: AdoptionPattern) -> ThetaCatalog:
    """Catalog of effect keys for a setting and design (see :func:`build_f`)."""
    return build_f(setting, pattern).catalog


@dataclass(frozen=True)
class EstimandSpec:
    """A linear combination of catalogued effects: target value = v' theta."""

    terms: tuple[tuple[EffectKey, float], ...]
    v: np.ndarray
    catalog: ThetaCatalog
    description: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.v, dtype=float)
        v.flags.writeable = False
        object.__setattr__(self, "v", v)


def estimand(
    terms: Iterable[tuple[EffectKey, float]],
    catalog: ThetaCatalog,
    description: str = "",
) -> EstimandSpec:
    """Assemble an estimand from (key, coefficient) terms.

    Unknown keys raise KeyError; an empty term list raises
    :class:`EmptyEstimandError`.  Coefficients on the same key accumulate.
    """
    terms = tuple(terms)
    if not terms:
        raise EmptyEstimandError("estimand needs at least one (key, coefficient) term")
    v = np.zeros(len(catalog))
    for key, coeff in terms:
        v[catalog.index(key)] += float(coeff)
    return EstimandSpec(terms=terms, v=v, catalog=catalog, description=description)


def single(catalog: ThetaCatalog, unit=None, period=None, exposure=None) -> EstimandSpec:
    """The one effect matching the given key fields, coefficient 1."""
    matches = catalog.find(unit=unit, period=period, exposure=exposure)
    if not matches:
        raise KeyError(
            f"no {catalog.setting} effect matches "
            f"unit={unit}, period={period}, exposure={exposure}"
        )
    if len(matches) > 1:
        raise KeyError(
            f"{len(matches)} {catalog.setting} effects match; a single estimand "
            "must pin down one key"
        )
    key = matches[0]
    return estimand([(key, 1.0)], catalog, description=f"single:{key.label()}")


def average(
    catalog: ThetaCatalog, keys: Sequence[EffectKey], description: str = ""
) -> EstimandSpec:
    """Equal-weight average of the given keys."""
    keys = list(keys)
    if not keys:
        raise EmptyEstimandError("average over an empty key set")
    w = 1.0 / len(keys)
    return estimand([(k, w) for k in keys], catalog, description=description)


def exposure_average(catalog: ThetaCatalog, lo: int, hi: int) -> EstimandSpec:
    """Equal-weight average of keys with exposure in [lo, hi]."""
    keys = [k for k in catalog.keys if k.exposure is not None and lo <= k.exposure <= hi]
    if not keys:
        raise KeyError(f"no {catalog.setting} keys with exposure in {lo}..{hi}")
    return average(catalog, keys, description=f"avg:a={lo}..{hi}")


def calendar_average(catalog: ThetaCatalog, lo: int, hi: int) -> EstimandSpec:
    """Equal-weight average of keys with period in [lo, hi]."""
    keys = [k for k in catalog.keys if k.period is not None and lo <= k.period <= hi]
    if not keys:
        raise KeyError(f"no {catalog.setting} keys with period in {lo}..{hi}")
    return average(catalog, keys, description=f"avg:j={lo}..{hi}")


def attw(catalog: ThetaCatalog) -> EstimandSpec:
    """Equal-weight average over every identifiable key in the catalog."""
    keys = catalog.identifiable_keys()
    if not keys:
        raise EmptyEstimandError("no identifiable effects in this catalog")
    return average(catalog, keys, description="attw")


def group_average(catalog: ThetaCatalog) -> EstimandSpec:
    """Adoption-group average built from identifiable (period, exposure) keys.

    Keys with period j and exposure a belong to the group adopting at
    j - a + 1.  Identifiable keys are averaged equally within each group and
    groups are averaged equally, so a key's coefficient is
    1 / (n_groups * group_size).
    """
    keys = [
        k
        for k, ok in zip(catalog.keys, catalog.identifiable)
        if ok and k.period is not None and k.exposure is not None
    ]
    if not keys:
        raise EmptyEstimandError(
            "group averages need identifiable keys with period and exposure"
        )
    groups: dict[int, list[EffectKey]] = {}
    for k in keys:
        groups.setdefault(k.period - k.exposure + 1, []).append(k)
    n_groups = len(groups)
    terms = []
    for members in groups.values():
        for k in members:
            terms.append((k, 1.0 / (n_groups * len(members))))
    return estimand(terms, catalog, description="grpavg")


def contrast(catalog: ThetaCatalog, plus: EffectKey, minus: EffectKey) -> EstimandSpec:
    """Difference of two effects, +1 on ``plus`` and -1 on ``minus``."""
    return estimand(
        [(plus, 1.0), (minus, -1.0)],
        catalog,
        description=f"contrast:({plus.label()})-({minus.label()})",
    )


_KEYPART = re.compile(r"^(i|j|a)=(-?\d+)$")


def _parse_key_parts(text: str) -> dict:
    """Parse 'j=4,a=2' into keyword arguments for catalog lookups."""
    fields = {"i": "unit", "j": "period", "a": "exposure"}
    out: dict = {}
    text = text.strip()
    if not text:
        return out
    for part in text.split(","):
        m = _KEYPART.match(part.strip())
        if not m:
            raise ValueError(f"cannot parse key part {part!r} (expected i=, j= or a=)")
        name, value = m.groups()
        if fields[name] in out:
            raise ValueError(f"duplicate key part {name!r}")
        out[fields[name]] = int(value)
    return out


def parse_estimand(expr: str, catalog: ThetaCatalog) -> EstimandSpec:
    """Parse the estimand mini-grammar against a catalog.

    Supported forms::

        single:j=4,a=2            one effect (field set must pin one key)
        avg:a=1..7                equal average over an exposure range
        avg:j=2..7                equal average over a calendar range
        attw                      equal average of all identifiable keys
        grpavg                    adoption-group average (S1/S2 catalogs)
        contrast:(j=4,a=2)-(j=4,a=1)
        (j=4,a=2=0.5;j=4,a=1=0.5) explicit key=coefficient list
    """
    expr = expr.strip()
    if not expr:
        raise ValueError("empty estimand expression")
    if expr == "attw":
        return attw(catalog)
    if expr == "grpavg":
        return group_average(catalog)
    if expr.startswith("single"):
        rest = expr[len("single") :]
        if rest.startswith(":"):
            rest = rest[1:]
        elif rest:
            raise ValueError(f"cannot parse estimand {expr!r}")
        parts = _parse_key_parts(rest)
        return single(catalog, **parts)
    if expr.startswith("avg:"):
        m = re.match(r"^avg:(j|a)=(-?\d+)\.\.(-?\d+)$", expr)
        if not m:
            raise ValueError(
                f"cannot parse {expr!r}; expected avg:a=LO..HI or avg:j=LO..HI"
            )
        dim, lo, hi = m.group(1), int(m.group(2)), int(m.group(3))
        if lo > hi:
            raise ValueError(f"empty range in {expr!r}")
        if dim == "a":
            return exposure_average(catalog, lo, hi)
        return calendar_average(catalog, lo, hi)
    if expr.startswith("contrast:"):
        m = re.match(r"^contrast:\(([^()]*)\)-\(([^()]*)\)$", expr)
        if not m:
            raise ValueError(
                f"cannot parse {expr!r}; expected contrast:(KEY)-(KEY)"
            )
        plus = single(catalog, **_parse_key_parts(m.group(1)))
        minus = single(catalog, **_parse_key_parts(m.group(2)))
        return contrast(catalog, plus.terms[0][0], minus.terms[0][0])
    if expr.startswith("(") and expr.endswith(")"):
        terms = []
        for entry in expr[1:-1].split(";"):
            entry = entry.strip()
            if not entry:
                continue
            key_text, _, coeff_text = entry.rpartition("=")
            if not key_text:
                raise ValueError(f"cannot parse list entry {entry!r}")
            try:
                coeff = float(coeff_text)
            except ValueError:
                raise ValueError(f"bad coefficient in list entry {entry!r}")
            matches = catalog.find(**_parse_key_parts(key_text))
            if len(matches) != 1:
                raise KeyError(
                    f"list entry {entry!r} matches {len(matches)} keys; need exactly 1"
                )
            terms.append((matches[0], coeff))
        return estimand(terms, catalog, description=expr)
    raise ValueError(f"cannot parse estimand expression {expr!r}")


# Collapse maps between nested settings: a finer setting's key determines the
# coarser key for every treated cell, so F_coarse = F_fine @ C.
_NESTS = {
    ("S1", "S2"): lambda k: EffectKey(period=k.period, exposure=k.exposure),
    ("S1", "S3"): lambda k: EffectKey(exposure=k.exposure),
    ("S1", "S4"): lambda k: EffectKey(period=k.period),
    ("S1", "S5"): lambda k: EffectKey(),
    ("S2", "S3"): lambda k: EffectKey(exposure=k.exposure),
    ("S2", "S4"): lambda k: EffectKey(period=k.period),
    ("S2", "S5"): lambda k: EffectKey(),
    ("S3", "S5"): lambda k: EffectKey(),
    ("S4", "S5"): lambda k: EffectKey(),
}


def collapse_matrix(fine: ThetaCatalog, coarse: ThetaCatalog) -> np.ndarray:
    """0/1 matrix C mapping fine keys onto coarse keys (F_coarse = F_fine @ C)."""
    try:
        mapper = _NESTS[(fine.setting, coarse.setting)]
    except KeyError:
        raise ValueError(f"{fine.setting} does not nest inside {coarse.setting}")
    c = np.zeros((len(fine), len(coarse)))
    for r, key in enumerate(fine.keys):
        c[r, coarse.index(mapper(key))] = 1.0
    return c


def expectation_profile(
    w: np.ndarray, setting: str, pattern: AdoptionPattern
) -> tuple[ThetaCatalog, np.ndarray]:
    """Coefficients F' w that a DID-weight vector places on each effect key.

    An estimator with DID weights w is unbiased for v' theta under the
    setting exactly when this profile equals v.
    """
    fmat = build_f(setting, pattern)
    w = np.asarray(w, dtype=float)
    if w.shape != (fmat.matrix.shape[0],):
        raise ValueError(
            f"weight vector has shape {w.shape}; expected ({fmat.matrix.shape[0]},)"
        )
    return fmat.catalog, fmat.matrix.T @ w


@dataclass(frozen=True)
class ObsProfile:
    """Implied estimand and nuisance loadings of observation-space weights.

    ``coefficients[k]`` is the weight the estimator places on effect key
    ``catalog.keys[k]``.  ``unit_loadings`` and ``period_loadings`` are the
    per-unit and per-period sums of the observation weights; both must be
    zero for the estimator to be free of unit and period nuisance effects.
    """

    catalog: ThetaCatalog
    coefficients: np.ndarray
    unit_loadings: np.ndarray
    period_loadings: np.ndarray

    @property
    def max_unit_loading(self) -> float:
        return float(np.abs(self.unit_loadings).max())

    @property
    def max_period_loading(self) -> float:
        return float(np.abs(self.period_loadings).max())


def obs_expectation_profile(
    o: np.ndarray, setting: str, pattern: AdoptionPattern
) -> ObsProfile:
    """Audit observation-space weights against a treatment-effect setting.

    Under outcome means "unit effect + period effect + theta_key on treated
    cells", an estimator o' y has expectation

        sum_i (row sum of o)_i * unit_i
        + sum_j (column sum of o)_j * period_j
        + sum_k coefficients[k] * theta_k,

    so unbiasedness for v' theta needs coefficients == v and zero unit and
    period loadings.
    """
    o = np.asarray(o, dtype=float)
    n, j = pattern.n_units, pattern.n_periods
    if o.shape == (n * j,):
        o = o.reshape(n, j)
    if o.shape != (n, j):
        raise ValueError(f"weights have shape {o.shape}; expected ({n}, {j})")
    catalog = enumerate_theta(setting, pattern)
    coeff = np.zeros(len(catalog))
    for i, p in pattern.treated_cells():
        key = effect_key(setting, i, p, pattern.adoption[i - 1])
        coeff[catalog.index(key)] += o[i - 1, p - 1]
    return ObsProfile(
        catalog=catalog,
        coefficients=coeff,
        unit_loadings=o.sum(axis=1),
        period_loadings=o.sum(axis=0),
    )
