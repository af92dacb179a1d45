"""Point estimates and randomization inference for weighted DID estimators.

The point estimate is the inner product of fixed observation weights with
the flattened panel.  Inference re-randomizes which unit received which
adoption sequence: outcome rows are permuted against the fixed design and
weights, mirroring the randomization actually performed in a staggered
rollout.  The reported p-value adds one to both tally and denominator so it
is valid at any number of draws and never returns zero.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from math import exp

import numpy as np

from .errors import CovarianceParamError, DegenerateDesignError, DimensionError
from .panel import PanelData
from .solver import WeightSolution

SIDES = ("two", "left", "right")


@dataclass(frozen=True)
class EstimateResult:
    """A point estimate with optional randomization inference attached.

    Attributes
    ----------
    point : float
        Weighted combination of observed outcomes (on the transformed scale
        when the panel was transformed).
    back_transformed : float or None
        exp(point) for log or logit panels: a rate/risk ratio or odds
        ratio respectively.  None for identity panels.
    perm_p : float or None
        Add-one permutation p-value; None when no test was run.
    n_perm : int
        Number of permutation draws behind ``perm_p``.
    sided : str
        "two", "left" or "right".
    seed : int or None
        Seed that keyed the permutation streams.
    null_draws : numpy.ndarray or None
        The permuted statistics when requested.
    plug_in_var : float or None
        o' V o under a supplied covariance, when requested.
    """

    point: float
    back_transformed: float | None = None
    perm_p: float | None = None
    n_perm: int = 0
    sided: str = "two"
    seed: int | None = None
    null_draws: np.ndarray | None = None
    plug_in_var: float | None = None


def _check_dims(sol: WeightSolution, panel: PanelData) -> None:
    if (sol.n_units, sol.n_periods) != (
        panel.pattern.n_units,
        panel.pattern.n_periods,
    ):
        raise DimensionError(
            f"weights built for {sol.n_units}x{sol.n_periods}, "
            f"panel is {panel.pattern.n_units}x{panel.pattern.n_periods}"
        )


def point_estimate(sol: WeightSolution, panel: PanelData) -> float:
    """Inner product of observation weights with the flattened outcomes."""
    _check_dims(sol, panel)
    return float(sol.obs_weights @ panel.y)


def back_transform(point: float, transform: str) -> float:
    """Map an estimate on the transformed scale back to a ratio.

    log and logit panels return exp(point) (rate/risk ratio, odds ratio);
    identity panels return the difference unchanged.
    """
    if transform in ("log", "logit"):
        return exp(point)
    if transform == "identity":
        return point
    raise ValueError(f"unknown transform {transform!r}")


def plug_in_variance(sol: WeightSolution, vhat: np.ndarray) -> float:
    """Variance o' V o of the estimator under a supplied covariance V."""
    vhat = np.asarray(vhat, dtype=float)
    n = sol.obs_weights.size
    if vhat.shape != (n, n):
        raise DimensionError(f"covariance is {vhat.shape}; expected ({n}, {n})")
    if not np.allclose(vhat, vhat.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(vhat).max())):
        raise CovarianceParamError("plug-in covariance is not symmetric")
    return float(sol.obs_weights @ vhat @ sol.obs_weights)


def _perm_seeds(seed: int, indices: range) -> list[np.random.SeedSequence]:
    # Child streams keyed by (seed, draw index): identical in serial and
    # parallel runs, and equal to SeedSequence(seed).spawn(n)[i].
    return [np.random.SeedSequence(entropy=seed, spawn_key=(i,)) for i in indices]


def _permuted_stats(score: np.ndarray, seed: int, indices: range) -> np.ndarray:
    n_units = score.shape[0]
    out = np.empty(len(indices))
    for pos, ss in enumerate(_perm_seeds(seed, indices)):
        perm = np.random.default_rng(ss).permutation(n_units)
        out[pos] = score[np.arange(n_units), perm].sum()
    return out


def _permuted_stats_chunk(args) -> np.ndarray:
    score, seed, start, stop = args
    return _permuted_stats(score, seed, range(start, stop))


def permutation_p(null_draws: np.ndarray, observed: float, sided: str) -> float:
    """Add-one p-value of ``observed`` within its permutation draws."""
    if sided == "two":
        hits = np.sum(np.abs(null_draws) >= abs(observed))
    elif sided == "left":
        hits = np.sum(null_draws <= observed)
    elif sided == "right":
        hits = np.sum(null_draws >= observed)
    else:
        raise ValueError(f"sided must be one of {SIDES}, got {sided!r}")
    return float(1 + hits) / float(len(null_draws) + 1)


def permutation_test(
    sol: WeightSolution,
    panel: PanelData,
    n_perm: int,
    seed: int,
    sided: str = "two",
    keep_null: bool = False,
    workers: int = 1,
) -> EstimateResult:
    """Randomization test of the sharp null of no treatment effect.

    Holding the design and weight vector fixed, outcome rows are permuted
    across units ``n_perm`` times; each draw's statistic comes from its own
    RNG stream keyed by (seed, draw index), so results are bit-identical
    for any worker count.

    Parameters
    ----------
    sol : WeightSolution
        Fixed weights for the canonical design.
    panel : PanelData
        Observed panel in canonical order.
    n_perm : int
        Number of permutation draws (at least 1).
    seed : int
        Base seed for the draw streams.
    sided : {"two", "left", "right"}
        Tail(s) of the test; "left" counts draws <= the observed statistic.
    keep_null : bool
        Attach the permuted statistics to the result.
    workers : int
        Process count for the draws; 1 runs in-process.
    """
    _check_dims(sol, panel)
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    if sided not in SIDES:
        raise ValueError(f"sided must be one of {SIDES}, got {sided!r}")
    if len(set(panel.pattern.adoption)) < 2:
        raise DegenerateDesignError(
            "all units share one adoption time; permuting rows cannot form a reference distribution"
        )
    obs_mat = sol.obs_matrix()
    # score[i, k]: contribution when unit row k's outcomes land on design row i
    score = obs_mat @ panel.outcomes.T
    observed = float(np.trace(score))

    if workers > 1:
        bounds = np.linspace(0, n_perm, workers + 1).astype(int)
        chunks = [
            (score, seed, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_permuted_stats_chunk, chunks))
        null_draws = np.concatenate(parts)
    else:
        null_draws = _permuted_stats(score, seed, range(n_perm))

    p = permutation_p(null_draws, observed, sided)
    transform = panel.transform_applied
    return EstimateResult(
        point=observed,
        back_transformed=(
            back_transform(observed, transform) if transform != "identity" else None
        ),
        perm_p=p,
        n_perm=n_perm,
        sided=sided,
        seed=seed,
        null_draws=null_draws if keep_null else None,
    )


def estimate_only(sol: WeightSolution, panel: PanelData) -> EstimateResult:
    """Point estimate without inference."""
    point = point_estimate(sol, panel)
    transform = panel.transform_applied
    return EstimateResult(
        point=point,
        back_transformed=(
            back_transform(point, transform) if transform != "identity" else None
        ),
    )
