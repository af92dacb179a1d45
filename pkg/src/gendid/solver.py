"""Minimum-variance unbiased weights for DID comparisons.

A weight vector w over the K comparisons estimates v' theta without bias
exactly when F' w = v.  Among all such w this module minimises the working
variance w' (A M A') w by a null-space parameterisation:

* w0 is the minimum-norm solution of F' w = v (SVD pseudo-inverse),
* Z holds an orthonormal basis of the null space of F',
* with M = L L', the variance of w = w0 + Z c is ||L' A' (w0 + Z c)||^2,
  a linear least-squares problem in c whose minimum-norm solution picks
  the minimum-norm w* among all variance minimisers.

Observation weights o = A' w* are the estimator's fingerprint: every
feasible w with the same objective value shares them whenever the
comparison-level solution set only moves along null directions of A'.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .assumptions import EstimandSpec, FMatrix
from .covariance import WorkingCovariance
from .didmat import DIDSystem
from .errors import (
    DegenerateVarianceError,
    DimensionError,
    InfeasibleEstimandError,
    NumericalError,
)

# Singular values below RANK_RTOL * s_max * max(shape) count as zero.
RANK_RTOL = 1e-10

# The solved weights must satisfy the unbiasedness constraint this tightly.
CONSTRAINT_TOL = 1e-8


class FeasibilityClass(str, Enum):
    INFEASIBLE = "infeasible"
    UNIQUE = "unique"
    UNDERDETERMINED = "underdetermined"


@dataclass(frozen=True)
class Feasibility:
    """Solvability report for the constraint F' w = v.

    Attributes
    ----------
    classification : FeasibilityClass
        ``infeasible`` when no unbiased weights exist, ``unique`` when
        exactly one w satisfies the constraint, ``underdetermined`` otherwise.
    rank_f, rank_f_aug : int
        Rank of F' and of the augmented matrix [F' | v].
    n_weights : int
        Number of comparisons K (length of w).
    w_nullity : int
        Dimension of the w-space solution set, K - rank_f.
    free_dim : int or None
        For underdetermined systems, the number of genuinely distinct
        unbiased estimators: the solution set modulo null directions of A',
        equal to (N-1)(J-1) - rank_f.  Zero means every feasible w yields
        the same observation weights.
    """

    classification: FeasibilityClass
    rank_f: int
    rank_f_aug: int
    n_weights: int
    w_nullity: int
    free_dim: int | None

    def report(self) -> str:
        lines = [
            f"constraint rank: {self.rank_f}",
            f"augmented rank:  {self.rank_f_aug}",
            f"weight vector length: {self.n_weights}",
        ]
        if self.classification is FeasibilityClass.INFEASIBLE:
            lines.append(
                "no unbiased weight vector exists for this estimand "
                "(augmented rank exceeds constraint rank)"
            )
        elif self.classification is FeasibilityClass.UNIQUE:
            lines.append("the unbiased weight vector is unique")
        else:
            lines.append(
                f"unbiased weights form a {self.w_nullity}-dimensional family; "
                f"{self.free_dim} dimension(s) change the estimator itself"
            )
        return "\n".join(lines)


@dataclass(frozen=True)
class WeightSolution:
    """Minimum-variance unbiased weights and their diagnostics."""

    w: np.ndarray
    obs_weights: np.ndarray
    scaled_variance: float
    feasibility: Feasibility
    constraint_residual: float
    v: np.ndarray
    n_units: int
    n_periods: int

    def obs_matrix(self) -> np.ndarray:
        """Observation weights reshaped to N x J."""
        return self.obs_weights.reshape(self.n_units, self.n_periods)


def _rank_from_singular_values(s: np.ndarray, shape: tuple[int, int]) -> int:
    if s.size == 0:
        return 0
    tol = RANK_RTOL * float(s[0]) * max(shape)
    return int(np.sum(s > tol))


def feasibility(fmat: FMatrix, v: np.ndarray | EstimandSpec) -> Feasibility:
    """Classify the constraint system F' w = v without solving it."""
    if isinstance(v, EstimandSpec):
        v = v.v
    v = np.asarray(v, dtype=float)
    ft = fmat.matrix.T
    m, k = ft.shape
    if v.shape != (m,):
        raise DimensionError(f"v has shape {v.shape}; expected ({m},)")
    s = np.linalg.svd(ft, compute_uv=False)
    rank_f = _rank_from_singular_values(s, ft.shape)
    s_aug = np.linalg.svd(np.column_stack([ft, v]), compute_uv=False)
    rank_aug = _rank_from_singular_values(s_aug, (m, k + 1))
    n, j = fmat.catalog.n_units, fmat.catalog.n_periods
    if rank_aug > rank_f:
        cls, free = FeasibilityClass.INFEASIBLE, None
    elif rank_f == k:
        cls, free = FeasibilityClass.UNIQUE, None
    else:
        cls, free = FeasibilityClass.UNDERDETERMINED, (n - 1) * (j - 1) - rank_f
    return Feasibility(
        classification=cls,
        rank_f=rank_f,
        rank_f_aug=rank_aug,
        n_weights=k,
        w_nullity=k - rank_f,
        free_dim=free,
    )


def solve_min_variance(
    system: DIDSystem,
    fmat: FMatrix,
    est: EstimandSpec | np.ndarray,
    cov: WorkingCovariance,
) -> WeightSolution:
    """Minimise w' (A M A') w subject to F' w = v.

    Parameters
    ----------
    system : DIDSystem
        Supplies the dense A matrix.
    fmat : FMatrix
        Expectation matrix for the chosen setting on the same design.
    est : EstimandSpec or array
        Target coefficients v over the catalog keys.
    cov : WorkingCovariance
        Working covariance M of the flattened outcomes.

    Raises
    ------
    InfeasibleEstimandError
        When no unbiased weight vector exists (carries the rank report).
    """
    v = est.v if isinstance(est, EstimandSpec) else np.asarray(est, dtype=float)
    feas = feasibility(fmat, v)
    if feas.classification is FeasibilityClass.INFEASIBLE:
        raise InfeasibleEstimandError(
            "no unbiased weight vector exists for this estimand",
            feasibility=feas,
        )
    a = system.a_float()
    n_obs = a.shape[1]
    if cov.matrix.shape != (n_obs, n_obs):
        raise DimensionError(
            f"covariance is {cov.matrix.shape}, design has {n_obs} observations"
        )

    ft = fmat.matrix.T
    u, s, vt = np.linalg.svd(ft, full_matrices=True)
    r = feas.rank_f
    w0 = vt[:r].T @ ((u[:, :r].T @ v) / s[:r]) if r else np.zeros(ft.shape[1])

    if feas.w_nullity:
        z = vt[r:].T  # K x nullity, orthonormal columns
        lt_at = cov.factor().T @ a.T  # objective factor: variance = ||lt_at w||^2
        g = lt_at @ z
        g0 = lt_at @ w0
        # Least squares for the null-space coefficients, zeroing directions
        # whose effect on the estimator is negligible: the cutoff is relative
        # to g's spectrum but floored at the objective operator's own scale,
        # because null directions of A' also lie in z and must get c = 0
        # (keeping w minimum-norm) rather than blow up the solve.
        gu, gs, gvt = np.linalg.svd(g, full_matrices=False)
        gs_max = float(gs[0]) if gs.size else 0.0
        cutoff = max(
            np.finfo(float).eps * max(g.shape) * gs_max,
            1e-14 * float(np.linalg.norm(lt_at)),
        )
        keep = gs > cutoff
        c = gvt[keep].T @ ((gu[:, keep].T @ -g0) / gs[keep])
        w = w0 + z @ c
    else:
        w = w0

    residual = float(np.max(np.abs(ft @ w - v))) if v.size else 0.0
    if residual > CONSTRAINT_TOL * (1.0 + float(np.max(np.abs(v), initial=0.0))):
        raise NumericalError(
            f"solved weights violate the unbiasedness constraint (residual {residual:.3e})"
        )
    obs = a.T @ w
    var = float(obs @ cov.matrix @ obs)
    return WeightSolution(
        w=w,
        obs_weights=obs,
        scaled_variance=var,
        feasibility=feas,
        constraint_residual=residual,
        v=v,
        n_units=system.pattern.n_units,
        n_periods=system.pattern.n_periods,
    )


def scaled_variance(w: np.ndarray, a_matrix: np.ndarray, m_matrix: np.ndarray) -> float:
    """Working variance w' (A M A') w of a comparison-weight vector."""
    w = np.asarray(w, dtype=float)
    a = np.asarray(a_matrix, dtype=float)
    if w.shape != (a.shape[0],):
        raise DimensionError(f"w has shape {w.shape}; A has {a.shape[0]} rows")
    obs = a.T @ w
    return float(obs @ np.asarray(m_matrix, dtype=float) @ obs)


def obs_scaled_variance(obs_weights: np.ndarray, m_matrix: np.ndarray) -> float:
    """Working variance o' M o of an observation-weight vector."""
    obs = np.asarray(obs_weights, dtype=float)
    return float(obs @ np.asarray(m_matrix, dtype=float) @ obs)


def relative_efficiency(a: WeightSolution, b: WeightSolution) -> float:
    """Variance ratio scaled_variance(a) / scaled_variance(b) under a shared M."""
    if b.scaled_variance <= 0.0:
        raise DegenerateVarianceError("reference solution has zero scaled variance")
    return a.scaled_variance / b.scaled_variance
