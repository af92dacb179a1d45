"""Working covariance models for the NJ observations.

The weight solver only needs the covariance of the flattened outcome vector
up to scale.  Supported structures are block-diagonal by unit with a common
within-unit correlation pattern:

* ``independent``   identity blocks,
* ``exchangeable``  constant off-diagonal correlation rho,
* ``ar1``           correlation rho**|j - j'| between periods j, j',
* ``custom``        a user-supplied NJ x NJ symmetric PSD matrix.

Relative standard deviations per observation (``rel_var``) sandwich the
correlation matrix: M = diag(rel_var) @ M_r @ diag(rel_var).  Optimal weights
are invariant to the overall scale of M.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from .errors import CovarianceParamError, DimensionError

STRUCTURES = ("independent", "exchangeable", "ar1", "custom")

# A matrix is accepted as PSD when its smallest eigenvalue is no more
# negative than -PSD_RTOL times its largest.
PSD_RTOL = 1e-10


@dataclass(frozen=True)
class WorkingCovariance:
    """An NJ x NJ working covariance with its generating parameters."""

    structure: str
    n_units: int
    n_periods: int
    matrix: np.ndarray
    rho: float | None = None
    rel_var: np.ndarray | None = None

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float)
        n = self.n_units * self.n_periods
        if m.shape != (n, n):
            raise DimensionError(
                f"covariance shape {m.shape} does not match NJ={n}"
            )
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-10 * max(1.0, np.abs(m).max())):
            raise CovarianceParamError("covariance matrix is not symmetric")
        eigs = np.linalg.eigvalsh(m)
        if eigs[0] < -PSD_RTOL * max(eigs[-1], 1e-300):
            raise CovarianceParamError(
                f"covariance is not positive semidefinite (min eigenvalue {eigs[0]:.3e})"
            )
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def factor(self) -> np.ndarray:
        """An NJ x NJ factor L with M = L @ L.T (eigenvalue based, PSD-safe)."""
        eigvals, eigvecs = np.linalg.eigh(self.matrix)
        eigvals = np.clip(eigvals, 0.0, None)
        return eigvecs * np.sqrt(eigvals)[None, :]


def _unit_block(structure: str, rho: float, n_periods: int) -> np.ndarray:
    if structure == "independent":
        return np.eye(n_periods)
    if structure == "exchangeable":
        lo = -1.0 / (n_periods - 1)
        if not lo <= rho < 1.0:
            raise CovarianceParamError(
                f"exchangeable rho must lie in [{lo:.6g}, 1), got {rho}"
            )
        return (1.0 - rho) * np.eye(n_periods) + rho * np.ones((n_periods, n_periods))
    if structure == "ar1":
        if not -1.0 < rho < 1.0:
            raise CovarianceParamError(f"ar1 rho must lie in (-1, 1), got {rho}")
        idx = np.arange(n_periods)
        return rho ** np.abs(idx[:, None] - idx[None, :])
    raise CovarianceParamError(
        f"unknown structure {structure!r}; choose from {STRUCTURES}"
    )


def build_m(
    structure: str,
    rho: float = 0.0,
    rel_var: np.ndarray | None = None,
    *,
    n_units: int,
    n_periods: int,
) -> WorkingCovariance:
    """Build a block-diagonal working covariance.

    Parameters
    ----------
    structure : {"independent", "exchangeable", "ar1"}
    rho : float
        Within-unit correlation parameter; ignored for ``independent``.
    rel_var : array_like or None
        NJ relative standard deviations (default all ones); must be positive.
    n_units, n_periods : int
        Panel dimensions.
    """
    n = n_units * n_periods
    if rel_var is None:
        scale = np.ones(n)
    else:
        scale = np.asarray(rel_var, dtype=float).ravel()
        if scale.shape != (n,):
            raise DimensionError(
                f"rel_var has {scale.size} entries; expected NJ={n}"
            )
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            raise CovarianceParamError("rel_var entries must be positive and finite")
    block = _unit_block(structure, rho, n_periods)
    corr = np.kron(np.eye(n_units), block)
    matrix = corr * np.outer(scale, scale)
    return WorkingCovariance(
        structure=structure,
        n_units=n_units,
        n_periods=n_periods,
        matrix=matrix,
        rho=None if structure == "independent" else float(rho),
        rel_var=scale,
    )


def from_matrix(
    matrix: np.ndarray, n_units: int, n_periods: int
) -> WorkingCovariance:
    """Wrap a user-supplied NJ x NJ symmetric PSD matrix."""
    return WorkingCovariance(
        structure="custom",
        n_units=n_units,
        n_periods=n_periods,
        matrix=np.asarray(matrix, dtype=float),
    )


def load_custom_m(
    source: str | Path | IO[str], n_units: int, n_periods: int
) -> WorkingCovariance:
    """Read a custom covariance from a headerless CSV of NJ x NJ numbers."""
    matrix = np.loadtxt(source, delimiter=",", ndmin=2)
    return from_matrix(matrix, n_units, n_periods)


def load_rel_var(source: str | Path | IO[str], n_units: int, n_periods: int) -> np.ndarray:
    """Read NJ relative standard deviations from a headerless CSV."""
    values = np.loadtxt(source, delimiter=",").ravel()
    n = n_units * n_periods
    if values.size != n:
        raise DimensionError(f"rel_var file has {values.size} entries; expected {n}")
    return values
