"""Shared fixtures: the worked 2x3 design, the 14x8 rollout, panel factories."""

from __future__ import annotations

import numpy as np
import pytest

from gendid import AdoptionPattern, PanelData, build_system
from gendid.simulate import SWT_ADOPTION


@pytest.fixture(scope="session")
def toy_pattern() -> AdoptionPattern:
    """Two units over three periods, adopting at periods 2 and 3."""
    return AdoptionPattern(2, 3, (2, 3))


@pytest.fixture(scope="session")
def toy_system(toy_pattern):
    return build_system(toy_pattern)


@pytest.fixture(scope="session")
def swt_pattern() -> AdoptionPattern:
    """Fourteen clusters over eight periods, two adopting per period from 2 on."""
    return AdoptionPattern(14, 8, SWT_ADOPTION)


@pytest.fixture(scope="session")
def swt_system(swt_pattern):
    return build_system(swt_pattern)


@pytest.fixture
def panel_factory():
    """Build a PanelData with additive unit/period effects plus cell effects.

    ``theta(i, j)`` gives the treated-cell effect; untreated cells get zero.
    Noiseless by default so estimates can be checked exactly.
    """

    def make(
        pattern: AdoptionPattern,
        theta=lambda i, j: 0.0,
        unit_effects=None,
        period_effects=None,
        noise_sd: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> PanelData:
        n, jmax = pattern.n_units, pattern.n_periods
        rng = rng or np.random.default_rng(0)
        u = np.asarray(unit_effects) if unit_effects is not None else rng.normal(size=n)
        p = (
            np.asarray(period_effects)
            if period_effects is not None
            else rng.normal(size=jmax)
        )
        y = u[:, None] + p[None, :]
        for i, j in pattern.treated_cells():
            y[i - 1, j - 1] += theta(i, j)
        if noise_sd:
            y = y + rng.normal(0.0, noise_sd, size=y.shape)
        labels = tuple(f"u{i}" for i in range(1, n + 1))
        return PanelData(pattern=pattern, outcomes=y, unit_labels=labels)

    return make


def random_pattern(
    rng: np.random.Generator,
    max_units: int = 6,
    max_periods: int = 6,
    allow_never: bool = True,
    min_distinct: int = 1,
) -> AdoptionPattern:
    """A random staggered design with at least one treated cell."""
    while True:
        n = int(rng.integers(2, max_units + 1))
        j = int(rng.integers(2, max_periods + 1))
        choices = list(range(2, j + 1)) + ([j + 1] if allow_never else [])
        times = sorted(int(rng.choice(choices)) for _ in range(n))
        if all(t == j + 1 for t in times):
            continue
        if len(set(times)) < min_distinct:
            continue
        return AdoptionPattern(n, j, tuple(times))
