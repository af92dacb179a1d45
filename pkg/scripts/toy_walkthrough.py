#!/usr/bin/env python3
"""Walk through the two-unit, three-period worked example.

Builds the comparison system for a design where unit 1 adopts in period 2
and unit 2 adopts in period 3, prints the A and F matrices, solves a few
estimands, and shows what an infeasible request looks like.  Everything is
closed-form small so the output doubles as a correctness spot check.
"""

from __future__ import annotations

import numpy as np

from gendid import (
    AdoptionPattern,
    InfeasibleEstimandError,
    build_f,
    build_m,
    build_system,
    count_types,
    parse_estimand,
    solve_min_variance,
)


def banner(text: str) -> None:
    print()
    print(text)
    print("-" * len(text))


def main() -> None:
    pattern = AdoptionPattern(2, 3, (2, 3))
    system = build_system(pattern)

    banner("Design")
    print(f"units: {pattern.n_units}, periods: {pattern.n_periods}, "
          f"adoption: {pattern.adoption}")
    print(f"two-by-two comparisons: {system.n_rows}")
    print(f"rank of A: {(pattern.n_units - 1) * (pattern.n_periods - 1)}")
    print(f"comparison type counts (types 1..6): {count_types(pattern)}")

    banner("A matrix (rows = comparisons, columns = unit-period cells)")
    print(system.a_float().astype(int))

    for setting in ("S5", "S4", "S3"):
        fmat = build_f(setting, pattern)
        banner(f"F matrix for {setting} (effects: {', '.join(fmat.catalog.labels())})")
        print(fmat.matrix)

    cov = build_m("independent", n_units=2, n_periods=3)

    banner("Minimum-variance weights, overall effect (S5)")
    fmat = build_f("S5", pattern)
    sol = solve_min_variance(system, fmat, parse_estimand("single", fmat.catalog), cov)
    print(f"comparison weights w: {np.round(sol.w, 6)}")
    print("observation weights o = A'w:")
    print(sol.obs_matrix())
    print(f"scaled variance o'Mo: {sol.scaled_variance:.6g}")
    print(sol.feasibility.report())

    banner("Exposure-profile estimands (S3)")
    fmat = build_f("S3", pattern)
    for expr in ("single:a=1", "avg:a=1..2"):
        sol = solve_min_variance(system, fmat, parse_estimand(expr, fmat.catalog), cov)
        print(f"{expr:>12}: o = {sol.obs_matrix().ravel()}, "
              f"variance = {sol.scaled_variance:.6g}")

    banner("An infeasible request (S4, period-3 effect)")
    fmat = build_f("S4", pattern)
    try:
        solve_min_variance(system, fmat, parse_estimand("single:j=3", fmat.catalog), cov)
    except InfeasibleEstimandError as exc:
        print(f"raised as expected: {exc}")
        print(exc.feasibility.report())


if __name__ == "__main__":
    main()
