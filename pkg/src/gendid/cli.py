"""Command line interface.

Subcommands
-----------
design    inspect a rollout: comparison counts, rank, type census, A export
weights   solve for minimum-variance unbiased weights and export them
estimate  weights + panel data: point estimate and randomization p-value
compare   run comparison estimators on a panel and audit their weights
simulate  run the scenario study and write a summary table

Conventions shared by every subcommand: floating point numbers are printed
with 12 significant digits, output bytes depend only on the inputs and the
seed (no timestamps or machine identifiers), and exit codes are

    0  success
    2  configuration problem (bad flag, bad config file, unknown name)
    3  estimand infeasible on the design (a rank report is printed)
    4  data problem (unreadable, unbalanced or non-finite panel)
    5  numerical failure downstream of a well-posed configuration
"""

from __future__ import annotations

import configparser
import csv
import functools
import json
import re
import sys
from pathlib import Path

import click

from . import comparators
from .assumptions import (
    SETTINGS,
    build_f,
    obs_expectation_profile,
    parse_estimand,
)
from .covariance import build_m, load_custom_m, load_rel_var
from .didmat import TYPE_NAMES, build_system, count_types, iter_did_indices
from .errors import (
    BalancedPanelError,
    DegenerateDesignError,
    DegenerateVarianceError,
    GenDIDError,
    InfeasibleEstimandError,
    NumericalError,
    PeriodIndexError,
    TransformDomainError,
    UnsupportedEstimatorError,
)
from .estimate import _permuted_stats, estimate_only, permutation_p, permutation_test
from .panel import NEVER, TRANSFORMS, AdoptionPattern, PanelData, load_panel
from .simulate import run_study, scenario, scenario_from_mapping
from .solver import solve_min_variance

DEFAULT_SEED = 1729

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DATA = 4
EXIT_NUMERICAL = 5

_DATA_ERRORS = (BalancedPanelError, PeriodIndexError, TransformDomainError)
_NUMERICAL_ERRORS = (NumericalError, DegenerateDesignError, DegenerateVarianceError)


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def _handled(fn):
    """Map library exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InfeasibleEstimandError as exc:
            click.echo(str(exc), err=True)
            if exc.feasibility is not None:
                click.echo(exc.feasibility.report(), err=True)
            sys.exit(EXIT_INFEASIBLE)
        except _DATA_ERRORS as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except OSError as exc:
            click.echo(f"cannot read input: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except _NUMERICAL_ERRORS as exc:
            click.echo(f"numerical error: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except (GenDIDError, ValueError, KeyError, configparser.Error) as exc:
            message = exc.args[0] if exc.args else exc
            click.echo(f"configuration error: {message}", err=True)
            sys.exit(EXIT_CONFIG)

    return wrapper


def _parse_adoption(text: str, n_periods: int) -> tuple[int, ...]:
    vals = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        vals.append(n_periods + 1 if part.lower() == NEVER else int(part))
    if not vals:
        raise ValueError("adoption list is empty")
    return tuple(sorted(vals))


def _resolve_design(
    panel_path: str | None,
    adoption: str | None,
    n_periods: int | None,
    transform: str,
    fmt: str,
) -> tuple[AdoptionPattern, PanelData | None]:
    """Design from a panel file (canonical order) or from explicit flags."""
    if panel_path is not None:
        source = sys.stdin if panel_path == "-" else panel_path
        panel = load_panel(source, format=fmt, transform=transform)
        return panel.pattern, panel
    if adoption is None or n_periods is None:
        raise ValueError("need either --panel or both --adoption and --n-periods")
    times = _parse_adoption(adoption, n_periods)
    return AdoptionPattern(len(times), n_periods, times), None


def _covariance(cov: str, rho: float, rel_var_path: str | None, n: int, j: int):
    """Build the working covariance from the --cov/--rho/--rel-var flags."""
    if cov.startswith("custom:"):
        path = cov.split(":", 1)[1]
        if not path:
            raise ValueError("--cov custom:<path> needs a file path")
        return load_custom_m(path, n, j)
    if cov == "custom":
        raise ValueError("--cov custom needs a path: custom:<path>")
    rel = load_rel_var(rel_var_path, n, j) if rel_var_path else None
    return build_m(cov, rho=rho, rel_var=rel, n_units=n, n_periods=j)


def _write_rows(path: str | None, header: list[str], rows) -> None:
    """CSV with deterministic bytes; '-' or None streams to stdout."""
    if path is None or path == "-":
        handle = sys.stdout
        close = False
    else:
        handle = open(path, "w", newline="")
        close = True
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if close:
            handle.close()


def _round_floats(obj):
    if isinstance(obj, float):
        return float(_fmt(obj))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def _emit_json(payload: dict, path: str | None) -> None:
    text = json.dumps(_round_floats(payload), indent=2) + "\n"
    if path is None or path == "-":
        click.echo(text, nl=False)
    else:
        Path(path).write_text(text)


def _unit_names(pattern: AdoptionPattern, panel: PanelData | None) -> list[str]:
    if panel is not None:
        return list(panel.unit_labels)
    return [f"u{i:02d}" for i in range(1, pattern.n_units + 1)]


_design_options = [
    click.option("--panel", "panel_path", default=None,
                 help="Panel CSV ('-' reads stdin); design is taken from it."),
    click.option("--format", "fmt", default="long",
                 type=click.Choice(["long", "wide"]), show_default=True,
                 help="Panel CSV layout."),
    click.option("--transform", default="identity",
                 type=click.Choice(list(TRANSFORMS)), show_default=True,
                 help="Outcome transform applied at load time."),
    click.option("--adoption", default=None,
                 help="Comma list of adoption periods (use 'never' for "
                      "never-treated), e.g. '2,3,never'."),
    click.option("--n-periods", type=int, default=None,
                 help="Number of periods when --adoption is given."),
]

_cov_options = [
    click.option("--cov", default="independent", show_default=True,
                 help="Working covariance: independent, exchangeable, ar1, "
                      "or custom:<csv path with the full NJ x NJ matrix>."),
    click.option("--rho", type=float, default=0.0, show_default=True,
                 help="Correlation parameter for exchangeable/ar1."),
    click.option("--rel-var", "rel_var_path", default=None,
                 help="CSV of relative standard deviations per cell (N rows, J columns)."),
]


def _add_options(options):
    def deco(fn):
        for opt in reversed(options):
            fn = opt(fn)
        return fn

    return deco


@click.group()
@click.version_option(package_name="gendid", prog_name="gendid")
def main() -> None:
    """Design-based difference-in-differences estimation for staggered rollouts."""


@main.command()
@_add_options(_design_options)
@click.option("--export-a", "export_a", default=None,
              help="Write the comparison matrix as CSV ('-' for stdout).")
@click.option("--dry-run", is_flag=True, help="Validate the configuration and stop.")
@_handled
def design(panel_path, fmt, transform, adoption, n_periods, export_a, dry_run):
    """Describe the two-by-two comparison system implied by a rollout."""
    pattern, panel = _resolve_design(panel_path, adoption, n_periods, transform, fmt)
    if dry_run:
        click.echo(f"would analyze design: N={pattern.n_units} J={pattern.n_periods}")
        return
    system = build_system(pattern)
    counts = count_types(pattern)
    click.echo(f"units: {pattern.n_units}")
    click.echo(f"periods: {pattern.n_periods}")
    click.echo(f"adoption: {','.join(pattern.adoption_labels())}")
    click.echo(f"comparisons: {system.n_rows}")
    click.echo(f"rank: {(pattern.n_units - 1) * (pattern.n_periods - 1)}")
    for t in range(1, 7):
        click.echo(f"type {t} ({TYPE_NAMES[t]}): {counts[t - 1]}")
    if export_a is not None:
        names = _unit_names(pattern, panel)
        header = ["k", "i", "i_prime", "j", "j_prime", "type"] + [
            f"Y_{names[i - 1]}_{j}"
            for i in range(1, pattern.n_units + 1)
            for j in range(1, pattern.n_periods + 1)
        ]
        a = system.a_float()
        rows = (
            [k + 1, idx.i, idx.i_prime, idx.j, idx.j_prime, system.types[k]]
            + [int(v) for v in a[k]]
            for k, idx in enumerate(
                iter_did_indices(pattern.n_units, pattern.n_periods)
            )
        )
        _write_rows(export_a, header, rows)


@main.command()
@_add_options(_design_options)
@_add_options(_cov_options)
@click.option("--setting", required=True, type=click.Choice(list(SETTINGS)),
              help="Treatment-effect setting the estimand lives in.")
@click.option("--estimand", "estimand_expr", default="attw", show_default=True,
              help="Estimand expression, e.g. 'single:j=4,a=2', 'avg:a=1..3', 'attw'.")
@click.option("--out-weights", default=None,
              help="CSV of comparison weights ('-' for stdout).")
@click.option("--out-obs-weights", default=None,
              help="CSV of per-observation weights, columns unit,period,weight.")
@click.option("--dry-run", is_flag=True, help="Validate the configuration and stop.")
@_handled
def weights(panel_path, fmt, transform, adoption, n_periods, cov, rho,
            rel_var_path, setting, estimand_expr, out_weights, out_obs_weights,
            dry_run):
    """Solve for minimum-variance unbiased weights on a design."""
    pattern, panel = _resolve_design(panel_path, adoption, n_periods, transform, fmt)
    fmat = build_f(setting, pattern)
    est = parse_estimand(estimand_expr, fmat.catalog)
    if dry_run:
        click.echo(
            f"would solve: N={pattern.n_units} J={pattern.n_periods} "
            f"setting={setting} estimand={estimand_expr!r} cov={cov}"
        )
        return
    cov_obj = _covariance(cov, rho, rel_var_path, pattern.n_units, pattern.n_periods)
    system = build_system(pattern)
    sol = solve_min_variance(system, fmat, est, cov_obj)
    click.echo(f"feasibility: {sol.feasibility.classification.value}")
    click.echo(sol.feasibility.report())
    click.echo(f"scaled variance: {_fmt(sol.scaled_variance)}")
    click.echo(f"constraint residual: {_fmt(sol.constraint_residual)}")
    if out_weights is not None:
        rows = (
            [k + 1, idx.i, idx.i_prime, idx.j, idx.j_prime,
             system.types[k], _fmt(sol.w[k])]
            for k, idx in enumerate(
                iter_did_indices(pattern.n_units, pattern.n_periods)
            )
        )
        _write_rows(out_weights,
                    ["k", "i", "i_prime", "j", "j_prime", "type", "weight"], rows)
    if out_obs_weights is not None:
        names = _unit_names(pattern, panel)
        obs = sol.obs_matrix()
        rows = (
            [names[i - 1], j, _fmt(obs[i - 1, j - 1])]
            for i in range(1, pattern.n_units + 1)
            for j in range(1, pattern.n_periods + 1)
        )
        _write_rows(out_obs_weights, ["unit", "period", "weight"], rows)


@main.command()
@_add_options(_design_options)
@_add_options(_cov_options)
@click.option("--setting", required=True, type=click.Choice(list(SETTINGS)))
@click.option("--estimand", "estimand_expr", default="attw", show_default=True)
@click.option("--perms", "n_perm", type=int, default=999, show_default=True,
              help="Permutation draws; 0 skips inference.")
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--sided", default="two", type=click.Choice(["two", "left", "right"]),
              show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", "out_path", default=None,
              help="Write the JSON here instead of stdout.")
@click.option("--dry-run", is_flag=True, help="Validate the configuration and stop.")
@_handled
def estimate(panel_path, fmt, transform, adoption, n_periods, cov, rho, rel_var_path,
             setting, estimand_expr, n_perm, seed, sided, workers, out_path, dry_run):
    """Estimate an effect from panel data with randomization inference."""
    if panel_path is None:
        raise ValueError("estimate needs --panel")
    pattern, panel = _resolve_design(panel_path, adoption, n_periods, transform, fmt)
    fmat = build_f(setting, pattern)
    est = parse_estimand(estimand_expr, fmat.catalog)
    if dry_run:
        click.echo(
            f"would estimate: N={pattern.n_units} J={pattern.n_periods} "
            f"setting={setting} estimand={estimand_expr!r} perms={n_perm} seed={seed}"
        )
        return
    cov_obj = _covariance(cov, rho, rel_var_path, pattern.n_units, pattern.n_periods)
    system = build_system(pattern)
    sol = solve_min_variance(system, fmat, est, cov_obj)
    if n_perm > 0:
        res = permutation_test(sol, panel, n_perm=n_perm, seed=seed, sided=sided,
                               workers=workers)
    else:
        res = estimate_only(sol, panel)
    payload = {
        "setting": setting,
        "estimand": estimand_expr,
        "transform": panel.transform_applied,
        "point": res.point,
        "ratio": res.back_transformed,
        "p_value": res.perm_p,
        "sided": res.sided if res.perm_p is not None else None,
        "n_perm": res.n_perm,
        "seed": seed if res.perm_p is not None else None,
        "scaled_variance": sol.scaled_variance,
        "constraint_residual": sol.constraint_residual,
        "feasibility": {
            "classification": sol.feasibility.classification.value,
            "rank_f": sol.feasibility.rank_f,
            "rank_f_aug": sol.feasibility.rank_f_aug,
            "n_weights": sol.feasibility.n_weights,
            "w_nullity": sol.feasibility.w_nullity,
            "free_dim": sol.feasibility.free_dim,
        },
    }
    _emit_json(payload, out_path)


def _comparator_spec(pattern: AdoptionPattern, name: str):
    base, _, arg = name.partition(":")
    base = base.strip().lower()
    arg = arg.strip().lower()
    if base == "tw":
        return comparators.tw_weights(pattern)
    if base == "cs":
        return comparators.cs_weights(pattern, arg or "simple")
    if base == "sa":
        return comparators.sa_weights(pattern)
    if base == "ch":
        return comparators.ch_weights(pattern)
    if base == "co":
        return comparators.co_weights(pattern, int(arg or "1"))
    if base == "np":
        return comparators.np_weights(pattern, arg or "equal")
    if base == "me":
        raise UnsupportedEstimatorError(
            f"{name!r}: mixed-effects model estimators are not provided"
        )
    raise UnsupportedEstimatorError(
        f"unknown comparison method {name!r}; available: tw, cs:AGG, sa, ch, co:K, np:W"
    )


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


@main.command()
@_add_options(_design_options)
@click.option("--methods",
              default="tw,cs:simple,cs:dynamic,cs:group,cs:calendar,sa,ch,co:1,co:2,co:3,np:equal",
              show_default=True, help="Comma list such as 'tw,cs:dynamic,co:3'.")
@click.option("--perms", "n_perm", type=int, default=0, show_default=True,
              help="Permutation draws per method; 0 skips inference.")
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True)
@click.option("--out", "out_path", default=None,
              help="Write the summary CSV here instead of stdout.")
@click.option("--dump-weights", "dump_dir", default=None,
              help="Directory for per-method observation-weight CSVs.")
@click.option("--audit-setting", default=None, type=click.Choice(list(SETTINGS)),
              help="Audit each method's implied coefficients on this setting's effects.")
@click.option("--audit-out", default=None,
              help="CSV for the audit (default stdout after the summary).")
@click.option("--dry-run", is_flag=True, help="Validate the configuration and stop.")
@_handled
def compare(panel_path, fmt, transform, adoption, n_periods, methods, n_perm, seed,
            out_path, dump_dir, audit_setting, audit_out, dry_run):
    """Run comparison estimators on a panel and audit their weights."""
    pattern, panel = _resolve_design(panel_path, adoption, n_periods, transform, fmt)
    names = [m.strip() for m in methods.split(",") if m.strip()]
    if not names:
        raise ValueError("--methods is empty")
    if dry_run:
        click.echo(
            f"would compare {len(names)} method(s) on N={pattern.n_units} "
            f"J={pattern.n_periods}: {', '.join(names)}"
        )
        return
    if panel is None and n_perm > 0:
        raise ValueError("inference needs --panel")
    if n_perm > 0 and len(set(pattern.adoption)) < 2:
        raise DegenerateDesignError(
            "all units share one adoption time; permuting rows cannot form "
            "a reference distribution"
        )
    summary = []
    audit_rows = []
    for name in names:
        spec = _comparator_spec(pattern, name)
        estimate_txt, p_txt = "", ""
        if panel is not None:
            point = float(spec.obs_weights @ panel.y)
            estimate_txt = _fmt(point)
            if n_perm > 0:
                obs_mat = spec.obs_weights.reshape(pattern.n_units, pattern.n_periods)
                score = obs_mat @ panel.outcomes.T
                draws = _permuted_stats(score, seed, range(n_perm))
                p_txt = _fmt(permutation_p(draws, point, "two"))
        summary.append([name, estimate_txt, p_txt, len(spec.dropped)])
        if dump_dir is not None:
            out_dir = Path(dump_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            names_u = _unit_names(pattern, panel)
            obs = spec.obs_weights.reshape(pattern.n_units, pattern.n_periods)
            rows = (
                [names_u[i - 1], j, _fmt(obs[i - 1, j - 1])]
                for i in range(1, pattern.n_units + 1)
                for j in range(1, pattern.n_periods + 1)
            )
            _write_rows(str(out_dir / f"{_safe_name(name)}_obs_weights.csv"),
                        ["unit", "period", "weight"], rows)
        if audit_setting is not None:
            profile = obs_expectation_profile(spec.obs_weights, audit_setting, pattern)
            for key, c in zip(profile.catalog.keys, profile.coefficients):
                audit_rows.append([name, audit_setting, key.label(), _fmt(c)])
            audit_rows.append(
                [name, audit_setting, "max_unit_loading", _fmt(profile.max_unit_loading)]
            )
            audit_rows.append(
                [name, audit_setting, "max_period_loading",
                 _fmt(profile.max_period_loading)]
            )
    _write_rows(out_path, ["method", "estimate", "p_value", "n_dropped"], summary)
    if audit_setting is not None:
        _write_rows(audit_out, ["method", "setting", "component", "coefficient"],
                    audit_rows)


def _study_config(path: str | None):
    """Parse the INI study configuration into plain dictionaries."""
    study: dict = {}
    scenario_overrides: dict[int, dict] = {}
    custom_estimands: dict[str, dict] = {}
    if path is None:
        return study, scenario_overrides, custom_estimands
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise OSError(f"config file {path!r} not found")
    for section in parser.sections():
        if section == "study":
            study = dict(parser[section])
        elif section.startswith("scenario."):
            sid = int(section.split(".", 1)[1])
            scenario_overrides[sid] = dict(parser[section])
        elif section.startswith("estimand."):
            name = section.split(".", 1)[1]
            custom_estimands[name] = dict(parser[section])
        else:
            raise ValueError(f"unknown config section [{section}]")
    return study, scenario_overrides, custom_estimands


def _parse_scenarios(text: str) -> list[int]:
    """Scenario ids from '1..9', '1,4,7' or a mix of both."""
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        m = re.match(r"^(-?\d+)\.\.(-?\d+)$", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if lo > hi:
                raise ValueError(f"empty scenario range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    if not out:
        raise ValueError("no scenario ids given")
    return out


@main.command()
@click.option("--scenario", "scenario_text", default=None,
              help="Scenario ids, e.g. '1..9' or '1,4,7' [default: 1..9].")
@click.option("--sims", "n_sims", type=int, default=None,
              help="Replicates per scenario [default: 1000].")
@click.option("--perms", "n_perm", type=int, default=None,
              help="Permutation draws per replicate; 0 skips power [default: 250].")
@click.option("--seed", type=int, default=None, help=f"[default: {DEFAULT_SEED}]")
@click.option("--estimators", default=None,
              help="Comma list of registry names; default picks all suited to each scenario.")
@click.option("--workers", type=int, default=None, help="Process count [default: 1].")
@click.option("--analytic", is_flag=True,
              help="Draw cell means from their exact normal law instead of averaging individuals.")
@click.option("--config", "config_path", default=None,
              help="INI file with [study], [scenario.N] and [estimand.NAME] sections.")
@click.option("--out", "out_path", default=None,
              help="Write the summary CSV here instead of stdout.")
@click.option("--dry-run", is_flag=True, help="Validate the configuration and stop.")
@_handled
def simulate(scenario_text, n_sims, n_perm, seed, estimators, workers, analytic,
             config_path, out_path, dry_run):
    """Run the simulation study and summarize estimator performance."""
    study_cfg, scenario_overrides, custom_estimands = _study_config(config_path)
    # CLI flags override the [study] section, which overrides the defaults.
    if scenario_text is None:
        scenario_text = study_cfg.get("scenario", study_cfg.get("scenarios", "1..9"))
    sids = _parse_scenarios(scenario_text)
    n_sims = n_sims if n_sims is not None else int(study_cfg.get("sims", 1000))
    n_perm = n_perm if n_perm is not None else int(study_cfg.get("perms", 250))
    seed = seed if seed is not None else int(study_cfg.get("seed", DEFAULT_SEED))
    workers = workers if workers is not None else int(study_cfg.get("workers", 1))
    analytic = analytic or study_cfg.get("analytic", "").strip().lower() in (
        "1", "true", "yes",
    )
    if estimators is None and "estimators" in study_cfg:
        estimators = study_cfg["estimators"]
    names = (
        [e.strip() for e in estimators.split(",") if e.strip()]
        if estimators is not None
        else None
    )
    extra = []
    for name, mapping in custom_estimands.items():
        if "setting" not in mapping or "expr" not in mapping:
            raise ValueError(f"[estimand.{name}] needs 'setting' and 'expr' keys")
        extra.append((name, mapping["setting"].strip().upper(), mapping["expr"].strip()))
    sims = [
        scenario_from_mapping(sid, scenario_overrides[sid])
        if sid in scenario_overrides
        else scenario(sid)
        for sid in sids
    ]
    if dry_run:
        click.echo(
            f"would simulate scenarios {','.join(str(s) for s in sids)}: "
            f"sims={n_sims} perms={n_perm} seed={seed} workers={workers} "
            f"analytic={analytic} estimators="
            + (",".join(names) if names else "<scenario defaults>")
            + (f" extra={','.join(e[0] for e in extra)}" if extra else "")
        )
        return
    results = run_study(sims, n_sims=n_sims, n_perm=n_perm, seed=seed,
                        estimators=names, workers=workers, analytic=analytic,
                        extra=extra)
    header = ["scenario", "estimator", "kind", "assumption", "truth",
              "mean_estimate", "bias", "sd_estimate", "power", "n_sims", "n_perm"]
    rows = [
        [r.scenario_id, r.estimator, r.kind, r.assumption, _fmt(r.truth),
         _fmt(r.mean_estimate), _fmt(r.mean_estimate - r.truth),
         _fmt(r.sd_estimate),
         _fmt(r.power) if r.power is not None else "",
         r.n_sims, r.n_perm]
        for r in results
    ]
    _write_rows(out_path, header, rows)


if __name__ == "__main__":
    main()
