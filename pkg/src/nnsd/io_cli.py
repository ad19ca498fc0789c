"""Command-line surface: config resolution, subcommands, CSV output bundles.

Exit codes (also in ``--help``): 0 success; 2 usage or config error; 3 fit
finished but the convergence diagnostic sits at or above threshold; 4 bad
input file or data; 5 sampler/output failure.  Errors are one JSON line on
stderr; ``--verbose`` adds the traceback.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import traceback
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import simulation
from .diagnostics import (
    diagnostics_report,
    effective_sample_size,
    mpsrf,
    posterior_summary,
    procrustes_align,
    psrf,
)
from .domain import ColumnSpec, SpatialDomain, load_domain
from .inference import VARIANTS, Hyperparams, RunOptions, run_chains

__all__ = [
    "RunConfig",
    "parse_config",
    "write_outputs",
    "cli_dispatch",
    "main",
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_CONVERGENCE",
    "EXIT_INPUT",
    "EXIT_RUNTIME",
]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONVERGENCE = 3
EXIT_INPUT = 4
EXIT_RUNTIME = 5


def _g17(x) -> str:
    """17-significant-digit decimal: lossless for float64, byte-stable."""
    return format(float(x), ".17g")


class UsageError(Exception):
    """Bad flags, bad subcommand, or an invalid configuration value."""


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Fully-resolved settings of one fit, defaults materialized.

    The same keys are accepted in a JSON config file and as flags; flags
    win.  The resolved values (seed included) are echoed into the output
    bundle so a bundle is reproducible from its own record.
    """

    variant: str = "NNSD"
    iterations: int = 20_000
    burn_in: int = 10_000
    thin: int = 1
    n_chains: int = 2
    seed: int = 0
    step_alpha: float = 0.3
    step_gamma: float = 0.1
    step_z: float = 0.1
    sigma2_alpha: float = 3.0
    sigma2_beta: float = 100.0
    sigma2_delta: float = 100.0
    sigma2_z: float = 1.0
    a_mu: float = 2.0
    b_mu: float = 1.0
    a_eps: float = 2.0
    b_eps: float = 1.0
    units_file: str | None = None
    adjacency_file: str | None = None
    unit_id: str = "unit_id"
    centroid_x: str = "centroid_x"
    centroid_y: str = "centroid_y"
    response: str = "response"
    response_se: str = "response_se"
    covariates: tuple = ()
    position_covariates: tuple = ()
    log_scale: bool = False
    output_dir: str = "nnsd-out"
    rhat_threshold: float = 1.1
    keep_positions: bool = False
    n_jobs: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", str(self.variant).upper())
        if self.variant not in VARIANTS:
            raise UsageError(f"variant must be one of {', '.join(VARIANTS)}, got {self.variant!r}")
        for name in ("iterations", "burn_in", "thin", "n_chains", "seed", "n_jobs"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise UsageError(f"{name} must be an integer, got {v!r}")
        if not self.iterations > self.burn_in >= 0:
            raise UsageError(
                f"iterations must exceed burn_in: iterations={self.iterations}, burn_in={self.burn_in}"
            )
        if self.thin < 1:
            raise UsageError(f"thin must be >= 1, got {self.thin}")
        if self.n_chains < 1:
            raise UsageError(f"n_chains must be >= 1, got {self.n_chains}")
        if self.n_jobs < 1:
            raise UsageError(f"n_jobs must be >= 1, got {self.n_jobs}")
        for name in (
            "step_alpha",
            "step_gamma",
            "step_z",
            "sigma2_alpha",
            "sigma2_beta",
            "sigma2_delta",
            "sigma2_z",
            "a_mu",
            "b_mu",
            "a_eps",
            "b_eps",
            "rhat_threshold",
        ):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and not isinstance(v, bool)):
                raise UsageError(f"{name} must be a number, got {v!r}")
            if not (math.isfinite(v) and v > 0):
                raise UsageError(f"{name} must be positive and finite, got {v}")
            object.__setattr__(self, name, float(v))
        for name in ("covariates", "position_covariates"):
            v = getattr(self, name)
            if isinstance(v, str):
                v = tuple(s for s in (p.strip() for p in v.split(",")) if s)
            object.__setattr__(self, name, tuple(str(s) for s in v))
        for name in ("log_scale", "keep_positions"):
            if not isinstance(getattr(self, name), bool):
                raise UsageError(f"{name} must be true or false")

    def column_spec(self) -> ColumnSpec:
        return ColumnSpec(
            unit_id=self.unit_id,
            centroid_x=self.centroid_x,
            centroid_y=self.centroid_y,
            response=self.response,
            response_se=self.response_se,
            covariates=self.covariates,
            position_covariates=self.position_covariates,
            log_scale=self.log_scale,
        )

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            variant=self.variant,
            sigma2_alpha=self.sigma2_alpha,
            sigma2_beta=self.sigma2_beta,
            sigma2_delta=self.sigma2_delta,
            sigma2_z=self.sigma2_z,
            a_mu=self.a_mu,
            b_mu=self.b_mu,
            a_eps=self.a_eps,
            b_eps=self.b_eps,
        )

    def run_options(self) -> RunOptions:
        return RunOptions(
            iterations=self.iterations,
            burn_in=self.burn_in,
            thin=self.thin,
            seed=self.seed,
            step_alpha=self.step_alpha,
            step_gamma=self.step_gamma,
            step_z=self.step_z,
        )

    def resolved(self) -> dict:
        """Every field, in declaration order, JSON-ready."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def parse_config(path=None, overrides=None) -> RunConfig:
    """Resolve a RunConfig from an optional JSON file plus flag overrides.

    Unknown keys error (listed); overrides win over file values.
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config file {path}: {exc.strerror or exc}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise UsageError(f"config file {path} must hold a JSON object")
        unknown = sorted(set(raw) - set(_CONFIG_KEYS))
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        values.update(raw)
    if overrides:
        unknown = sorted(set(overrides) - set(_CONFIG_KEYS))
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc))


# -- output bundle ------------------------------------------------------------


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _delta_col_names(m2: int) -> list:
    m = m2 // 2
    return [f"delta_x_{k + 1}" for k in range(m)] + [f"delta_y_{k + 1}" for k in range(m)]


def _aligned_position_means(chains) -> np.ndarray:
    """Mean latent positions after aligning every kept draw onto the
    highest-log-posterior draw (rotation/reflection/translation removed)."""
    Z = np.concatenate([c.positions for c in chains], axis=0)
    lp = np.concatenate([c.log_posterior for c in chains])
    ref = Z[int(np.argmax(lp))]
    return procrustes_align(ref, Z).mean(axis=0)


def write_outputs(
    out_dir,
    domain: SpatialDomain,
    chains,
    report,
    summary,
    config: RunConfig,
) -> Path:
    """Write the full fit bundle; field order and float formatting are fixed
    so identical inputs give byte-identical files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "resolved_config.json", "w") as fh:
        json.dump(config.resolved(), fh, indent=2)
        fh.write("\n")

    _write_csv(
        out / "posterior_summary.csv",
        ["parameter", "mean", "median", "sd", "q025", "q975", "psrf"],
        [
            [r.name, _g17(r.mean), _g17(r.median), _g17(r.sd), _g17(r.q025), _g17(r.q975), _g17(r.psrf)]
            for r in summary["parameters"]
        ],
    )

    design_se = np.sqrt(domain.var_y)
    _write_csv(
        out / "unit_estimates.csv",
        ["unit_id", "post_median", "post_sd", "design_se", "pct_se_reduction"],
        [
            [
                uid,
                _g17(r.median),
                _g17(r.sd),
                _g17(se),
                _g17(100.0 * (1.0 - r.sd / se)),
            ]
            for uid, r, se in zip(domain.unit_ids, summary["fitted"], design_se)
        ],
    )

    freq = summary["edge_freq"]
    iu, ju = np.triu_indices(domain.n, k=1)
    _write_csv(
        out / "edge_probs.csv",
        ["id_i", "id_j", "inclusion_freq"],
        [
            [domain.unit_ids[i], domain.unit_ids[j], _g17(freq[i, j])]
            for i, j in zip(iu.tolist(), ju.tolist())
        ],
    )

    zbar = _aligned_position_means(chains)
    _write_csv(
        out / "latent_positions.csv",
        ["unit_id", "z1_mean", "z2_mean"],
        [[uid, _g17(z[0]), _g17(z[1])] for uid, z in zip(domain.unit_ids, zbar)],
    )

    first = chains[0]
    m2 = first.delta.shape[1]
    header = (
        ["chain", "draw"]
        + first.scalar_names()
        + _delta_col_names(m2)
        + ["n_edges", "n_components", "log_posterior"]
    )
    rows = []
    for c in chains:
        scal = c.scalar_matrix()
        for k in range(c.n_kept):
            row = [c.chain_index, k + 1]
            row += [_g17(v) for v in scal[k]]
            row += [_g17(v) for v in c.delta[k]]
            row += [int(c.n_edges[k]), int(c.n_components[k]), _g17(c.log_posterior[k])]
            rows.append(row)
    _write_csv(out / "traces.csv", header, rows)

    if config.keep_positions:
        rows = []
        for c in chains:
            for k in range(c.n_kept):
                for i, uid in enumerate(domain.unit_ids):
                    rows.append(
                        [c.chain_index, k + 1, uid, _g17(c.positions[k, i, 0]), _g17(c.positions[k, i, 1])]
                    )
        _write_csv(out / "position_draws.csv", ["chain", "draw", "unit_id", "z1", "z2"], rows)

    return out


# -- argument parsing ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    # argparse exits with a two-line message; the contract wants one
    # machine-parseable line, so route through UsageError instead.
    def error(self, message):
        raise UsageError(message)


def _add_column_flags(p) -> None:
    p.add_argument("--units", help="units CSV file (header row)")
    p.add_argument("--adjacency", help="edge-list file, one 'id_i,id_j' per line")
    p.add_argument("--id-col", dest="unit_id", help="unit id column (default unit_id)")
    p.add_argument("--x-col", dest="centroid_x", help="centroid x column")
    p.add_argument("--y-col", dest="centroid_y", help="centroid y column")
    p.add_argument("--response-col", dest="response", help="response column")
    p.add_argument("--se-col", dest="response_se", help="response standard-error column")
    p.add_argument("--covariates", help="comma-separated covariate columns (intercept is implicit)")
    p.add_argument("--position-covariates", help="comma-separated latent-position covariate columns")
    p.add_argument(
        "--log-scale",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="model log(response); SEs converted by the delta method",
    )


def _add_run_flags(p, iterations=None, burn_in=None) -> None:
    p.add_argument("--variant", help=f"model variant: {', '.join(VARIANTS)}")
    p.add_argument("--iterations", type=int, default=iterations)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=burn_in)
    p.add_argument("--thin", type=int)
    p.add_argument("--chains", dest="n_chains", type=int, help="number of MCMC chains")
    p.add_argument("--seed", type=int, help="master seed (chains derive their own streams)")
    p.add_argument("--step-alpha", dest="step_alpha", type=float)
    p.add_argument("--step-gamma", dest="step_gamma", type=float)
    p.add_argument("--step-z", dest="step_z", type=float)
    p.add_argument("--jobs", dest="n_jobs", type=int, help="parallel worker processes")


def _build_parser() -> argparse.ArgumentParser:
    top = _Parser(
        prog="nnsd",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    top.add_argument("--verbose", action="store_true", help="tracebacks on failure")
    sub = top.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    fit = sub.add_parser("fit", help="sample the posterior, write an output bundle")
    fit.add_argument("--config", help="JSON config file; flags override its values")
    _add_column_flags(fit)
    _add_run_flags(fit)
    for name in (
        "sigma2-alpha",
        "sigma2-beta",
        "sigma2-delta",
        "sigma2-z",
        "a-mu",
        "b-mu",
        "a-eps",
        "b-eps",
    ):
        fit.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float)
    fit.add_argument("--out", dest="output_dir", help="output directory (default nnsd-out)")
    fit.add_argument("--rhat-threshold", dest="rhat_threshold", type=float)
    fit.add_argument(
        "--keep-positions",
        dest="keep_positions",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="also write every latent-position draw (large)",
    )
    fit.add_argument("--verbose", action="store_true")
    fit.set_defaults(func=_cmd_fit)

    sim = sub.add_parser("simulate", help="generate scenario or pseudo datasets")
    mode = sim.add_mutually_exclusive_group(required=True)
    mode.add_argument("--scenario", help="generative scenario, e.g. gamma=0.5")
    mode.add_argument("--pseudo", action="store_true", help="jitter an observed dataset by its design SEs")
    _add_column_flags(sim)
    sim.add_argument("--n", type=int, default=simulation.DESK_N, help="synthetic-geometry size")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--replicates", type=int, default=1)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--verbose", action="store_true")
    sim.set_defaults(func=_cmd_simulate)

    sc = sub.add_parser("score", help="MSE/MAE of estimates against truth")
    sc.add_argument("truth", help="CSV with the target values")
    sc.add_argument("estimates", help="CSV with the fitted values")
    sc.add_argument("--truth-col", help="value column in the truth file")
    sc.add_argument("--est-col", help="value column in the estimates file")
    sc.add_argument("--verbose", action="store_true")
    sc.set_defaults(func=_cmd_score)

    dg = sub.add_parser("diagnose", help="recompute convergence diagnostics from traces")
    dg.add_argument("path", help="output bundle directory or a traces.csv file")
    dg.add_argument("--rhat-threshold", dest="rhat_threshold", type=float, default=1.1)
    dg.add_argument("--verbose", action="store_true")
    dg.set_defaults(func=_cmd_diagnose)

    cp = sub.add_parser("compare", help="variant-comparison score table")
    cp.add_argument(
        "--scenario",
        action="append",
        dest="scenarios",
        help="scenario spec 'gamma=G'; repeatable (default: gamma=1, 0.5, 0)",
    )
    cp.add_argument("--pseudo", action="store_true", help="pseudo-data study on a dataset instead of scenarios")
    _add_column_flags(cp)
    cp.add_argument("--variants", default="NNSD,NN,SD,ICAR", help="comma-separated variant list")
    cp.add_argument("--replicates", type=int, default=10)
    cp.add_argument("--n", type=int, default=simulation.DESK_N, help="synthetic-geometry size")
    _add_run_flags(cp, iterations=simulation.DESK_RUN.iterations, burn_in=simulation.DESK_RUN.burn_in)
    cp.add_argument("--out", help="also write the table to this file")
    cp.add_argument("--verbose", action="store_true")
    cp.set_defaults(func=_cmd_compare)

    return top


def _fail(code: int, kind: str, message: str, verbose: bool = False) -> int:
    if verbose:
        traceback.print_exc()
    line = json.dumps({"error": kind, "exit_code": code, "detail": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return code


# -- subcommands --------------------------------------------------------------

_FLAG_CONFIG_KEYS = (
    "variant",
    "iterations",
    "burn_in",
    "thin",
    "n_chains",
    "seed",
    "step_alpha",
    "step_gamma",
    "step_z",
    "sigma2_alpha",
    "sigma2_beta",
    "sigma2_delta",
    "sigma2_z",
    "a_mu",
    "b_mu",
    "a_eps",
    "b_eps",
    "unit_id",
    "centroid_x",
    "centroid_y",
    "response",
    "response_se",
    "covariates",
    "position_covariates",
    "log_scale",
    "output_dir",
    "rhat_threshold",
    "keep_positions",
    "n_jobs",
)


def _flag_overrides(args) -> dict:
    over = {k: getattr(args, k, None) for k in _FLAG_CONFIG_KEYS}
    over["units_file"] = getattr(args, "units", None)
    over["adjacency_file"] = getattr(args, "adjacency", None)
    return over


def _columns_from_args(args) -> ColumnSpec:
    kw = {}
    for name in ("unit_id", "centroid_x", "centroid_y", "response", "response_se"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    for name in ("covariates", "position_covariates"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = tuple(s for s in (p.strip() for p in v.split(",")) if s)
    if getattr(args, "log_scale", None) is not None:
        kw["log_scale"] = args.log_scale
    return ColumnSpec(**kw)


def _cmd_fit(args) -> int:
    try:
        cfg = parse_config(args.config, _flag_overrides(args))
    except UsageError as exc:
        return _fail(EXIT_USAGE, "config", str(exc), args.verbose)
    if cfg.units_file is None:
        return _fail(EXIT_USAGE, "config", "fit needs a units file (--units or units_file)", args.verbose)
    try:
        dom = load_domain(cfg.units_file, cfg.adjacency_file, cfg.column_spec())
    except (OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, "input", str(exc), args.verbose)
    if cfg.variant == "ICAR" and dom.geo_adjacency is None:
        return _fail(EXIT_INPUT, "input", "ICAR needs an adjacency file", args.verbose)
    try:
        chains = run_chains(
            dom, cfg.hyperparams(), cfg.run_options(), n_chains=cfg.n_chains, n_jobs=cfg.n_jobs
        )
        summary = posterior_summary(chains)
        report = (
            diagnostics_report(chains, threshold=cfg.rhat_threshold) if cfg.n_chains >= 2 else None
        )
    except Exception as exc:
        return _fail(EXIT_RUNTIME, "sampler", str(exc), args.verbose)
    try:
        out = write_outputs(cfg.output_dir, dom, chains, report, summary, cfg)
    except OSError as exc:
        return _fail(EXIT_RUNTIME, "output", str(exc), args.verbose)
    rhat = report.mpsrf if report is not None else float("nan")
    print(
        f"fit variant={cfg.variant} chains={cfg.n_chains} kept={chains[0].n_kept}"
        f" mpsrf={_g17(rhat)} out={out}"
    )
    if report is not None and not report.passed:
        return _fail(
            EXIT_CONVERGENCE,
            "convergence",
            f"mpsrf {rhat:.4f} >= threshold {cfg.rhat_threshold:g}; outputs were still written",
            False,
        )
    return EXIT_OK


def _parse_scenario(text: str, replicates: int, seed: int) -> simulation.ScenarioSpec:
    body = text.strip().lower()
    if not body.startswith("gamma="):
        raise UsageError(f"scenario must look like gamma=G with G in [0, 1], got {text!r}")
    try:
        g = float(body[len("gamma=") :])
    except ValueError:
        raise UsageError(f"scenario must look like gamma=G with G in [0, 1], got {text!r}")
    if not 0.0 <= g <= 1.0:
        raise UsageError(f"scenario gamma must lie in [0, 1], got {g}")
    return simulation.ScenarioSpec(gamma_true=g, replicates=replicates, seed=seed)


def _geometry_table(geometry: simulation.GeometrySpec):
    """(header, per-unit static cells) of a synthetic geometry: id, raw
    centroids, then the non-intercept covariates as x1, x2, ..."""
    n_cov = geometry.X.shape[1] - 1
    header = ["unit_id", "centroid_x", "centroid_y"] + [f"x{k + 1}" for k in range(n_cov)]
    rows = []
    for i, uid in enumerate(geometry.unit_ids):
        row = [uid, _g17(geometry.centroids[i, 0]), _g17(geometry.centroids[i, 1])]
        row += [_g17(v) for v in geometry.X[i, 1:]]
        rows.append(row)
    return header, rows


def _cmd_simulate(args) -> int:
    out = Path(args.out)
    if args.replicates < 1:
        return _fail(EXIT_USAGE, "config", f"replicates must be >= 1, got {args.replicates}", args.verbose)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return _fail(EXIT_RUNTIME, "output", str(exc), args.verbose)

    if args.pseudo:
        if args.units is None:
            return _fail(EXIT_USAGE, "config", "--pseudo needs --units", args.verbose)
        try:
            dom = load_domain(args.units, args.adjacency, _columns_from_args(args))
        except (OSError, ValueError) as exc:
            return _fail(EXIT_INPUT, "input", str(exc), args.verbose)
        n_cov = dom.X.shape[1] - 1
        header = (
            ["unit_id", "centroid_x", "centroid_y"]
            + [f"x{k + 1}" for k in range(n_cov)]
            + [f"s{k + 1}" for k in range(dom.S.shape[1])]
            + ["response", "response_se"]
        )
        se = np.sqrt(dom.var_y)
        for r in range(args.replicates):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=args.seed, spawn_key=(7001, r, 0))
            )
            y_star = simulation.gen_pseudo_data(dom.y, dom.var_y, rng)
            rows = []
            for i, uid in enumerate(dom.unit_ids):
                row = [uid, _g17(dom.centroids[i, 0]), _g17(dom.centroids[i, 1])]
                row += [_g17(v) for v in dom.X[i, 1:]]
                row += [_g17(v) for v in dom.S[i]]
                row += [_g17(y_star[i]), _g17(se[i])]
                rows.append(row)
            _write_csv(out / f"pseudo_{r + 1:03d}.csv", header, rows)
        echo = {
            "mode": "pseudo",
            "source": str(args.units),
            "seed": args.seed,
            "replicates": args.replicates,
            "note": "responses are on the analysis scale; refit with log_scale=false",
        }
        with open(out / "simulate.json", "w") as fh:
            json.dump(echo, fh, indent=2)
            fh.write("\n")
        print(f"simulate pseudo replicates={args.replicates} out={out}")
        return EXIT_OK

    try:
        spec = _parse_scenario(args.scenario, args.replicates, args.seed)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "config", str(exc), args.verbose)
    if args.units is not None:
        try:
            dom = load_domain(args.units, None, _columns_from_args(args))
        except (OSError, ValueError) as exc:
            return _fail(EXIT_INPUT, "input", str(exc), args.verbose)
        geometry = simulation.GeometrySpec(dom.unit_ids, dom.centroids, dom.X)
    else:
        geometry = simulation.make_desk_geometry(
            args.n,
            np.random.default_rng(np.random.SeedSequence(entropy=args.seed, spawn_key=(1,))),
        )
    header, static = _geometry_table(geometry)
    se_y = math.sqrt(spec.sigma2_y_true)
    for r in range(args.replicates):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=args.seed, spawn_key=(2, r)))
        try:
            adj, eps, mu, Y = simulation.gen_scenario(spec, geometry, rng)
        except ValueError as exc:
            return _fail(EXIT_RUNTIME, "simulate", str(exc), args.verbose)
        tag = f"_{r + 1:03d}" if args.replicates > 1 else ""
        rows = [
            base + [_g17(Y[i]), _g17(se_y)] for i, base in enumerate(static)
        ]
        _write_csv(out / f"units{tag}.csv", header + ["response", "response_se"], rows)
        _write_csv(
            out / f"truth{tag}.csv",
            ["unit_id", "mu_true", "eps_true"],
            [
                [uid, _g17(mu[i]), _g17(eps[i])]
                for i, uid in enumerate(geometry.unit_ids)
            ],
        )
        iu, ju = np.triu_indices(geometry.n, k=1)
        with open(out / f"edges{tag}.csv", "w", newline="") as fh:
            for i, j in zip(iu.tolist(), ju.tolist()):
                if adj.B[i, j]:
                    fh.write(f"{geometry.unit_ids[i]},{geometry.unit_ids[j]}\n")
    echo = {
        "mode": "scenario",
        "gamma_true": spec.gamma_true,
        "alpha_true": spec.alpha_true,
        "beta_true": list(spec.beta_true),
        "sigma2_eps_true": spec.sigma2_eps_true,
        "sigma2_mu_true": spec.sigma2_mu_true,
        "sigma2_y_true": spec.sigma2_y_true,
        "seed": args.seed,
        "replicates": args.replicates,
        "n": geometry.n,
    }
    with open(out / "simulate.json", "w") as fh:
        json.dump(echo, fh, indent=2)
        fh.write("\n")
    print(f"simulate scenario={spec.name} replicates={args.replicates} out={out}")
    return EXIT_OK


_VALUE_COLUMNS = ("post_median", "mu_true", "value", "response", "y")


def _read_values(path, column=None):
    """(ids_or_None, values) from a CSV; the value column is the explicit
    `column`, else the first match in _VALUE_COLUMNS, else the only
    non-id column."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty file")
        names = list(reader.fieldnames)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if column is None:
        column = next((c for c in _VALUE_COLUMNS if c in names), None)
    if column is None:
        non_id = [c for c in names if c != "unit_id"]
        if len(non_id) == 1:
            column = non_id[0]
        else:
            raise ValueError(
                f"{path}: cannot pick a value column from {names}; pass --truth-col/--est-col"
            )
    if column not in names:
        raise ValueError(f"{path}: no column {column!r}")
    ids = [r["unit_id"] for r in rows] if "unit_id" in names else None
    try:
        vals = np.array([float(r[column]) for r in rows])
    except (TypeError, ValueError):
        raise ValueError(f"{path}: non-numeric value in column {column!r}")
    return ids, vals


def _cmd_score(args) -> int:
    try:
        t_ids, t_vals = _read_values(args.truth, args.truth_col)
        e_ids, e_vals = _read_values(args.estimates, args.est_col)
        if t_ids is not None and e_ids is not None:
            index = {u: k for k, u in enumerate(e_ids)}
            missing = [u for u in t_ids if u not in index]
            if missing:
                raise ValueError(f"estimates file lacks unit(s): {', '.join(missing[:5])}")
            e_vals = e_vals[[index[u] for u in t_ids]]
        elif t_vals.shape != e_vals.shape:
            raise ValueError(f"row-count mismatch: {t_vals.size} vs {e_vals.size}")
        mse, mae = simulation.score(t_vals, e_vals)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, "input", str(exc), args.verbose)
    print(f"mse={_g17(mse)} mae={_g17(mae)}")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "traces.csv"
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ValueError(f"{path}: empty file")
            names = list(reader.fieldnames)
            rows = list(reader)
        if "chain" not in names:
            raise ValueError(f"{path}: no 'chain' column")
        if not rows:
            raise ValueError(f"{path}: no data rows")
        chain_ids = sorted({r["chain"] for r in rows}, key=float)
        if len(chain_ids) < 2:
            raise ValueError("need traces from at least 2 chains to diagnose convergence")
        value_cols = [c for c in names if c not in ("chain", "draw")]
        per_chain = {}
        for col in value_cols:
            per_chain[col] = [
                np.array([float(r[col]) for r in rows if r["chain"] == cid]) for cid in chain_ids
            ]
        lengths = {len(t) for traces in per_chain.values() for t in traces}
        if len(lengths) != 1:
            raise ValueError("chains have unequal trace lengths")
    except (OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, "input", str(exc), args.verbose)

    # the multivariate statistic uses the model scalars (matching fit),
    # skipping any that are exactly constant (e.g. a pinned gamma)
    scalar_cols = [
        c
        for c in value_cols
        if (c in ("alpha", "gamma", "sigma2_mu", "sigma2_eps") or c.startswith("beta_"))
        and np.ptp(np.concatenate(per_chain[c])) > 0
    ]
    print("parameter,psrf,ess")
    for col in value_cols:
        traces = per_chain[col]
        if np.ptp(np.concatenate(traces)) == 0:
            r = e = float("nan")
        else:
            r = psrf(traces)
            e = float(effective_sample_size([t.reshape(-1, 1) for t in traces])[0])
        print(f"{col},{_g17(r)},{_g17(e)}")
    if not scalar_cols:
        return _fail(EXIT_INPUT, "input", "no varying model scalars in the traces", args.verbose)
    mats = [
        np.column_stack([per_chain[c][k] for c in scalar_cols]) for k in range(len(chain_ids))
    ]
    rhat = float(mpsrf(mats))
    passed = rhat < args.rhat_threshold
    print(f"mpsrf={_g17(rhat)} threshold={args.rhat_threshold:g} passed={str(passed).lower()}")
    if not passed:
        return _fail(
            EXIT_CONVERGENCE,
            "convergence",
            f"mpsrf {rhat:.4f} >= threshold {args.rhat_threshold:g}",
            False,
        )
    return EXIT_OK


def _score_table_lines(table) -> list:
    lines = ["scenario,variant,replicate_count,mse_median,mae_median"]
    for scenario, variant, n_rep, mse_med, mae_med in table.rows():
        lines.append(f"{scenario},{variant},{n_rep},{_g17(mse_med)},{_g17(mae_med)}")
    return lines


def _cmd_compare(args) -> int:
    variants = [v for v in (p.strip() for p in args.variants.split(",")) if v]
    if args.replicates < 1:
        return _fail(EXIT_USAGE, "config", f"replicates must be >= 1, got {args.replicates}", args.verbose)
    seed = args.seed if args.seed is not None else 0
    try:
        options = replace(
            simulation.DESK_RUN,
            iterations=args.iterations,
            burn_in=args.burn_in,
            thin=args.thin if args.thin is not None else 1,
            seed=seed,
            **{
                k: getattr(args, k)
                for k in ("step_alpha", "step_gamma", "step_z")
                if getattr(args, k) is not None
            },
        )
    except ValueError as exc:
        return _fail(EXIT_USAGE, "config", str(exc), args.verbose)
    n_chains = args.n_chains if args.n_chains is not None else 2
    n_jobs = args.n_jobs if args.n_jobs is not None else 1

    try:
        if args.pseudo:
            if args.units is not None:
                dom = load_domain(args.units, args.adjacency, _columns_from_args(args))
            else:
                dom = simulation.make_standin_dataset(seed=seed)
            table = simulation.run_pseudo_study(
                dom, variants, replicates=args.replicates, options=options,
                n_chains=n_chains, n_jobs=n_jobs,
            )
        else:
            specs = [
                _parse_scenario(s, args.replicates, seed)
                for s in (args.scenarios or ["gamma=1", "gamma=0.5", "gamma=0"])
            ]
            geometry = None
            if args.n != simulation.DESK_N:
                geometry = simulation.make_desk_geometry(
                    args.n,
                    np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,))),
                )
            table = simulation.run_comparison(
                specs, variants, replicates=args.replicates, options=options,
                geometry=geometry, n_chains=n_chains, n_jobs=n_jobs,
            )
    except UsageError as exc:
        return _fail(EXIT_USAGE, "config", str(exc), args.verbose)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, "input", str(exc), args.verbose)

    text = "\n".join(_score_table_lines(table)) + "\n"
    sys.stdout.write(text)
    if args.out:
        try:
            with open(args.out, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            return _fail(EXIT_RUNTIME, "output", str(exc), args.verbose)
    failed = [r for r in table.replicate_scores if r.failed]
    if failed:
        return _fail(
            EXIT_RUNTIME,
            "sampler",
            f"{len(failed)} of {len(table.replicate_scores)} cells failed: {failed[0].error}",
            args.verbose,
        )
    return EXIT_OK


def cli_dispatch(argv=None) -> int:
    """Run one subcommand; returns the documented exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    if getattr(args, "func", None) is None:
        return _fail(EXIT_USAGE, "usage", "missing subcommand (fit, simulate, score, diagnose, compare)")
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc), getattr(args, "verbose", False))
    except Exception as exc:  # last-resort guard: anything uncaught is a bug
        return _fail(EXIT_RUNTIME, "internal", f"{type(exc).__name__}: {exc}", getattr(args, "verbose", False))


def main(argv=None) -> int:
    return cli_dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
