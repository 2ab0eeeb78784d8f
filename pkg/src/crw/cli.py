"""Command-line interface: dataset ingestion, pipeline orchestration, and
report emission.

Subcommands: ``adjust`` (full estimate -> rank-prob -> weights -> decisions
pipeline on a CSV), ``estimate`` (calibration report only), ``rankprob``
(rank-distribution curves), ``weights`` (weights for explicit model
parameters), ``simulate`` (dilution / power studies from a grid config).

Exit codes: 0 success, 2 config error, 3 data error, 4 solver failure.
All outputs are written atomically (temp file then rename) and are
deterministic functions of (input bytes, config, seed).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .errors import ConfigError, CrwError, DataError, SolverError
from .mtp import TestCollection, plain_bh, rank_by_covariate, weighted_bh, weighted_bonferroni
from .pipeline import calibrate_weights
from .rankprob import RankModel, rank_prob
from .simharness import SimConfig, run_dilution_study, run_power_comparison
from .weights import WeightConfig, crw_weights

ALPHA_GRID = [round(0.01 * k, 2) for k in range(1, 11)]


@dataclass(frozen=True)
class RunConfig:
    """Configuration of an ``adjust``/``estimate`` run; echoes into reports."""

    input: str
    pvalue_col: str = "pvalue"
    covariate_col: str = "covariate"
    id_col: str | None = None
    alpha: float = 0.05
    mode: str = "continuous"
    storey_lambda: float = 0.5
    rankprob_method: str = "auto"
    grid_size: int = 512
    seed: int = 0
    output_dir: str = "."

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mode not in ("continuous", "binary"):
            raise ConfigError(f"mode must be continuous or binary, got {self.mode!r}")
        if self.rankprob_method not in ("auto", "exact", "approx", "mc", "grid"):
            raise ConfigError(f"unknown rankprob method {self.rankprob_method!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        return cls(**d)


class _AtomicWriter:
    """Collects outputs as temp files and renames them all on success."""

    def __init__(self):
        self.pending = []

    def path(self, final_path):
        tmp = f"{final_path}.tmp"
        self.pending.append((tmp, final_path))
        return tmp

    def commit(self):
        for tmp, final in self.pending:
            os.replace(tmp, final)
        self.pending = []

    def abort(self):
        for tmp, _ in self.pending:
            if os.path.exists(tmp):
                os.unlink(tmp)
        self.pending = []


def ingest_csv(path, cfg: RunConfig) -> TestCollection:
    """Parse and validate the input table, then assign covariate ranks.

    Rows with non-numeric or out-of-range p-values abort the run with the
    offending line number (header is line 1).
    """
    if not os.path.exists(path):
        raise DataError(f"input file not found: {path}")
    ids, ps, ys = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file")
        for col in (cfg.pvalue_col, cfg.covariate_col):
            if col not in reader.fieldnames:
                raise DataError(f"{path}: missing column {col!r} (have {reader.fieldnames})")
        if cfg.id_col is not None and cfg.id_col not in reader.fieldnames:
            raise DataError(f"{path}: missing column {cfg.id_col!r}")
        for lineno, row in enumerate(reader, start=2):
            try:
                p = float(row[cfg.pvalue_col])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: non-numeric p-value {row[cfg.pvalue_col]!r}")
            if not (0.0 <= p <= 1.0) or np.isnan(p):
                raise DataError(f"{path}:{lineno}: p-value {p} outside [0, 1]")
            try:
                y = float(row[cfg.covariate_col])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: non-numeric covariate {row[cfg.covariate_col]!r}")
            if np.isnan(y):
                raise DataError(f"{path}:{lineno}: covariate is NaN")
            ids.append(row[cfg.id_col] if cfg.id_col else str(lineno - 1))
            ps.append(p)
            ys.append(y)
    if not ids:
        raise DataError(f"{path}: no data rows")
    return rank_by_covariate(TestCollection(ids, ps, ys))


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_adjust(cfg: RunConfig) -> dict:
    """Full pipeline: calibrate weights from the data, run the weighted and
    unweighted procedures over the alpha grid, write weights CSV, decision
    CSVs (at cfg.alpha) and the run report JSON."""
    records = ingest_csv(cfg.input, cfg)
    cal = calibrate_weights(
        records.pvalues, records.covariates,
        alpha=cfg.alpha, mode=cfg.mode, storey_lambda=cfg.storey_lambda,
        rankprob_method=cfg.rankprob_method, grid_size=cfg.grid_size, seed=cfg.seed,
    )
    n_rej = {"weighted-bh": {}, "weighted-bonferroni": {}, "bh": {}}
    for a in ALPHA_GRID:
        n_rej["weighted-bh"][repr(a)] = weighted_bh(records, cal.weights, a).n_rejections
        n_rej["weighted-bonferroni"][repr(a)] = weighted_bonferroni(records, cal.weights, a).n_rejections
        n_rej["bh"][repr(a)] = plain_bh(records, a).n_rejections

    report = {
        "estimate": cal.estimate.report_dict(tau_at_mean=cal.tau_at_mean),
        "delta": None if cal.delta is None else cal.delta.to_json_dict(),
        "fallback": cal.fallback,
        "n_rejections": n_rej,
        "provenance": {
            "input_sha256": _sha256(cfg.input),
            "config": cfg.to_dict(),
            "version": __version__,
        },
    }

    out = _AtomicWriter()
    os.makedirs(cfg.output_dir, exist_ok=True)
    try:
        cal.weights.to_csv(out.path(os.path.join(cfg.output_dir, "weights.csv")))
        decisions = {
            "decisions_weighted_bh.csv": weighted_bh(records, cal.weights, cfg.alpha),
            "decisions_weighted_bonferroni.csv": weighted_bonferroni(records, cal.weights, cfg.alpha),
            "decisions_bh.csv": plain_bh(records, cfg.alpha),
        }
        for name, rep in decisions.items():
            rep.to_csv(out.path(os.path.join(cfg.output_dir, name)), records, cal.weights)
        _write_json(out.path(os.path.join(cfg.output_dir, "report.json")), report)
        out.commit()
    except Exception:
        out.abort()
        raise
    return report


def cmd_estimate(cfg: RunConfig) -> dict:
    """Calibration report only (no decisions)."""
    records = ingest_csv(cfg.input, cfg)
    cal = calibrate_weights(
        records.pvalues, records.covariates,
        alpha=cfg.alpha, mode=cfg.mode, storey_lambda=cfg.storey_lambda,
        rankprob_method=cfg.rankprob_method, grid_size=cfg.grid_size, seed=cfg.seed,
    )
    report = cal.estimate.report_dict(tau_at_mean=cal.tau_at_mean)
    report["fallback"] = cal.fallback
    out = _AtomicWriter()
    os.makedirs(cfg.output_dir, exist_ok=True)
    try:
        _write_json(out.path(os.path.join(cfg.output_dir, "estimate.json")), report)
        out.commit()
    except Exception:
        out.abort()
        raise
    return report


def cmd_rankprob(m0, m1, tau_alt, method, out_path, *, grid_size=512, draws=100_000, seed=0):
    """Emit (rank, prob_null_query, prob_alt_query) for the requested model."""
    if m0 < 0 or m1 < 0 or m0 + m1 < 1:
        raise ConfigError(f"invalid counts m0={m0}, m1={m1}")
    kwargs = {}
    if method == "grid":
        kwargs["grid_size"] = grid_size
    elif method == "mc":
        kwargs.update(draws=draws, seed=seed)
    cols = {}
    if m0 >= 1:
        null_model = RankModel(m0=m0, m1=m1, tau_alt=tau_alt, tau_query=0.0)
        cols["prob_null_query"] = rank_prob(null_model, method, **kwargs).probs
    if m1 >= 1 and tau_alt > 0:
        alt_model = RankModel(m0=m0, m1=m1, tau_alt=tau_alt, tau_query=tau_alt)
        cols["prob_alt_query"] = rank_prob(alt_model, method, **kwargs).probs
    out = _AtomicWriter()
    try:
        with open(out.path(out_path), "w", newline="\n") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "prob_null_query", "prob_alt_query"])
            for k in range(m0 + m1):
                row = [k + 1]
                for name in ("prob_null_query", "prob_alt_query"):
                    row.append(repr(float(cols[name][k])) if name in cols else "")
                writer.writerow(row)
        out.commit()
    except Exception:
        out.abort()
        raise


def cmd_weights(m0, m1, tau_alt, mean_effect, alpha, mode, method, output_dir,
                *, grid_size=512, draws=100_000, seed=0):
    """Weights for an explicit model (no data): rank distribution for an
    alternative-query test plus the solved weight vector."""
    if m1 < 1:
        raise ConfigError("weights need at least one alternative (m1 >= 1)")
    kwargs = {}
    if method == "grid":
        kwargs["grid_size"] = grid_size
    elif method == "mc":
        kwargs.update(draws=draws, seed=seed)
    model = RankModel(m0=m0, m1=m1, tau_alt=tau_alt, tau_query=tau_alt)
    dist = rank_prob(model, method, **kwargs)
    cfg = WeightConfig(
        m=model.m, alpha=alpha, mean_effect=mean_effect, mode=mode,
        m1=m1 if mode == "binary" else None,
    )
    wv, sol = crw_weights(dist, cfg)
    out = _AtomicWriter()
    os.makedirs(output_dir, exist_ok=True)
    try:
        wv.to_csv(out.path(os.path.join(output_dir, "weights.csv")))
        _write_json(out.path(os.path.join(output_dir, "delta.json")), sol.to_json_dict())
        out.commit()
    except Exception:
        out.abort()
        raise
    return sol


def _sim_config_from_json(doc) -> tuple:
    if not isinstance(doc, dict):
        raise ConfigError("simulation config must be a JSON object")
    study = doc.get("study")
    if study not in ("dilution", "power"):
        raise ConfigError(f"study must be 'dilution' or 'power', got {study!r}")
    base = {
        k: doc[k]
        for k in ("m", "effect_model", "n_groups", "replicates", "alpha", "seed",
                  "storey_lambda", "rho")
        if k in doc
    }
    try:
        cfg = SimConfig(**base)
    except TypeError as exc:
        raise ConfigError(f"bad simulation config: {exc}")
    pi0_grid = doc.get("pi0", [cfg.pi0])
    mu_grid = doc.get("mu_eps", [cfg.mu_eps])
    cv_grid = doc.get("noise_cv", [cfg.noise_cv])
    methods = doc.get("methods", ["crw", "bh"])
    external = doc.get("external_weights")
    for name, grid in (("pi0", pi0_grid), ("mu_eps", mu_grid), ("noise_cv", cv_grid)):
        if not isinstance(grid, list) or not grid:
            raise ConfigError(f"grid field {name!r} must be a non-empty list")
    return study, cfg, pi0_grid, mu_grid, cv_grid, methods, external


def cmd_simulate(config_path, output_dir) -> None:
    """Dispatch a dilution or power study from a JSON grid config and write
    the figure CSV plus the full result JSON."""
    if not os.path.exists(config_path):
        raise ConfigError(f"config file not found: {config_path}")
    with open(config_path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid JSON ({exc})")
    study, cfg, pi0_grid, mu_grid, cv_grid, methods, external = _sim_config_from_json(doc)
    out = _AtomicWriter()
    os.makedirs(output_dir, exist_ok=True)
    try:
        if study == "dilution":
            result = run_dilution_study(pi0_grid, mu_grid, cfg)
            result.write_dilution_csv(out.path(os.path.join(output_dir, "dilution.csv")))
        else:
            result = run_power_comparison(
                pi0_grid, mu_grid, cv_grid, methods, cfg, external_weights_path=external
            )
            result.write_power_csv(out.path(os.path.join(output_dir, "power.csv")))
        result.write_json(out.path(os.path.join(output_dir, "simresult.json")))
        out.commit()
    except Exception:
        out.abort()
        raise


def _add_io_args(sp):
    sp.add_argument("--input", required=True, help="input CSV with header row")
    sp.add_argument("--pvalue-col", default="pvalue")
    sp.add_argument("--covariate-col", default="covariate",
                    help="standardized covariate column (larger = more promising)")
    sp.add_argument("--id-col", default=None)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--mode", choices=["continuous", "binary"], default="continuous")
    sp.add_argument("--lambda", dest="storey_lambda", type=float, default=0.5)
    sp.add_argument("--method", dest="rankprob_method", default="auto",
                    choices=["auto", "exact", "approx", "mc", "grid"])
    sp.add_argument("--grid-size", type=int, default=512)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output-dir", default=".")


def _run_config(args) -> RunConfig:
    return RunConfig(
        input=args.input, pvalue_col=args.pvalue_col, covariate_col=args.covariate_col,
        id_col=args.id_col, alpha=args.alpha, mode=args.mode,
        storey_lambda=args.storey_lambda, rankprob_method=args.rankprob_method,
        grid_size=args.grid_size, seed=args.seed, output_dir=args.output_dir,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crw", description="Covariate rank weighting for multiple testing"
    )
    parser.add_argument("--version", action="version", version=f"crw {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("adjust", help="calibrate weights from data and run weighted decisions")
    _add_io_args(sp)

    sp = sub.add_parser("estimate", help="emit the calibration report for a dataset")
    _add_io_args(sp)

    sp = sub.add_parser("rankprob", help="rank-probability curves for a model")
    sp.add_argument("--m0", type=int, required=True)
    sp.add_argument("--m1", type=int, required=True)
    sp.add_argument("--tau-alt", type=float, default=0.0)
    sp.add_argument("--method", default="auto", choices=["auto", "exact", "approx", "mc", "grid"])
    sp.add_argument("--grid-size", type=int, default=512)
    sp.add_argument("--draws", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="output CSV path")

    sp = sub.add_parser("weights", help="weights for explicit model parameters")
    sp.add_argument("--m0", type=int, required=True)
    sp.add_argument("--m1", type=int, required=True)
    sp.add_argument("--tau-alt", type=float, required=True)
    sp.add_argument("--mean-effect", type=float, required=True)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--mode", choices=["continuous", "binary"], default="continuous")
    sp.add_argument("--method", default="auto", choices=["auto", "exact", "approx", "mc", "grid"])
    sp.add_argument("--grid-size", type=int, default=512)
    sp.add_argument("--draws", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output-dir", default=".")

    sp = sub.add_parser("simulate", help="run a dilution or power study from a JSON grid")
    sp.add_argument("--config", required=True, help="JSON grid configuration")
    sp.add_argument("--output-dir", default=".")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "adjust":
            report = cmd_adjust(_run_config(args))
            est = report["estimate"]
            print(f"pi0_hat={est['pi0_hat']:.4f} m1_hat={est['m1_hat']}", file=sys.stderr)
        elif args.command == "estimate":
            cmd_estimate(_run_config(args))
        elif args.command == "rankprob":
            cmd_rankprob(
                args.m0, args.m1, args.tau_alt, args.method, args.out,
                grid_size=args.grid_size, draws=args.draws, seed=args.seed,
            )
        elif args.command == "weights":
            cmd_weights(
                args.m0, args.m1, args.tau_alt, args.mean_effect, args.alpha,
                args.mode, args.method, args.output_dir,
                grid_size=args.grid_size, draws=args.draws, seed=args.seed,
            )
        elif args.command == "simulate":
            cmd_simulate(args.config, args.output_dir)
    except SolverError as exc:
        print(f"error (solver): {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"error (data): {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"error (config): {exc}", file=sys.stderr)
        return 2
    except CrwError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
