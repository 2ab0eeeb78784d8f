"""Synthetic-data studies: dilution of group-based summaries and
power/FWER/FDR comparisons across weighting methods.

Generative model per replicate: m0 = round(m * pi0) nulls with effect 0 and
m1 alternatives whose covariate effect tau_i is either a point mass at
``mu_eps`` or Normal(mu_eps, 1).  The test effect equals tau_i, or, with
``noise_cv > 0``, a draw from Normal(tau_i, noise_cv * tau_i) clamped at zero
(one-sided effects).  Test statistic ~ Normal(eps_i, 1) and covariate ~
Normal(tau_i, 1), independent given the effects; p = upper tail of the test
statistic.  Each replicate owns an RNG stream derived from
(seed, replicate_index) only, so results are reproducible under any
parallel execution order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from ._normal import norm_sf
from .errors import ConfigError, CrwError, DataError
from .mtp import (
    ErrorMetrics,
    TestCollection,
    compute_metrics,
    plain_bh,
    plain_bonferroni,
    rank_by_covariate,
    weighted_bh,
    weighted_bonferroni,
)
from .pipeline import calibrate_weights
from .weights import WeightVector, rdw_weights

KNOWN_METHODS = ("crw", "bh", "rdw", "external-weights")


@dataclass(frozen=True)
class SimConfig:
    """Generative-model and study parameters (a template; grids override
    pi0/mu_eps/noise_cv per cell)."""

    m: int = 10_000
    pi0: float = 0.9
    mu_eps: float = 1.0
    effect_model: str = "normal"  # "point-mass" | "normal"
    noise_cv: float = 0.0
    n_groups: int = 10
    replicates: int = 100
    alpha: float = 0.05
    seed: int = 0
    storey_lambda: float = 0.5
    rho: float = 0.0  # optional equicorrelation of test statistics

    def __post_init__(self):
        if self.m < 10:
            raise ConfigError(f"m must be >= 10, got {self.m}")
        if not (0.0 <= self.pi0 <= 1.0):
            raise ConfigError(f"pi0 must lie in [0, 1], got {self.pi0}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.effect_model not in ("point-mass", "normal"):
            raise ConfigError(f"unknown effect model {self.effect_model!r}")
        if self.noise_cv < 0:
            raise ConfigError("noise_cv must be >= 0")
        if not (0.0 <= self.rho < 1.0):
            raise ConfigError("rho must lie in [0, 1)")


@dataclass
class DilutionCell:
    pi0: float
    mu_eps: float
    top_frac: float
    top_mean_effect: float
    replicates: int


@dataclass
class PowerCell:
    pi0: float
    mu_eps: float
    noise_cv: float
    method: str
    procedure: str  # "weighted-bh" | "weighted-bonferroni"
    metrics: ErrorMetrics
    n_excluded: int = 0


@dataclass
class SimResult:
    config: SimConfig
    power_cells: list = field(default_factory=list)
    dilution_cells: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "config": _config_dict(self.config),
            "power_cells": [
                {
                    "pi0": c.pi0, "mu_eps": c.mu_eps, "noise_cv": c.noise_cv,
                    "method": c.method, "procedure": c.procedure,
                    "metrics": c.metrics.to_json_dict(),
                    "n_excluded": c.n_excluded,
                }
                for c in self.power_cells
            ],
            "dilution_cells": [
                {
                    "pi0": c.pi0, "mu_eps": c.mu_eps, "top_frac": c.top_frac,
                    "top_mean_effect": c.top_mean_effect, "replicates": c.replicates,
                }
                for c in self.dilution_cells
            ],
        }

    def write_json(self, path):
        with open(path, "w", newline="\n") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_dilution_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pi0", "mu_eps", "top_frac", "top_mean_effect"])
            for c in self.dilution_cells:
                writer.writerow(
                    [repr(c.pi0), repr(c.mu_eps), repr(c.top_frac), repr(c.top_mean_effect)]
                )

    def write_power_csv(self, path):
        """One row per (cell x method x procedure x metric)."""
        with open(path, "w", newline="\n") as fh:
            writer = csv.writer(fh)
            writer.writerow(["pi0", "mu_eps", "noise_cv", "method", "procedure", "metric", "value"])
            for c in self.power_cells:
                for metric in ("power", "fwer", "fdr"):
                    writer.writerow(
                        [
                            repr(c.pi0), repr(c.mu_eps), repr(c.noise_cv),
                            c.method, c.procedure, metric,
                            repr(float(getattr(c.metrics, metric))),
                        ]
                    )


def _config_dict(cfg: SimConfig) -> dict:
    return {
        "m": cfg.m, "pi0": cfg.pi0, "mu_eps": cfg.mu_eps,
        "effect_model": cfg.effect_model, "noise_cv": cfg.noise_cv,
        "n_groups": cfg.n_groups, "replicates": cfg.replicates,
        "alpha": cfg.alpha, "seed": cfg.seed,
        "storey_lambda": cfg.storey_lambda, "rho": cfg.rho,
    }


def replicate_rng(cfg: SimConfig, replicate_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(cfg.seed), int(replicate_index)]))


def _draw_replicate(cfg: SimConfig, replicate_index: int):
    """Raw draws for one replicate: (tau, eps, z, y, m0)."""
    rng = replicate_rng(cfg, replicate_index)
    m = cfg.m
    m0 = int(round(m * cfg.pi0))
    m1 = m - m0
    tau = np.zeros(m)
    if m1 > 0:
        if cfg.effect_model == "point-mass":
            tau[m0:] = cfg.mu_eps
        else:
            tau[m0:] = rng.normal(cfg.mu_eps, 1.0, m1)
    eps = tau.copy()
    if cfg.noise_cv > 0 and m1 > 0:
        sd = cfg.noise_cv * np.abs(tau[m0:])
        eps[m0:] = np.maximum(0.0, rng.normal(tau[m0:], sd))
    if cfg.rho > 0:
        shared = rng.normal()
        noise = np.sqrt(1.0 - cfg.rho) * rng.normal(0.0, 1.0, m) + np.sqrt(cfg.rho) * shared
    else:
        noise = rng.normal(0.0, 1.0, m)
    z = eps + noise
    y = tau + rng.normal(0.0, 1.0, m)
    return tau, eps, z, y, m0


def generate_dataset(cfg: SimConfig, replicate_index: int) -> TestCollection:
    """Draw one replicate; the returned collection is ranked and carries
    truth labels (True = alternative)."""
    _, eps, z, y, m0 = _draw_replicate(cfg, replicate_index)
    m = cfg.m
    p = norm_sf(z)
    truth = np.zeros(m, dtype=bool)
    truth[m0:] = True
    coll = TestCollection(
        ids=np.array([f"t{i}" for i in range(m)], dtype=object),
        pvalues=p, covariates=y, test_stats=z, truth=truth,
    )
    return rank_by_covariate(coll)


def run_dilution_study(pi0_grid, mu_grid, cfg: SimConfig) -> SimResult:
    """Top-group composition after sorting by covariate and splitting into
    ``cfg.n_groups`` equal groups: the alternative fraction and the mean true
    test effect of the top group, averaged over replicates."""
    if cfg.n_groups < 2:
        raise ConfigError("dilution study needs n_groups >= 2")
    result = SimResult(config=cfg)
    for pi0 in pi0_grid:
        for mu in mu_grid:
            cell_cfg = replace(cfg, pi0=float(pi0), mu_eps=float(mu))
            fracs = np.empty(cfg.replicates)
            means = np.empty(cfg.replicates)
            for r in range(cfg.replicates):
                _, eps, _, y, m0 = _draw_replicate(cell_cfg, r)
                top = np.argsort(-y, kind="stable")[: cell_cfg.m // cell_cfg.n_groups]
                fracs[r] = (top >= m0).mean()
                means[r] = eps[top].mean()
            result.dilution_cells.append(
                DilutionCell(
                    pi0=float(pi0), mu_eps=float(mu),
                    top_frac=float(fracs.mean()),
                    top_mean_effect=float(means.mean()),
                    replicates=cfg.replicates,
                )
            )
    return result


def rdw_baseline_weights(records: TestCollection, alpha, n_groups) -> WeightVector:
    """Grouped oracle-style weights: split the covariate ranking into
    ``n_groups`` equal groups, estimate each group's effect as the mean of
    the positively clamped test statistics, and weight each group by the
    per-test formula.  Returned indexed by rank."""
    if records.test_stats is None:
        raise DataError("RDW baseline needs test statistics")
    m = len(records)
    order = np.argsort(records.ranks, kind="stable")  # rank 1 first
    group_of_rank = np.concatenate(
        [np.full(len(chunk), g) for g, chunk in enumerate(np.array_split(np.arange(m), n_groups))]
    )
    clamped = np.maximum(0.0, records.test_stats[order])
    effects_by_rank = np.empty(m)
    for g in range(n_groups):
        sel = group_of_rank == g
        effects_by_rank[sel] = clamped[sel].mean()
    try:
        return rdw_weights(effects_by_rank, alpha)
    except CrwError:
        return WeightVector(np.ones(m))


def load_external_weights(path, m) -> WeightVector:
    """Read a per-rank weight CSV (columns rank, weight) produced by an
    outside tool; weights must cover ranks 1..m and average 1 within 1e-3
    (then renormalized exactly)."""
    ranks = []
    ws = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"rank", "weight"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns rank, weight")
        for row in reader:
            ranks.append(int(row["rank"]))
            ws.append(float(row["weight"]))
    if sorted(ranks) != list(range(1, m + 1)):
        raise DataError(f"{path}: weights must cover ranks 1..{m} exactly")
    w = np.empty(m)
    w[np.asarray(ranks) - 1] = ws
    if abs(w.mean() - 1.0) > 1e-3:
        raise DataError(f"{path}: mean weight {w.mean():.6f} is not 1")
    return WeightVector(w / w.mean())


def _method_weights(method, data, cfg, external):
    if method == "bh":
        return None
    if method == "crw":
        cal = calibrate_weights(
            data.pvalues, data.covariates,
            alpha=cfg.alpha, storey_lambda=cfg.storey_lambda,
        )
        return cal.weights
    if method == "rdw":
        return rdw_baseline_weights(data, cfg.alpha, cfg.n_groups)
    if method == "external-weights":
        if external is None:
            raise ConfigError("external-weights method requires a weights file")
        return external
    raise ConfigError(f"unknown method {method!r}; known: {KNOWN_METHODS}")


def run_power_comparison(pi0_grid, mu_grid, cv_grid, methods, cfg: SimConfig,
                         external_weights_path=None) -> SimResult:
    """Per grid cell: generate data, calibrate each method from the data
    alone, apply both weighted procedures, aggregate metrics over replicates.

    CRW calibration failures (solver errors) flag the replicate, which is
    excluded from that method's aggregation with the count reported.
    """
    for meth in methods:
        if meth not in KNOWN_METHODS:
            raise ConfigError(f"unknown method {meth!r}; known: {KNOWN_METHODS}")
    external = None
    if "external-weights" in methods:
        if external_weights_path is None:
            raise ConfigError("external-weights method requires a weights file")
        external = load_external_weights(external_weights_path, cfg.m)
    result = SimResult(config=cfg)
    procedures = (("weighted-bh", weighted_bh), ("weighted-bonferroni", weighted_bonferroni))
    for pi0 in pi0_grid:
        for mu in mu_grid:
            for cv in cv_grid:
                cell_cfg = replace(
                    cfg, pi0=float(pi0), mu_eps=float(mu), noise_cv=float(cv)
                )
                reports = {(meth, proc): [] for meth in methods for proc, _ in procedures}
                truths = {(meth, proc): [] for meth in methods for proc, _ in procedures}
                excluded = {meth: 0 for meth in methods}
                for r in range(cell_cfg.replicates):
                    data = generate_dataset(cell_cfg, r)
                    truth = data.alternative_ids()
                    for meth in methods:
                        try:
                            wv = _method_weights(meth, data, cell_cfg, external)
                        except CrwError:
                            excluded[meth] += 1
                            continue
                        for proc_name, proc in procedures:
                            if wv is None:
                                rep = (plain_bh if proc_name == "weighted-bh"
                                       else plain_bonferroni)(data, cell_cfg.alpha)
                            else:
                                rep = proc(data, wv, cell_cfg.alpha)
                            reports[(meth, proc_name)].append(rep)
                            truths[(meth, proc_name)].append(truth)
                for meth in methods:
                    for proc_name, _ in procedures:
                        reps = reports[(meth, proc_name)]
                        if not reps:
                            continue
                        result.power_cells.append(
                            PowerCell(
                                pi0=float(pi0), mu_eps=float(mu), noise_cv=float(cv),
                                method=meth, procedure=proc_name,
                                metrics=compute_metrics(reps, truths[(meth, proc_name)]),
                                n_excluded=excluded[meth],
                            )
                        )
    return result
