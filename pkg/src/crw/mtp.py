"""Decision procedures over ranked test collections and their error metrics.

Weighted Bonferroni rejects test i when p_i / w_i <= alpha / m; weighted BH
applies the step-up procedure to the weighted p-values.  Weights are indexed
by covariate rank (rank 1 = largest covariate), so a test record picks up
``weights[rank - 1]``.  Zero-weight tests are never rejected.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .weights import WeightVector


@dataclass
class TestRecord:
    """One hypothesis test."""

    id: str
    pvalue: float
    covariate: float
    test_stat: float | None = None
    rank: int | None = None
    truth: str | None = None  # "null" | "alternative" (simulation only)


class TestCollection:
    """Column-oriented store of test records.

    Keeps ids, p-values, covariates and optional per-test arrays as numpy
    columns; iteration and indexing materialize TestRecord views.
    """

    def __init__(self, ids, pvalues, covariates, test_stats=None, ranks=None, truth=None):
        self.ids = np.asarray(ids, dtype=object)
        self.pvalues = np.asarray(pvalues, dtype=float)
        self.covariates = np.asarray(covariates, dtype=float)
        n = self.ids.size
        if self.pvalues.size != n or self.covariates.size != n:
            raise DataError("ids, pvalues and covariates must have equal length")
        if np.any((self.pvalues < 0) | (self.pvalues > 1)) or np.any(np.isnan(self.pvalues)):
            raise DataError("p-values must lie in [0, 1]")
        self.test_stats = None if test_stats is None else np.asarray(test_stats, dtype=float)
        self.ranks = None if ranks is None else np.asarray(ranks, dtype=int)
        self.truth = None if truth is None else np.asarray(truth, dtype=bool)  # True = alternative

    def __len__(self):
        return self.ids.size

    def __getitem__(self, i) -> TestRecord:
        return TestRecord(
            id=self.ids[i],
            pvalue=float(self.pvalues[i]),
            covariate=float(self.covariates[i]),
            test_stat=None if self.test_stats is None else float(self.test_stats[i]),
            rank=None if self.ranks is None else int(self.ranks[i]),
            truth=None if self.truth is None else ("alternative" if self.truth[i] else "null"),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def alternative_ids(self) -> frozenset:
        if self.truth is None:
            raise DataError("collection carries no truth labels")
        return frozenset(self.ids[self.truth])


@dataclass
class DecisionReport:
    """Rejection set produced by one procedure at one level."""

    method: str
    alpha: float
    rejected: frozenset
    n_rejections: int
    weights_used: WeightVector | None = None
    reject_mask: np.ndarray | None = field(default=None, repr=False)

    def to_csv(self, path, records: TestCollection, weights: WeightVector | None = None):
        w = weights or self.weights_used
        wcol = None
        if w is not None:
            _check_alignment(records, w)
            wcol = w.weights[records.ranks - 1]
        with open(path, "w", newline="\n") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "pvalue", "weight", "weighted_p", "rejected"])
            for i in range(len(records)):
                wi = 1.0 if wcol is None else float(wcol[i])
                wp = records.pvalues[i] / wi if wi > 0 else float("inf")
                writer.writerow(
                    [
                        records.ids[i],
                        repr(float(records.pvalues[i])),
                        repr(wi),
                        repr(float(wp)),
                        int(records.ids[i] in self.rejected),
                    ]
                )

    def summary_dict(self) -> dict:
        return {
            "method": self.method,
            "alpha": float(self.alpha),
            "n_rejections": int(self.n_rejections),
        }


@dataclass
class ErrorMetrics:
    """Aggregated operating characteristics over simulation replicates."""

    power: float
    fwer: float
    fdr: float
    replicates: int

    def to_json_dict(self) -> dict:
        return {
            "power": float(self.power),
            "fwer": float(self.fwer),
            "fdr": float(self.fdr),
            "replicates": int(self.replicates),
        }


def rank_by_covariate(records: TestCollection) -> TestCollection:
    """Assign covariate ranks: rank 1 to the largest covariate, ties broken
    by stable input order (earlier rows get the better rank)."""
    order = np.argsort(-records.covariates, kind="stable")
    ranks = np.empty(len(records), dtype=int)
    ranks[order] = np.arange(1, len(records) + 1)
    return TestCollection(
        records.ids, records.pvalues, records.covariates,
        test_stats=records.test_stats, ranks=ranks, truth=records.truth,
    )


def _check_alignment(records: TestCollection, weights: WeightVector):
    if records.ranks is None:
        raise ConfigError("records must be ranked (rank_by_covariate) before weighting")
    if weights.m != len(records):
        raise ConfigError(f"weight vector length {weights.m} != number of records {len(records)}")


def _weighted_pvalues(records, weights):
    w = weights.weights[records.ranks - 1]
    q = np.full(len(records), np.inf)
    pos = w > 0
    q[pos] = records.pvalues[pos] / w[pos]
    return q, w


def weighted_bonferroni(records: TestCollection, weights: WeightVector, alpha) -> DecisionReport:
    """Reject i iff p_i / w_i <= alpha / m (zero weight: never)."""
    _check_alignment(records, weights)
    q, _ = _weighted_pvalues(records, weights)
    mask = q <= alpha / len(records)
    return DecisionReport(
        method="weighted-bonferroni",
        alpha=float(alpha),
        rejected=frozenset(records.ids[mask]),
        n_rejections=int(mask.sum()),
        weights_used=weights,
        reject_mask=mask,
    )


def _bh_mask(q, alpha):
    m = q.size
    order = np.argsort(q, kind="stable")
    qs = q[order]
    ok = qs <= alpha * np.arange(1, m + 1) / m
    if not ok.any():
        return np.zeros(m, dtype=bool)
    cutoff = qs[np.nonzero(ok)[0][-1]]
    return q <= cutoff


def weighted_bh(records: TestCollection, weights: WeightVector, alpha) -> DecisionReport:
    """Step-up procedure on the weighted p-values q_i = p_i / w_i: find the
    largest j with q_(j) <= j * alpha / m and reject all q <= q_(j)."""
    _check_alignment(records, weights)
    q, _ = _weighted_pvalues(records, weights)
    mask = _bh_mask(q, alpha)
    return DecisionReport(
        method="weighted-bh",
        alpha=float(alpha),
        rejected=frozenset(records.ids[mask]),
        n_rejections=int(mask.sum()),
        weights_used=weights,
        reject_mask=mask,
    )


def plain_bh(records: TestCollection, alpha) -> DecisionReport:
    """Unweighted step-up procedure."""
    mask = _bh_mask(records.pvalues, alpha)
    return DecisionReport(
        method="bh",
        alpha=float(alpha),
        rejected=frozenset(records.ids[mask]),
        n_rejections=int(mask.sum()),
        reject_mask=mask,
    )


def plain_bonferroni(records: TestCollection, alpha) -> DecisionReport:
    mask = records.pvalues <= alpha / len(records)
    return DecisionReport(
        method="bonferroni",
        alpha=float(alpha),
        rejected=frozenset(records.ids[mask]),
        n_rejections=int(mask.sum()),
        reject_mask=mask,
    )


def compute_metrics(reports, truths) -> ErrorMetrics:
    """Power / FWER / FDR over replicates.

    Parameters
    ----------
    reports : sequence of DecisionReport
        One per replicate.
    truths : sequence of sets
        Alternative-hypothesis id sets, aligned with ``reports``.

    Power averages (true rejections) / m1 per replicate (0 when m1 = 0);
    FWER is the fraction of replicates with any false rejection; FDR averages
    V / max(R, 1).
    """
    if len(reports) != len(truths):
        raise DataError(f"{len(reports)} reports vs {len(truths)} truth sets")
    if len(reports) == 0:
        raise DataError("no replicates to aggregate")
    power = []
    any_false = []
    fdp = []
    for rep, truth in zip(reports, truths):
        if truth is None:
            raise DataError("missing truth labels for a replicate")
        truth = frozenset(truth)
        tp = len(rep.rejected & truth)
        fp = rep.n_rejections - tp
        power.append(tp / len(truth) if truth else 0.0)
        any_false.append(fp > 0)
        fdp.append(fp / max(rep.n_rejections, 1))
    return ErrorMetrics(
        power=float(np.mean(power)),
        fwer=float(np.mean(any_false)),
        fdr=float(np.mean(fdp)),
        replicates=len(reports),
    )
