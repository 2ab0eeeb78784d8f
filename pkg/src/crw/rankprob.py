"""Distribution of a test's covariate rank given its covariate effect size.

A collection holds ``m0`` null covariates (standard normal) and ``m1``
alternative covariates (normal with mean ``tau_alt``, unit variance).  For a
queried test whose own covariate effect is ``tau_query`` (0 or ``tau_alt``),
the covariate rank ``r`` (1 = largest covariate) satisfies ``r = 1 + S0 + S1``
where, conditional on the queried covariate value ``t``,

* ``S0`` ~ Binomial(#null others,  1 - F0(t)),   F0(t) = Phi(t)
* ``S1`` ~ Binomial(#alt others,   1 - F1(t)),   F1(t) = Phi(t - tau_alt)

and the marginal law of ``r`` is the expectation of the binomial-sum pmf over
``t`` ~ Normal(tau_query, 1).  Three evaluation routes are provided: exact
convolution, a normal approximation of the binomial sum, and Monte Carlo over
``t``; plus a grid/interpolation mode for very large ``m``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from ._normal import binom_pmf_table, gauss_legendre_normal, norm_cdf, norm_sf
from .errors import CapacityError, ConfigError, InvalidModelError

#: Largest m handled by the O(m^2)-per-node exact convolution.
EXACT_M_CAP = 2000

#: Below this total count the normal approximation is flagged as out of its
#: comfort zone (computation still proceeds).
NORMAL_APPROX_FLOOR = 10

_DEGENERATE_VAR = 1e-12


@dataclass(frozen=True)
class RankModel:
    """Mixture configuration for the covariate ranking.

    Parameters
    ----------
    m0, m1 : int
        Counts of true-null and true-alternative covariates; m0 + m1 >= 1.
    tau_alt : float
        Common (standardized) covariate effect size of the alternatives.
    tau_query : float
        Effect size of the queried test; must be 0 or ``tau_alt``.
    null_cdf : str
        Marker for the null covariate CDF assumption; only the standard
        normal is supported.
    """

    m0: int
    m1: int
    tau_alt: float = 0.0
    tau_query: float = 0.0
    null_cdf: str = "standard-normal"

    def __post_init__(self):
        if self.m0 < 0 or self.m1 < 0 or self.m0 + self.m1 < 1:
            raise InvalidModelError(
                f"need m0 >= 0, m1 >= 0, m0 + m1 >= 1; got m0={self.m0}, m1={self.m1}"
            )
        if self.tau_alt < 0:
            raise InvalidModelError(f"tau_alt must be >= 0, got {self.tau_alt}")
        if self.tau_query not in (0.0, self.tau_alt):
            raise InvalidModelError(
                f"tau_query must be 0 or tau_alt={self.tau_alt}, got {self.tau_query}"
            )
        if self.tau_query > 0 and self.m1 == 0:
            raise InvalidModelError("tau_query > 0 requires at least one alternative (m1 >= 1)")
        if self.null_cdf != "standard-normal":
            raise ConfigError(f"unsupported null covariate model: {self.null_cdf!r}")

    @property
    def m(self) -> int:
        return self.m0 + self.m1

    def _trial_counts(self):
        """Binomial trial counts for the others, split by the query's origin."""
        if self.tau_query == 0:
            return self.m0 - 1, self.m1
        return self.m0, self.m1 - 1


@dataclass
class RankDistribution:
    """P(r = k | tau) over ranks k = 1..m, plus how it was computed."""

    probs: np.ndarray
    method: str
    integration_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)

    @property
    def m(self) -> int:
        return self.probs.size

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "prob"])
            for k, p in enumerate(self.probs, start=1):
                writer.writerow([k, repr(float(p))])

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "probs": [float(p) for p in self.probs],
            "integration_meta": self.integration_meta,
        }

    def write_json(self, path):
        with open(path, "w", newline="\n") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def null_cdf_at(t) -> float:
    """F0(t): CDF of a null covariate (standard normal)."""
    return norm_cdf(t)


def alt_cdf_at(t, tau_alt) -> float:
    """F1(t): CDF of an alternative covariate, all alternatives sharing
    effect size ``tau_alt`` (point-mass alternative)."""
    if tau_alt < 0:
        raise ConfigError(f"tau_alt must be >= 0, got {tau_alt}")
    return norm_cdf(np.asarray(t, dtype=float) - tau_alt)


def _normalize(raw, method, meta):
    raw = np.maximum(raw, 0.0)
    total = raw.sum()
    if total <= 0:
        raise ConfigError("rank probabilities integrated to zero mass")
    meta = dict(meta)
    meta["raw_mass"] = float(total)
    return RankDistribution(raw / total, method, meta)


def rank_prob_exact(model: RankModel, *, quad_panels=16, quad_nodes=16) -> RankDistribution:
    """Rank distribution by exact binomial convolution.

    For each quadrature node t the pmf of S0 + S1 is the discrete convolution
    of the two binomial pmfs; the node results are averaged under the
    Normal(tau_query, 1) law of t.  Cost is O(m0 * m1) per node, hence the
    ``EXACT_M_CAP`` guard.
    """
    m = model.m
    if m > EXACT_M_CAP:
        raise CapacityError(
            f"m={m} exceeds the exact-convolution cap ({EXACT_M_CAP}); "
            "use rank_prob_normal_approx or rank_prob_grid"
        )
    n0, n1 = model._trial_counts()
    t, w = gauss_legendre_normal(model.tau_query, quad_panels, quad_nodes)
    f0 = norm_cdf(t)
    f1 = norm_cdf(t - model.tau_alt)
    acc = np.zeros(m)
    for wj, p0, p1 in zip(w, 1.0 - f0, 1.0 - f1):
        pmf0 = binom_pmf_table(n0, np.array([p0]))[0]
        pmf1 = binom_pmf_table(n1, np.array([p1]))[0]
        acc += wj * np.convolve(pmf0, pmf1)
    meta = {
        "scheme": "composite-gauss-legendre",
        "nodes": int(t.size),
    }
    return _normalize(acc, "exact-convolution", meta)


def _moments(model, f0, f1):
    """Mean/variance of the rank r = S0 + S1 + 1 conditional on t."""
    n0, n1 = model._trial_counts()
    mu = n0 * (1.0 - f0) + n1 * (1.0 - f1) + 1.0
    var = n0 * (1.0 - f0) * f0 + n1 * (1.0 - f1) * f1
    return mu, var


def rank_prob_normal_approx(
    model: RankModel, *, quad_panels=16, quad_nodes=16, ranks=None
) -> RankDistribution:
    """Rank distribution via a normal approximation of the binomial sum.

    Conditional on t the rank is S0 + S1 + 1; its pmf is approximated by the
    normal density with matching mean and variance evaluated at the rank, then
    averaged over t and renormalized.  Quadrature nodes where the conditional
    variance degenerates (|t| so extreme that every other covariate falls on
    one side) carry negligible normal weight and are dropped.

    ``ranks`` restricts evaluation to a subset of ranks (used by the grid
    mode); the result is then unnormalized density values, not a distribution.
    """
    m = model.m
    meta = {
        "scheme": "composite-gauss-legendre",
        "nodes": quad_panels * quad_nodes,
    }
    if m < NORMAL_APPROX_FLOOR:
        meta["warning"] = f"m={m} below approximation floor {NORMAL_APPROX_FLOOR}"
    t, w = gauss_legendre_normal(model.tau_query, quad_panels, quad_nodes)
    f0 = norm_cdf(t)
    f1 = norm_cdf(t - model.tau_alt)
    mu, var = _moments(model, f0, f1)
    keep = var > _DEGENERATE_VAR
    mu, var, w = mu[keep], var[keep], w[keep]
    sd = np.sqrt(var)
    k = np.arange(1, m + 1, dtype=float) if ranks is None else np.asarray(ranks, dtype=float)
    zs = (k[:, None] - mu[None, :]) / sd[None, :]
    dens = np.exp(-0.5 * zs * zs) / (np.sqrt(2.0 * np.pi) * sd[None, :])
    raw = dens @ w
    if ranks is not None:
        return RankDistribution(raw, "normal-approx", meta)
    return _normalize(raw, "normal-approx", meta)


def rank_prob_mc(model: RankModel, draws, seed, *, batch=200_000) -> RankDistribution:
    """Rank distribution by Monte Carlo integration over t.

    Importance sampling with the natural proposal Normal(tau_query, 1), so
    all importance weights are one; the conditional binomial-sum pmf is still
    evaluated exactly (batched log-space pmfs convolved by FFT).  Deterministic
    for a fixed seed.  ``integration_meta['se']`` carries the per-rank Monte
    Carlo standard errors.
    """
    draws = int(draws)
    if draws < 1_000:
        raise ConfigError(f"draws must be >= 1000, got {draws}")
    m = model.m
    n0, n1 = model._trial_counts()
    nfft = 1
    while nfft < m:
        nfft *= 2
    rng = np.random.default_rng(seed)
    acc = np.zeros(m)
    acc_sq = np.zeros(m)
    done = 0
    while done < draws:
        b = min(batch, draws - done)
        t = rng.normal(model.tau_query, 1.0, b)
        pmf0 = binom_pmf_table(n0, 1.0 - norm_cdf(t))
        pmf1 = binom_pmf_table(n1, 1.0 - norm_cdf(t - model.tau_alt))
        conv = np.fft.irfft(np.fft.rfft(pmf0, nfft) * np.fft.rfft(pmf1, nfft), nfft)[:, :m]
        np.maximum(conv, 0.0, out=conv)
        acc += conv.sum(axis=0)
        acc_sq += np.einsum("ij,ij->j", conv, conv)
        done += b
    mean = acc / draws
    var = np.maximum(acc_sq / draws - mean * mean, 0.0)
    se = np.sqrt(var / draws)
    meta = {"draws": draws, "seed": seed, "se": se}
    return _normalize(mean, "monte-carlo", meta)


def rank_prob_grid(model: RankModel, grid_size, *, quad_panels=16, quad_nodes=16) -> RankDistribution:
    """Normal-approximation values on a coarse rank grid, filled in by
    monotone piecewise-cubic interpolation.

    Intended for m in the tens of thousands, where evaluating (and storing
    intermediate work for) every rank is wasteful; the interpolant also
    smooths out integration noise.  For m <= grid_size the full evaluation is
    returned directly.
    """
    grid_size = int(grid_size)
    if grid_size < 64:
        raise ConfigError(f"grid_size must be >= 64, got {grid_size}")
    m = model.m
    if m <= grid_size:
        dist = rank_prob_normal_approx(model, quad_panels=quad_panels, quad_nodes=quad_nodes)
        dist.method = "normal-approx-grid"
        dist.integration_meta["grid_size"] = grid_size
        return dist
    knots = np.unique(np.round(np.linspace(1, m, grid_size)).astype(int))
    dens = rank_prob_normal_approx(
        model, quad_panels=quad_panels, quad_nodes=quad_nodes, ranks=knots
    )
    interp = PchipInterpolator(knots.astype(float), dens.probs)
    raw = interp(np.arange(1, m + 1, dtype=float))
    meta = dict(dens.integration_meta)
    meta["grid_size"] = grid_size
    return _normalize(raw, "normal-approx-grid", meta)


def rank_prob(model: RankModel, method="auto", **kwargs) -> RankDistribution:
    """Dispatch on method name ('auto' picks exact below the cap)."""
    if method == "auto":
        method = "exact" if model.m <= EXACT_M_CAP else "approx"
    if method == "exact":
        return rank_prob_exact(model, **kwargs)
    if method == "approx":
        return rank_prob_normal_approx(model, **kwargs)
    if method == "mc":
        return rank_prob_mc(model, **kwargs)
    if method == "grid":
        return rank_prob_grid(model, **kwargs)
    raise ConfigError(f"unknown rank probability method {method!r}")
