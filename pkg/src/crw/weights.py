"""Power-optimal p-value weights conditioned on covariate rank.

Given the rank distribution P(r = k | effect) of a true-effect test, the
weight for rank k maximizing average power under the mean-weight-1 constraint
is

    w_k = (m / alpha) * SF( E/2 + (1/E) * log(delta / (alpha * P_k)) )

with SF the standard normal upper tail, E the mean alternative effect size
and delta the Lagrange normalizer making the weights average to one.  A
binary-effects variant replaces the argument of the log by
``delta * m / (alpha * m1 * P_k)``.  This module evaluates the formula,
solves for delta (Newton-Raphson with a bisection safeguard, grid-seeded
bisection for weak effects, or pure bisection), evaluates the average-power
objective, solves the non-Taylor weight equation by numerical integration,
and provides the classical per-test oracle weights that need known effect
sizes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._normal import norm_isf, norm_pdf, norm_sf
from .errors import ConfigError, DegenerateInputError, SolverError
from .estimation import EffectDensity
from .rankprob import RankDistribution

_LOG_DELTA_LO = np.log(1e-30)
_LOG_DELTA_HI = np.log(1e30)
_GRID_POINTS = 200


@dataclass(frozen=True)
class WeightConfig:
    """Parameters of the weight formula.

    ``mean_effect`` is E(eps | eps > 0) in continuous mode, or the common
    fixed effect in binary mode (where ``m1`` must be given).
    """

    m: int
    alpha: float
    mean_effect: float
    mode: str = "continuous"
    m1: int | None = None

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mean_effect <= 0:
            raise ConfigError(f"mean_effect must be > 0, got {self.mean_effect}")
        if self.mode not in ("continuous", "binary"):
            raise ConfigError(f"mode must be 'continuous' or 'binary', got {self.mode!r}")
        if self.mode == "binary":
            if self.m1 is None or not (1 <= self.m1 <= self.m):
                raise ConfigError(f"binary mode needs 1 <= m1 <= m, got m1={self.m1}")

    def _log_shift(self) -> float:
        """Additive constant inside the log beyond log(delta) - log(prob)."""
        if self.mode == "binary":
            return float(np.log(self.m) - np.log(self.alpha * self.m1))
        return float(-np.log(self.alpha))


@dataclass
class WeightVector:
    """Non-negative weights indexed by covariate rank, averaging one."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0):
            raise ConfigError("weights must be non-negative")

    @property
    def m(self) -> int:
        return self.weights.size

    def mean(self) -> float:
        return float(self.weights.mean())

    def to_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "weight"])
            for k, w in enumerate(self.weights, start=1):
                writer.writerow([k, repr(float(w))])

    def to_json_dict(self) -> dict:
        return {"weights": [float(w) for w in self.weights]}

    def write_json(self, path):
        with open(path, "w", newline="\n") as fh:
            json.dump(self.to_json_dict(), fh)
            fh.write("\n")


@dataclass
class DeltaSolution:
    """Normalizer value plus solver diagnostics."""

    delta: float
    solver: str
    iterations: int
    residual: float
    zero_prob_count: int = 0

    def to_json_dict(self) -> dict:
        return {
            "delta": float(self.delta),
            "solver": self.solver,
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "zero_prob_count": int(self.zero_prob_count),
        }


def weight_at(rank_prob, delta, cfg: WeightConfig):
    """Evaluate the weight formula at one or many rank probabilities.

    Zero probabilities (log singularity from numerical underflow in deep
    tails) yield weight 0; callers can count them via ``crw_weights``
    diagnostics.  Scalar input returns a float.
    """
    if delta <= 0:
        raise ConfigError(f"delta must be > 0, got {delta}")
    p = np.asarray(rank_prob, dtype=float)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    e = cfg.mean_effect
    out = np.zeros(p.shape)
    pos = p > 0.0
    if pos.any():
        arg = e / 2.0 + (np.log(delta) + cfg._log_shift() - np.log(p[pos])) / e
        out[pos] = (cfg.m / cfg.alpha) * norm_sf(arg)
    return float(out[0]) if scalar else out


def _mean_weight_and_slope(probs, log_delta, cfg):
    """Mean weight and its derivative with respect to log(delta)."""
    e = cfg.mean_effect
    pos = probs > 0.0
    arg = e / 2.0 + (log_delta + cfg._log_shift() - np.log(probs[pos])) / e
    scale = cfg.m / cfg.alpha
    mean_w = scale * norm_sf(arg).sum() / cfg.m
    slope = -scale * norm_pdf(arg).sum() / (cfg.m * e)
    return mean_w, slope


def _check_rank_dist(rank_dist, cfg):
    probs = np.asarray(rank_dist.probs, dtype=float)
    if probs.size != cfg.m:
        raise ConfigError(f"rank distribution length {probs.size} != cfg.m {cfg.m}")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise ConfigError("rank distribution is not normalized")
    if not (probs > 0).any():
        raise DegenerateInputError("all rank probabilities are zero")
    return probs


def _bisect(f, lo, hi, flo, fhi, *, xtol=1e-9, ftol=1e-8, max_iter=300):
    """Bisection for a decreasing f with f(lo) > 0 > f(hi)."""
    it = 0
    fmid = flo
    while it < max_iter:
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        it += 1
        if fmid > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= xtol and abs(fmid) <= ftol:
            return 0.5 * (lo + hi), it, abs(f(0.5 * (lo + hi)))
    mid = 0.5 * (lo + hi)
    return mid, it, abs(f(mid))


def solve_delta(rank_dist: RankDistribution, cfg: WeightConfig, *, solver="auto",
                tol=1e-8) -> DeltaSolution:
    """Find delta such that the weights average to one.

    The mean weight is continuous and strictly decreasing in delta, falling
    from m/alpha toward zero, so a root always exists in the working bracket.
    ``solver`` picks the path: 'newton-raphson' (bracket-safeguarded),
    'grid' (log-spaced pre-scan seeding a bisection), 'bisection', or 'auto'
    which uses Newton-Raphson for mean_effect >= 1 and the grid path below
    (weak effects make the weight profile flat and Newton steps unreliable).
    """
    probs = _check_rank_dist(rank_dist, cfg)
    n_zero = int((probs == 0).sum())
    if solver == "auto":
        solver = "newton-raphson" if cfg.mean_effect >= 1.0 else "grid"
    if solver not in ("newton-raphson", "grid", "bisection"):
        raise ConfigError(f"unknown solver {solver!r}")

    def g(x):
        return _mean_weight_and_slope(probs, x, cfg)[0] - 1.0

    lo, hi = _LOG_DELTA_LO, _LOG_DELTA_HI
    glo, ghi = g(lo), g(hi)
    if not (glo > 0 > ghi):
        raise SolverError(
            "mean weight does not bracket 1 on delta in [1e-30, 1e+30]",
            residual=min(abs(glo), abs(ghi)),
            trace=[("lo", glo), ("hi", ghi)],
        )

    iterations = 0
    if solver == "bisection":
        x, iterations, resid = _bisect(g, lo, hi, glo, ghi, ftol=tol)
    elif solver == "grid":
        xs = np.linspace(lo, hi, _GRID_POINTS)
        vals = np.array([g(x) for x in xs])
        iterations = _GRID_POINTS
        idx = np.nonzero(vals <= 0)[0]
        if idx.size == 0 or idx[0] == 0:
            raise SolverError("grid pre-scan found no sign change", residual=float(np.abs(vals).min()))
        i = idx[0]
        x, it2, resid = _bisect(g, xs[i - 1], xs[i], vals[i - 1], vals[i], ftol=tol)
        iterations += it2
    else:
        # Newton-Raphson on log(delta), falling back to bisection whenever the
        # step leaves the current bracket or stalls.
        uniform_guess = (
            np.log(cfg.alpha / cfg.m)
            + cfg.mean_effect * (norm_isf(cfg.alpha / cfg.m) - cfg.mean_effect / 2.0)
        )
        x = float(np.clip(uniform_guess, lo, hi))
        blo, bhi = lo, hi
        resid = None
        for iterations in range(1, 101):
            mean_w, slope = _mean_weight_and_slope(probs, x, cfg)
            fx = mean_w - 1.0
            resid = abs(fx)
            if resid <= tol * 1e-2 or (bhi - blo) <= 1e-12:
                break
            if fx > 0:
                blo = x
            else:
                bhi = x
            step_ok = slope < 0
            if step_ok:
                x_new = x - fx / slope
                step_ok = blo < x_new < bhi
            if not step_ok:
                x_new = 0.5 * (blo + bhi)
            x = x_new
        else:
            resid = abs(g(x))
        if resid > tol:
            # The Newton path stalled (flat objective); finish with bisection.
            x, it2, resid = _bisect(g, blo, bhi, g(blo), g(bhi), ftol=tol)
            iterations += it2

    resid = abs(g(x))
    if resid > 1e-6:
        raise SolverError(
            f"delta solver ({solver}) did not reach residual 1e-6", residual=resid
        )
    return DeltaSolution(
        delta=float(np.exp(x)),
        solver=solver,
        iterations=iterations,
        residual=float(resid),
        zero_prob_count=n_zero,
    )


def crw_weights(rank_dist: RankDistribution, cfg: WeightConfig, *, solver="auto"):
    """Solve for delta and evaluate the weight at every rank.

    Returns (WeightVector, DeltaSolution).  Weights are non-increasing in
    rank wherever the rank probabilities are.
    """
    sol = solve_delta(rank_dist, cfg, solver=solver)
    w = weight_at(rank_dist.probs, sol.delta, cfg)
    return WeightVector(w), sol


def average_power(weights: WeightVector, rank_dist: RankDistribution, cfg: WeightConfig) -> float:
    """Average power objective at the point effect E = cfg.mean_effect.

    (1/m) * sum_k SF(z_{alpha w_k / m} - E) * m * P(r_k | E); ranks with zero
    weight contribute nothing.
    """
    w = weights.weights
    probs = np.asarray(rank_dist.probs, dtype=float)
    if w.size != probs.size:
        raise ConfigError("weights and rank distribution lengths differ")
    out = np.zeros(w.size)
    pos = w > 0
    q = np.clip(cfg.alpha * w[pos] / cfg.m, 0.0, 1.0)
    out[pos] = norm_sf(norm_isf(q) - cfg.mean_effect) * probs[pos]
    return float(out.sum())


def rdw_weights(effect_sizes, alpha) -> WeightVector:
    """Per-test oracle weights from known (or estimated) effect sizes.

    w_i = (m/alpha) * SF(eps_i / 2 + c / eps_i) for eps_i > 0, zero otherwise,
    with c solved so the weights sum to m.  Tests with identical effects get
    identical weights, so grouped estimates yield grouped weights.
    """
    eps = np.asarray(effect_sizes, dtype=float)
    m = eps.size
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    pos = eps > 0.0
    if not pos.any():
        raise DegenerateInputError(
            "all effect sizes are zero; no weighting possible (fall back to unit weights)"
        )
    ep = eps[pos]

    def total(c):
        return (m / alpha) * norm_sf(ep / 2.0 + c / ep).sum() - m

    lo, hi = -1.0, 1.0
    for _ in range(80):
        if total(lo) > 0:
            break
        lo *= 2.0
    for _ in range(80):
        if total(hi) < 0:
            break
        hi *= 2.0
    flo, fhi = total(lo), total(hi)
    if not (flo > 0 > fhi):
        raise SolverError("could not bracket the normalizing constant", residual=min(abs(flo), abs(fhi)))
    c, _, resid = _bisect(total, lo, hi, flo, fhi, xtol=1e-13 * max(1.0, abs(hi)), ftol=1e-9 * m)
    if resid > 1e-6 * m:
        raise SolverError("oracle-weight normalization did not converge", residual=resid)
    w = np.zeros(m)
    w[pos] = (m / alpha) * norm_sf(ep / 2.0 + c / ep)
    return WeightVector(w)


def exact_weights(rank_probs_fn, effect_density: EffectDensity, cfg: WeightConfig,
                  *, sum_tol=1e-4, max_outer=200):
    """Weights from the pre-Taylor optimality condition by numerical integration.

    For each rank k and a trial delta, solves

        integral exp(z_{alpha w/m} * eps - eps^2 / 2) P(r_k | eps) f(eps) deps
            = delta / alpha

    for w by monotone root-finding in z = z_{alpha w / m} (the left side is
    increasing in z), with quadrature over eps given by ``effect_density``;
    an outer bisection adjusts delta until the weights sum to m within
    ``sum_tol * m``.

    Parameters
    ----------
    rank_probs_fn : callable
        eps -> length-m array of rank probabilities P(r_k | eps).
    """
    eps, om = effect_density.nodes()
    pmat = np.stack([np.asarray(rank_probs_fn(e), dtype=float) for e in eps])
    if not np.isfinite(pmat).all():
        raise SolverError("rank probabilities are not finite over the effect quadrature")
    m = cfg.m
    if pmat.shape[1] != m:
        raise ConfigError(f"rank_probs_fn returned length {pmat.shape[1]}, expected {m}")
    with np.errstate(divide="ignore"):
        base = np.log(om)[:, None] - 0.5 * eps[:, None] ** 2 + np.log(pmat)  # (J, m)
    usable = np.isfinite(base).any(axis=0)
    scale = m / cfg.alpha

    def weights_for(log_delta):
        target = log_delta - np.log(cfg.alpha)
        if eps.size == 1:
            z = (target - base[0, usable]) / eps[0]
        else:
            # A(z) = logsumexp(base + z * eps) is convex increasing in z;
            # Newton from the right converges monotonically.
            z = np.full(usable.sum(), 45.0)
            bu = base[:, usable]
            for _ in range(200):
                a = logsumexp(bu + z[None, :] * eps[:, None], axis=0)
                soft = np.exp(bu + z[None, :] * eps[:, None] - a[None, :])
                da = (soft * eps[:, None]).sum(axis=0)
                step = (target - a) / da
                z = z + step
                if np.max(np.abs(step)) < 1e-12:
                    break
            else:
                bad = int(np.argmax(np.abs(step)))
                raise SolverError(f"inner weight equation failed at rank {bad + 1}")
        w = np.zeros(m)
        w[usable] = scale * norm_sf(z)
        return w

    def total(log_delta):
        return weights_for(log_delta).sum() - m

    lo, hi = _LOG_DELTA_LO, _LOG_DELTA_HI
    flo, fhi = total(lo), total(hi)
    if not (flo > 0 > fhi):
        raise SolverError("exact-weight normalization does not bracket", residual=min(abs(flo), abs(fhi)))
    it = 0
    while it < max_outer:
        mid = 0.5 * (lo + hi)
        fm = total(mid)
        it += 1
        if abs(fm) <= sum_tol * m:
            break
        if fm > 0:
            lo = mid
        else:
            hi = mid
    else:
        raise SolverError("exact-weight outer loop did not converge", residual=abs(fm) / m)
    w = weights_for(mid)
    sol = DeltaSolution(
        delta=float(np.exp(mid)),
        solver="bisection",
        iterations=it,
        residual=float(abs(w.mean() - 1.0)),
        zero_prob_count=int(m - usable.sum()),
    )
    return WeightVector(w), sol
