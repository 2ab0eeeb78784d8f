"""End-to-end calibration: p-values + covariates in, rank weights out.

The chain is: null proportion (tail estimator) -> alternative count ->
test-effect estimates from the smallest p-values -> covariate-effect
estimates from the largest covariates -> regression coupling the two effect
scales -> rank distribution at the fitted covariate effect -> weights.

The two effect estimators assign nonzero values to two different index sets
(top by p-value, top by covariate), each of size m1_hat.  The regression
pairs them as order statistics: the j-th largest test effect against the
j-th largest covariate effect.  This couples the two marginal effect scales
without assuming the noisy per-test correspondence, and the fitted value at
the mean test effect is then the mean of the top covariate effects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CrwError
from .estimation import (
    EffectEstimate,
    RegressionFit,
    estimate_covariate_effects,
    estimate_effects,
    estimate_pi0,
    fit_covariate_regression,
    with_posthoc_power,
)
from .rankprob import EXACT_M_CAP, RankDistribution, RankModel, rank_prob
from .weights import DeltaSolution, WeightConfig, WeightVector, crw_weights


@dataclass
class Calibration:
    """Everything the calibration produced, including why it may have
    degraded to uniform weights."""

    estimate: EffectEstimate
    fit: RegressionFit | None
    rank_dist: RankDistribution | None
    weights: WeightVector
    delta: DeltaSolution | None
    fallback: str | None = None

    @property
    def tau_at_mean(self) -> float | None:
        return None if self.fit is None else self.fit.tau_at_mean


def _paired_effect_scales(estimate, tau_hat):
    """Order-statistic pairing of the two marginal top sets."""
    xs = np.sort(estimate.eps_hat[estimate.alt_mask])[::-1]
    ys = np.sort(tau_hat[tau_hat > 0])[::-1]
    if ys.size < xs.size:  # covariates clamped at zero shrink the top set
        ys = np.concatenate([ys, np.zeros(xs.size - ys.size)])
    return xs, ys[: xs.size]


def calibrate_weights(
    pvalues,
    covariates,
    *,
    alpha,
    mode="continuous",
    storey_lambda=0.5,
    rankprob_method="auto",
    grid_size=512,
    quad_panels=16,
    quad_nodes=16,
    mc_draws=100_000,
    seed=0,
    solver="auto",
) -> Calibration:
    """Run the full data-driven calibration.

    Degrades gracefully to uniform weights (recorded in ``fallback``) when
    the data carry no usable signal: no estimated alternatives, a zero mean
    effect, or a non-positive fitted covariate effect.  A constant covariate
    falls into the last bucket, reproducing the unweighted procedures.
    """
    p = np.asarray(pvalues, dtype=float)
    y = np.asarray(covariates, dtype=float)
    m = p.size
    pi0 = estimate_pi0(p, storey_lambda)
    m1 = int(round(m * (1.0 - pi0)))

    def uniform(estimate, fit, reason):
        return Calibration(
            estimate=estimate,
            fit=fit,
            rank_dist=None,
            weights=WeightVector(np.ones(m)),
            delta=None,
            fallback=reason,
        )

    if m1 == 0:
        estimate = EffectEstimate(
            pi0_hat=pi0, m0_hat=m, m1_hat=0,
            eps_hat=np.zeros(m), mean_alt_effect=0.0,
            alt_mask=np.zeros(m, dtype=bool),
        )
        return uniform(estimate, None, "no estimated alternatives")

    estimate = estimate_effects(p, m1, pi0_hat=pi0)
    estimate = with_posthoc_power(estimate, alpha)
    tau_hat = estimate_covariate_effects(y, m1)
    xs, ys = _paired_effect_scales(estimate, tau_hat)
    if xs.size >= 3 and xs.var() > 0:
        fit = fit_covariate_regression(xs, ys, estimate.mean_alt_effect)
    else:
        fit = RegressionFit(
            intercept=float(ys.mean()), slope=0.0, residual_sd=0.0,
            tau_at_mean=float(ys.mean()),
        )
    if estimate.mean_alt_effect <= 0:
        return uniform(estimate, fit, "estimated mean effect is zero")
    tau = max(fit.tau_at_mean, 0.0)
    if tau <= 0:
        return uniform(estimate, fit, "fitted covariate effect is zero")

    model = RankModel(m0=m - m1, m1=m1, tau_alt=tau, tau_query=tau)
    method = rankprob_method
    if method == "auto":
        method = "exact" if m <= EXACT_M_CAP else "approx"
    kwargs = {"quad_panels": quad_panels, "quad_nodes": quad_nodes}
    if method == "grid":
        kwargs = {"grid_size": grid_size, **kwargs}
    elif method == "mc":
        kwargs = {"draws": mc_draws, "seed": seed}
    rank_dist = rank_prob(model, method, **kwargs)

    cfg = WeightConfig(
        m=m, alpha=alpha, mean_effect=estimate.mean_alt_effect,
        mode=mode, m1=m1 if mode == "binary" else None,
    )
    try:
        wv, sol = crw_weights(rank_dist, cfg, solver=solver)
    except CrwError as exc:
        raise type(exc)(f"weight calibration failed: {exc}") from exc
    return Calibration(
        estimate=estimate, fit=fit, rank_dist=rank_dist,
        weights=wv, delta=sol,
    )
