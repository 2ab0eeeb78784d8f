"""Data-driven calibration: null proportion, effect sizes, post-hoc power,
and the regression linking test effects to covariate effects.

All estimators work from p-values and standardized covariate statistics
alone; nothing here sees truth labels.  Effect sizes are on the standardized
one-sided normal scale, so a p-value inverts to an effect through the upper
normal quantile and a covariate statistic is its own effect estimate (clamped
at zero).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._normal import norm_isf, norm_pdf, norm_sf
from .errors import ConfigError, DataError, DegenerateInputError

#: p-values below this floor are clamped before quantile inversion.
P_FLOOR = 1e-15


@dataclass
class EffectEstimate:
    """Null/alternative split plus per-test effect estimates.

    ``eps_hat`` holds the estimated standardized test effect for every test
    (zero outside the estimated-alternative set); ``alt_mask`` marks that set
    (the ``m1_hat`` smallest p-values).  ``power_hat`` is filled in by
    :func:`posthoc_power`.
    """

    pi0_hat: float
    m0_hat: int
    m1_hat: int
    eps_hat: np.ndarray
    mean_alt_effect: float
    alt_mask: np.ndarray
    power_hat: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.eps_hat.size

    def report_dict(self, tau_at_mean=None) -> dict:
        """Summary suitable for a JSON run report."""
        out = {
            "pi0_hat": float(self.pi0_hat),
            "m0_hat": int(self.m0_hat),
            "m1_hat": int(self.m1_hat),
            "mean_alt_effect": float(self.mean_alt_effect),
        }
        if tau_at_mean is not None:
            out["tau_at_mean"] = float(tau_at_mean)
        if self.power_hat is not None and self.m1_hat > 0:
            top = self.power_hat[self.alt_mask]
            out["power_quantiles"] = {
                "median": float(np.median(top)),
                "q90": float(np.quantile(top, 0.9)),
                "mean": float(top.mean()),
            }
        return out


@dataclass(frozen=True)
class RegressionFit:
    """OLS fit of covariate effects on test effects."""

    intercept: float
    slope: float
    residual_sd: float
    tau_at_mean: float


@dataclass(frozen=True)
class EffectDensity:
    """Quadrature descriptor for the alternative effect-size density f(eps).

    A point mass at ``mean`` (the default working assumption) or a normal
    with sd ``sd`` truncated to eps > 0, matching an estimated alternative
    effect distribution.
    """

    kind: str  # "point-mass" | "truncated-normal"
    mean: float
    sd: float = 1.0
    n_nodes: int = 64

    def __post_init__(self):
        if self.kind not in ("point-mass", "truncated-normal"):
            raise ConfigError(f"unknown effect density kind {self.kind!r}")
        if self.mean <= 0:
            raise ConfigError("effect density needs a positive mean")
        if self.kind == "truncated-normal" and self.sd <= 0:
            raise ConfigError("truncated-normal density needs sd > 0")

    def nodes(self):
        """Return (eps, weight) quadrature nodes with weights summing to 1."""
        if self.kind == "point-mass":
            return np.array([self.mean]), np.array([1.0])
        hi = self.mean + 8.5 * self.sd
        xs, ws = np.polynomial.legendre.leggauss(self.n_nodes)
        eps = 0.5 * hi * (xs + 1.0)
        w = 0.5 * hi * ws * norm_pdf((eps - self.mean) / self.sd) / self.sd
        return eps, w / w.sum()


def point_mass(mean) -> EffectDensity:
    return EffectDensity("point-mass", float(mean))


def truncated_normal(mean, sd=1.0, n_nodes=64) -> EffectDensity:
    return EffectDensity("truncated-normal", float(mean), float(sd), n_nodes)


def estimate_pi0(pvalues, lam=0.5) -> float:
    """Tail-based null-proportion estimate #{p > lam} / (m (1 - lam)), capped at 1."""
    p = np.asarray(pvalues, dtype=float)
    if p.size == 0:
        raise DataError("cannot estimate pi0 from an empty p-value vector")
    if not (0.0 < lam < 1.0):
        raise ConfigError(f"lambda must lie in (0, 1), got {lam}")
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise DataError("p-values must lie in [0, 1]")
    return min(1.0, float((p > lam).sum()) / (p.size * (1.0 - lam)))


def estimate_effects(pvalues, m1_hat, *, pi0_hat=None) -> EffectEstimate:
    """Invert the ``m1_hat`` smallest p-values to one-sided normal effects.

    eps_hat = max(0, upper-quantile(p)) for the top set, 0 elsewhere;
    ``mean_alt_effect`` is the mean over the top set.  Ties in p are broken
    by input order.
    """
    p = np.asarray(pvalues, dtype=float)
    m = p.size
    m1_hat = int(m1_hat)
    if not (1 <= m1_hat <= m):
        raise ConfigError(f"m1_hat must lie in [1, {m}], got {m1_hat}")
    order = np.argsort(p, kind="stable")
    top = order[:m1_hat]
    eps = np.zeros(m)
    eps[top] = np.maximum(0.0, norm_isf(np.clip(p[top], P_FLOOR, 1.0)))
    mask = np.zeros(m, dtype=bool)
    mask[top] = True
    if pi0_hat is None:
        pi0_hat = 1.0 - m1_hat / m
    return EffectEstimate(
        pi0_hat=float(pi0_hat),
        m0_hat=m - m1_hat,
        m1_hat=m1_hat,
        eps_hat=eps,
        mean_alt_effect=float(eps[top].mean()),
        alt_mask=mask,
    )


def posthoc_power(estimate: EffectEstimate, alpha) -> np.ndarray:
    """Per-test power at the Bonferroni threshold, from estimated effects.

    power_i = P(Z > z_{alpha/m} - eps_hat_i) for tests in the estimated
    alternative set, 0 for the rest.  Being based on selected top p-values,
    these estimates overstate true power; they are reported as-is.
    """
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    z = norm_isf(alpha / estimate.m)
    power = np.zeros(estimate.m)
    mask = estimate.alt_mask
    power[mask] = norm_sf(z - estimate.eps_hat[mask])
    return power


def with_posthoc_power(estimate: EffectEstimate, alpha) -> EffectEstimate:
    return replace(estimate, power_hat=posthoc_power(estimate, alpha))


def estimate_covariate_effects(covariate_stats, m1_hat) -> np.ndarray:
    """Covariate effect estimates: the ``m1_hat`` largest covariate statistics,
    clamped at zero (a standardized unit-variance covariate is its own effect
    estimate); zero for the rest."""
    y = np.asarray(covariate_stats, dtype=float)
    m = y.size
    m1_hat = int(m1_hat)
    if not (1 <= m1_hat <= m):
        raise ConfigError(f"m1_hat must lie in [1, {m}], got {m1_hat}")
    order = np.argsort(-y, kind="stable")
    tau = np.zeros(m)
    top = order[:m1_hat]
    tau[top] = np.maximum(0.0, y[top])
    return tau


def fit_covariate_regression(test_effects, covariate_effects, mean_alt_effect) -> RegressionFit:
    """OLS of covariate effects on test effects, reporting the fitted
    covariate effect at ``mean_alt_effect``.

    The two vectors must already be restricted (and aligned) to the estimated
    alternative subset; see the pipeline for how the two marginal top sets are
    paired.
    """
    x = np.asarray(test_effects, dtype=float)
    y = np.asarray(covariate_effects, dtype=float)
    if x.size != y.size:
        raise DataError(f"length mismatch: {x.size} test effects vs {y.size} covariate effects")
    if x.size < 3:
        raise DataError(f"need at least 3 pairs to fit the regression, got {x.size}")
    vx = x.var()
    if vx <= 0:
        raise DegenerateInputError("test effects have zero variance; regression undefined")
    slope = float(np.cov(x, y, bias=True)[0, 1] / vx)
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    dof = max(x.size - 2, 1)
    residual_sd = float(np.sqrt((resid * resid).sum() / dof))
    return RegressionFit(
        intercept=intercept,
        slope=slope,
        residual_sd=residual_sd,
        tau_at_mean=float(intercept + slope * mean_alt_effect),
    )
