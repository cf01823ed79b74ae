"""Pointwise ELPD estimation: held-out log likelihoods or PSIS-LOO.

PSIS-LOO reweights full-posterior draws toward each leave-one-out posterior
with importance ratios ``1 / p(y_i | theta^s)``; the largest ratios are
replaced by quantiles of a generalized Pareto distribution fitted to the
upper tail, which stabilizes the estimate and yields the ``k_hat``
reliability diagnostic.

References
----------
Vehtari, Gelman, Gabry (2017). Practical Bayesian model evaluation using
    leave-one-out cross-validation and WAIC. Statistics and Computing.
Zhang, Stephens (2009). A new and efficient estimation method for the
    generalized Pareto distribution. Technometrics.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from blendkit.draws import Draws, lpd
from blendkit.errors import ValidationError

K_HAT_THRESHOLD = 0.7
MIN_TAIL = 5


class ElpdMethod(str, Enum):
    TEST_SET = "test_set"
    PSIS_LOO = "psis_loo"


@dataclass(frozen=True)
class PointwiseElpd:
    """Per-datapoint ELPD estimates for one model.

    ``pareto_k`` is set only for PSIS-LOO. ``flagged`` marks points whose
    estimate is unreliable (``k_hat`` above 0.7, or samples dropped because
    they gave the observation zero density).
    """

    values: np.ndarray
    method: ElpdMethod
    pareto_k: np.ndarray | None = None
    flagged: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if np.isnan(values).any() or np.isposinf(values).any():
            raise ValidationError("pointwise elpd values must be finite or -inf")
        object.__setattr__(self, "values", values)
        method = ElpdMethod(self.method)
        object.__setattr__(self, "method", method)
        if (self.pareto_k is not None) != (method is ElpdMethod.PSIS_LOO):
            raise ValidationError("pareto_k must be present exactly when method is psis_loo")
        if self.pareto_k is not None:
            k = np.asarray(self.pareto_k, dtype=float).reshape(-1)
            if k.shape != values.shape:
                raise ValidationError("pareto_k length differs from values length")
            object.__setattr__(self, "pareto_k", k)

    @property
    def n_datapoints(self) -> int:
        return self.values.shape[0]

    @property
    def elpd(self) -> float:
        return float(np.sum(self.values))


@dataclass(frozen=True)
class GpdFit:
    k_hat: float
    sigma_hat: float


def elpd_from_test(d: Draws) -> PointwiseElpd:
    """Use held-out log likelihoods directly: the ELPD terms are the lpd."""
    return PointwiseElpd(values=lpd(d), method=ElpdMethod.TEST_SET)


def log_importance_ratios(d: Draws) -> np.ndarray:
    """Raw LOO log importance ratios, each column shifted to a maximum of 0.

    Samples with ``-inf`` log likelihood have an infinite ratio. They are set
    to ``-inf`` (zero weight) here and excluded from the column's shift;
    callers detect them through ``np.isneginf(d.log_lik)``.
    """
    ll = d.log_lik
    dropped = np.isneginf(ll)
    lw = np.where(dropped, -np.inf, -np.where(dropped, 0.0, ll))
    col_max = np.max(lw, axis=0)
    col_max = np.where(np.isfinite(col_max), col_max, 0.0)
    return lw - col_max


def fit_gpd(tail) -> GpdFit:
    """Fit a generalized Pareto distribution to nonnegative exceedances.

    Profile posterior-mean estimator of Zhang and Stephens, followed by the
    weakly informative shrinkage ``k <- (M k + 5) / (M + 10)``.
    """
    x = np.sort(np.asarray(tail, dtype=float).reshape(-1))
    n = x.shape[0]
    if n < MIN_TAIL:
        raise ValidationError(f"insufficient tail: need at least {MIN_TAIL} values, got {n}")
    if not np.all(np.isfinite(x)) or x[0] < 0:
        raise ValidationError("tail exceedances must be finite and nonnegative")
    if x[-1] <= 0 or x[-1] == x[0]:
        raise ValidationError("degenerate tail: exceedances have zero variance")

    prior_bs = 3.0
    m_est = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m_est / (np.arange(1, m_est + 1, dtype=float) - 0.5))
    quartile = x[int(n / 4 + 0.5) - 1]
    if quartile <= 0:
        # ties at the cutoff give zero exceedances
        quartile = x[x > 0][0]
    b /= prior_bs * quartile
    b += 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    len_scale = n * (np.log(-(b / k)) - k - 1.0)
    with np.errstate(over="ignore"):
        weights = 1.0 / np.exp(len_scale - len_scale[:, None]).sum(axis=1)
    keep = weights >= 10 * np.finfo(float).eps
    weights, b = weights[keep], b[keep]
    weights /= weights.sum()
    b_post = float(np.sum(b * weights))
    k_post = float(np.log1p(-b_post * x).mean())
    sigma = -k_post / b_post
    k_post = (n * k_post + 10 * 0.5) / (n + 10)
    return GpdFit(k_hat=k_post, sigma_hat=sigma)


def gpd_quantile(p: np.ndarray, k: float, sigma: float) -> np.ndarray:
    """Inverse CDF of the zero-location generalized Pareto distribution."""
    p = np.asarray(p, dtype=float)
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def tail_size(n_samples: int) -> int:
    return int(math.ceil(min(0.2 * n_samples, 3.0 * math.sqrt(n_samples))))


def psis_smooth(log_w) -> tuple[np.ndarray, float]:
    """Pareto-smooth a vector of finite log importance weights.

    Returns the smoothed log weights (input order preserved) and ``k_hat``.
    When the tail is shorter than 5 or degenerate the weights pass through
    unchanged and ``k_hat`` is ``-inf``.
    """
    lw = np.array(log_w, dtype=float).reshape(-1)
    s = lw.shape[0]
    m = tail_size(s)
    if m < MIN_TAIL or m >= s:
        return lw, -math.inf

    raw_max = lw.max()
    shifted = lw - raw_max
    order = np.argsort(shifted, kind="stable")
    tail_idx = order[s - m:]
    cutoff = shifted[order[s - m - 1]]
    exp_cutoff = math.exp(cutoff)
    exceed = np.exp(shifted[tail_idx]) - exp_cutoff
    try:
        fit = fit_gpd(exceed)
    except ValidationError:
        return lw, -math.inf
    if not np.isfinite(fit.k_hat) or not np.isfinite(fit.sigma_hat) or fit.sigma_hat <= 0:
        return lw, -math.inf

    probs = (np.arange(1, m + 1) - 0.5) / m
    smoothed = np.log(gpd_quantile(probs, fit.k_hat, fit.sigma_hat) + exp_cutoff)
    out = lw.copy()
    # tail_idx is ascending, so the j-th smallest tail weight gets the j-th quantile
    out[tail_idx] = np.minimum(smoothed, 0.0) + raw_max
    return out, float(fit.k_hat)


def _loo_column(ll_col: np.ndarray, lw_col: np.ndarray) -> tuple[float, float, bool]:
    keep = np.isfinite(lw_col)
    dropped = not keep.all()
    if not keep.any():
        return -math.inf, -math.inf, True
    slw, k = psis_smooth(lw_col[keep])
    ll_keep = ll_col[keep]
    value = float(logsumexp(slw + ll_keep) - logsumexp(slw))
    return value, k, dropped


def elpd_psis_loo(d: Draws) -> PointwiseElpd:
    """Approximate leave-one-out pointwise ELPD by Pareto-smoothed importance sampling."""
    if d.n_samples < 2:
        raise ValidationError("PSIS-LOO needs at least 2 posterior samples")
    lw = log_importance_ratios(d)
    ll = d.log_lik
    n = d.n_datapoints
    values = np.empty(n)
    ks = np.empty(n)
    flagged = np.zeros(n, dtype=bool)
    for i in range(n):
        values[i], ks[i], dropped = _loo_column(ll[:, i], lw[:, i])
        flagged[i] = dropped or ks[i] > K_HAT_THRESHOLD
    if flagged.any():
        warnings.warn(
            f"{int(flagged.sum())} of {n} datapoints have k_hat > {K_HAT_THRESHOLD} "
            "or zero-density samples; their LOO estimates may be unreliable",
            stacklevel=2,
        )
    return PointwiseElpd(values=values, method=ElpdMethod.PSIS_LOO, pareto_k=ks, flagged=flagged)
