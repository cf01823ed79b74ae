"""Full-Bayes pooled stacking and hierarchical covariate-dependent stacking."""

from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from blendkit.bayes.covariates import CovariateInfo, CovariateSet, covariate_info, transform_covariates
from blendkit.bayes.diagnostics import summarize
from blendkit.bayes.hmc import HmcConfig, hmc_sample
from blendkit.bayes.models import (
    HierLayout,
    Priors,
    _log_softmax_ref,
    log_post_hier,
    log_post_pooled,
)
from blendkit.errors import ValidationError
from blendkit.weighting import WeightMatrix, _shifted_densities

RHAT_WARN = 1.05


class FitKind(str, Enum):
    BAYES_POOLED = "bayes_pooled"
    HIERARCHICAL = "hierarchical"


@dataclass(frozen=True)
class StackingCoefficients:
    """Posterior-mean regression coefficients for the ``K - 1`` free scores.

    The last model's score is fixed at zero and is not stored.
    """

    alpha: np.ndarray
    beta_cont: np.ndarray
    beta_disc: np.ndarray
    pooling: dict[str, float] | None = None

    def to_dict(self) -> dict:
        d = {
            "alpha": self.alpha.tolist(),
            "beta_cont": self.beta_cont.tolist(),
            "beta_disc": self.beta_disc.tolist(),
        }
        if self.pooling is not None:
            d["pooling"] = dict(self.pooling)
        return d


@dataclass
class StackingFit:
    kind: FitKind
    model_names: list[str]
    weights: WeightMatrix
    samples: np.ndarray  # (chains, draws, dim)
    param_names: list[str]
    diagnostics: dict
    converged: bool
    coefficients: StackingCoefficients | None = None
    covariate_info: CovariateInfo | None = None
    layout: HierLayout | None = None
    priors: Priors = field(default_factory=Priors)

    @property
    def flat_samples(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[-1])


def _names(lpd_matrix: np.ndarray, model_names: Sequence[str] | None) -> list[str]:
    k = lpd_matrix.shape[0]
    if k < 2:
        raise ValidationError(f"need at least 2 models, got {k}")
    names = list(model_names) if model_names is not None else [f"model_{j}" for j in range(k)]
    if len(names) != k:
        raise ValidationError(f"{len(names)} model names for {k} lpd rows")
    return names


def _diagnostics(result, names) -> tuple[dict, bool]:
    per_param = summarize(result.samples, names)
    rhats = [v["rhat"] for v in per_param.values() if np.isfinite(v["rhat"])]
    max_rhat = max(rhats) if rhats else float("nan")
    converged = bool(rhats) and max_rhat <= RHAT_WARN
    if not converged:
        warnings.warn(f"sampler may not have converged: max split R-hat {max_rhat:.3f}", stacklevel=3)
    diag = {
        "converged": converged,
        "max_rhat": max_rhat,
        "min_ess": min(v["ess"] for v in per_param.values()),
        "divergences": result.divergences,
        "accept_rate": [c.accept_rate for c in result.chain_stats],
        "step_size": [c.step_size for c in result.chain_stats],
        "parameters": per_param,
    }
    return diag, converged


def _mean_weights(draws: np.ndarray, design: np.ndarray, layout: HierLayout) -> np.ndarray:
    """Posterior mean of per-draw softmax weights, ``K x N``."""
    u = layout.unpack(draws)
    scores = u["alpha"][:, :, None] + np.einsum("dkp,np->dkn", u["beta"], design)
    acc = np.zeros((layout.n_models, design.shape[0]))
    for s in scores:
        acc += np.exp(_log_softmax_ref(s))
    w = acc / scores.shape[0]
    return w / w.sum(axis=0, keepdims=True)


def fit_bayes_stacking(
    lpd_matrix,
    model_names: Sequence[str] | None = None,
    dirichlet_alpha=None,
    config: HmcConfig | None = None,
) -> StackingFit:
    """Sample the complete-pooling stacking posterior and average the weight draws."""
    lpd_matrix = np.asarray(lpd_matrix, dtype=float)
    names = _names(lpd_matrix, model_names)
    k = len(names)
    alpha = np.ones(k) if dirichlet_alpha is None else np.asarray(dirichlet_alpha, dtype=float)
    if lpd_matrix.shape[1]:
        _shifted_densities(lpd_matrix)

    result = hmc_sample(lambda v: log_post_pooled(v, lpd_matrix, alpha), k - 1, config)
    layout = HierLayout(n_models=k, n_cont=0, n_disc=0)
    weights = _mean_weights(result.flat, np.zeros((1, 0)), layout)
    pnames = [f"score[{m}]" for m in names[:-1]]
    diag, converged = _diagnostics(result, pnames)
    return StackingFit(
        kind=FitKind.BAYES_POOLED,
        model_names=names,
        weights=WeightMatrix(names, weights),
        samples=result.samples,
        param_names=pnames,
        diagnostics=diag,
        converged=converged,
        layout=layout,
        priors=Priors(w_prior=tuple(alpha)),
    )


def fit_hier_stacking(
    lpd_matrix,
    covariates: CovariateSet | None = None,
    model_names: Sequence[str] | None = None,
    pooling: bool = False,
    priors: Priors | None = None,
    config: HmcConfig | None = None,
) -> StackingFit:
    """Hierarchical stacking: weights are a softmax regression on covariates."""
    lpd_matrix = np.asarray(lpd_matrix, dtype=float)
    names = _names(lpd_matrix, model_names)
    n = lpd_matrix.shape[1]
    priors = priors or Priors()
    covariates = covariates or CovariateSet()
    if covariates.n is not None and covariates.n != n:
        raise ValidationError(f"covariates have length {covariates.n}, lpd has {n} datapoints")
    info = covariate_info(covariates)
    design = transform_covariates(covariates, info)
    if design.shape[0] != n:
        design = np.zeros((n, 0))
    if pooling and design.shape[1] < 3:
        raise ValidationError(
            f"partial pooling needs at least 3 covariate columns, got {design.shape[1]}"
        )
    _shifted_densities(lpd_matrix)

    layout = HierLayout(
        n_models=len(names),
        n_cont=info.n_continuous_columns,
        n_disc=info.n_discrete_columns,
        pooling=pooling,
    )
    result = hmc_sample(
        lambda x: log_post_hier(x, lpd_matrix, design, layout, priors), layout.dim, config
    )
    pnames = layout.param_names(names, info.column_names)
    diag, converged = _diagnostics(result, pnames)

    flat = result.flat
    means = layout.unpack(flat.mean(axis=0))
    pool = None
    if pooling:
        pool = {"mu": float(means["mu"])}
        for fam, _ in layout.families:
            pool[f"offset_{fam}"] = float(means[f"offset_{fam}"])
            pool[f"sigma_{fam}"] = float(np.mean(np.exp(layout.unpack(flat)[f"log_sigma_{fam}"])))
    coefs = StackingCoefficients(
        alpha=np.asarray(means["alpha"]),
        beta_cont=np.asarray(means["beta"][:, : layout.n_cont]),
        beta_disc=np.asarray(means["beta"][:, layout.n_cont :]),
        pooling=pool,
    )
    weights = _mean_weights(flat, design, layout)
    return StackingFit(
        kind=FitKind.HIERARCHICAL,
        model_names=names,
        weights=WeightMatrix(names, weights),
        samples=result.samples,
        param_names=pnames,
        diagnostics=diag,
        converged=converged,
        coefficients=coefs,
        covariate_info=info,
        layout=layout,
        priors=priors,
    )


def predict_weights(
    fit: StackingFit,
    new_covariates: CovariateSet | None = None,
    n_new: int | None = None,
) -> WeightMatrix:
    """Posterior-mean weights for new datapoints.

    Hierarchical fits transform ``new_covariates`` with the frozen training
    statistics; pooled fits broadcast their single weight column to ``n_new``.
    """
    if fit.kind is FitKind.BAYES_POOLED:
        n = n_new if n_new is not None else 1
        return WeightMatrix(fit.model_names, fit.weights.broadcast(n))

    info = fit.covariate_info
    if new_covariates is None:
        if info.continuous or info.discrete:
            raise ValidationError("hierarchical fit needs covariates for prediction")
        if n_new is None:
            raise ValidationError("n_new is required for an intercept-only fit without covariates")
        design = np.zeros((n_new, 0))
    else:
        design = transform_covariates(new_covariates, info)
        if not (info.continuous or info.discrete):
            design = np.zeros((n_new if n_new is not None else fit.weights.n_columns, 0))
        if n_new is not None and design.shape[0] != n_new:
            raise ValidationError(f"covariates have {design.shape[0]} rows, expected {n_new}")
    return WeightMatrix(fit.model_names, _mean_weights(fit.flat_samples, design, fit.layout))
