"""Log posterior densities (with gradients) for Bayesian stacking models.

Weights are a softmax over ``K - 1`` free scores plus a fixed zero score for
the last model. Free scores, intercepts and coefficients are therefore
ordered like the first ``K - 1`` model names.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, fields

import numpy as np
from scipy.special import gammaln

from blendkit.errors import ValidationError
from blendkit.weighting import _shifted_densities

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def softmax_with_reference(scores) -> np.ndarray:
    """Map ``K - 1`` scores to a ``K``-simplex point by appending a zero score."""
    s = np.append(np.asarray(scores, dtype=float).reshape(-1), 0.0)
    z = np.exp(s - s.max())
    return z / z.sum()


def _log_softmax_ref(scores: np.ndarray) -> np.ndarray:
    """Row-wise log weights for a ``(K-1) x N`` score matrix; returns ``K x N``."""
    s = np.vstack([scores, np.zeros((1, scores.shape[1]))])
    m = s.max(axis=0)
    return s - (m + np.log(np.exp(s - m).sum(axis=0)))


@dataclass(frozen=True)
class Priors:
    """Prior settings; all scales are standard deviations."""

    w_prior: tuple[float, ...] | None = None
    alpha_prior_sd: float = 1.0
    beta_prior_sd: float = 1.0
    mu_prior_sd: float = 1.0
    offset_prior_sd: float = 1.0
    sigma_prior_sd: float = 1.0

    def __post_init__(self):
        if self.w_prior is not None:
            a = tuple(float(x) for x in self.w_prior)
            if any(not x > 0 for x in a):
                raise ValidationError("w_prior entries must be positive")
            object.__setattr__(self, "w_prior", a)
        for f in fields(self):
            if f.name != "w_prior" and not getattr(self, f.name) > 0:
                raise ValidationError(f"{f.name} must be positive")

    @classmethod
    def from_mapping(cls, d: Mapping | None) -> "Priors":
        if d is None:
            return cls()
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown prior names {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}


def _normal_logpdf(x, sd):
    # numpy arithmetic so far-out trajectory points give -inf rather than OverflowError
    return -0.5 * np.square(np.asarray(x, dtype=float) / sd) - math.log(sd) - _HALF_LOG_2PI


def log_post_pooled(v, lpd_matrix, dirichlet_alpha=None) -> tuple[float, np.ndarray]:
    """Complete-pooling stacking posterior over free scores ``v``.

    Mixture log likelihood, Dirichlet prior on the weights and the log
    Jacobian ``sum_k log w_k`` of the score-to-simplex map. ``lpd_matrix`` may
    have zero columns, leaving prior and Jacobian only.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    lpd_matrix = np.asarray(lpd_matrix, dtype=float)
    k = v.shape[0] + 1
    if lpd_matrix.ndim != 2 or lpd_matrix.shape[0] != k:
        raise ValidationError(f"lpd matrix shape {lpd_matrix.shape} does not match {k} models")
    alpha = np.ones(k) if dirichlet_alpha is None else np.asarray(dirichlet_alpha, dtype=float)
    if alpha.shape != (k,) or np.any(alpha <= 0):
        raise ValidationError("dirichlet_alpha must be a positive length-K vector")

    logw = _log_softmax_ref(v[:, None])[:, 0]
    w = np.exp(logw)
    lp = float(gammaln(alpha.sum()) - gammaln(alpha).sum() + alpha @ logw)
    grad = (alpha - w * alpha.sum())[:-1]
    if lpd_matrix.shape[1]:
        dens, m = _shifted_densities(lpd_matrix)
        mix = w @ dens
        lp += float(np.sum(np.log(mix) + m))
        q = w[:, None] * dens / mix
        grad = grad + (q.sum(axis=1) - dens.shape[1] * w)[:-1]
    return lp, grad


@dataclass(frozen=True)
class HierLayout:
    """Index map of the flat parameter vector for hierarchical stacking.

    Order: intercepts ``(K-1)``, coefficients ``(K-1) x P`` row-major, then
    with pooling the global mean followed by ``(offset, log_sigma)`` for each
    covariate family (continuous, discrete) that has columns.
    """

    n_models: int
    n_cont: int
    n_disc: int
    pooling: bool = False

    @property
    def n_free(self) -> int:
        return self.n_models - 1

    @property
    def n_cols(self) -> int:
        return self.n_cont + self.n_disc

    @property
    def families(self) -> list[tuple[str, slice]]:
        out = []
        if self.n_cont:
            out.append(("cont", slice(0, self.n_cont)))
        if self.n_disc:
            out.append(("disc", slice(self.n_cont, self.n_cols)))
        return out

    @property
    def dim(self) -> int:
        d = self.n_free * (1 + self.n_cols)
        if self.pooling:
            d += 1 + 2 * len(self.families)
        return d

    def unpack(self, params: np.ndarray) -> dict:
        params = np.asarray(params, dtype=float)
        if params.shape[-1] != self.dim:
            raise ValidationError(f"expected {self.dim} parameters, got {params.shape[-1]}")
        kf, p = self.n_free, self.n_cols
        out = {
            "alpha": params[..., :kf],
            "beta": params[..., kf : kf + kf * p].reshape(params.shape[:-1] + (kf, p)),
        }
        if self.pooling:
            j = kf + kf * p
            out["mu"] = params[..., j]
            j += 1
            for name, _ in self.families:
                out[f"offset_{name}"] = params[..., j]
                out[f"log_sigma_{name}"] = params[..., j + 1]
                j += 2
        return out

    def param_names(self, model_names: list[str], column_names: list[str]) -> list[str]:
        free = model_names[: self.n_free]
        names = [f"alpha[{m}]" for m in free]
        names += [f"beta[{m},{c}]" for m in free for c in column_names]
        if self.pooling:
            names.append("mu")
            for fam, _ in self.families:
                names += [f"offset_{fam}", f"log_sigma_{fam}"]
        return names


def hier_scores(params, design: np.ndarray, layout: HierLayout) -> np.ndarray:
    """Free scores ``(K-1) x N`` for one parameter vector."""
    u = layout.unpack(params)
    return u["alpha"][:, None] + u["beta"] @ design.T


def log_post_hier(
    params,
    lpd_matrix,
    design,
    layout: HierLayout,
    priors: Priors | None = None,
) -> tuple[float, np.ndarray]:
    """Hierarchical stacking log posterior and its gradient.

    Per-datapoint scores are ``alpha_k + beta_k . x_i``. Without pooling every
    intercept and coefficient has an independent normal prior. With pooling,
    coefficients in a family share ``Normal(mu + offset_family,
    sigma_family)``, with ``sigma_family`` half-normal and sampled on the
    log scale.
    """
    priors = priors or Priors()
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _log_post_hier(np.asarray(params, dtype=float).reshape(-1), lpd_matrix, design, layout, priors)


def _log_post_hier(params, lpd_matrix, design, layout, priors):
    lpd_matrix = np.asarray(lpd_matrix, dtype=float)
    design = np.asarray(design, dtype=float)
    if lpd_matrix.shape[0] != layout.n_models:
        raise ValidationError(f"lpd matrix has {lpd_matrix.shape[0]} rows, layout expects {layout.n_models}")
    if design.shape != (lpd_matrix.shape[1], layout.n_cols):
        raise ValidationError(
            f"design shape {design.shape} does not match ({lpd_matrix.shape[1]}, {layout.n_cols})"
        )
    u = layout.unpack(params)
    alpha, beta = u["alpha"], u["beta"]
    kf = layout.n_free
    grad = np.zeros_like(params)
    g_alpha = grad[:kf]
    g_beta = grad[kf : kf + kf * layout.n_cols].reshape(kf, layout.n_cols)

    lp = 0.0
    if lpd_matrix.shape[1]:
        dens, m = _shifted_densities(lpd_matrix)
        logw = _log_softmax_ref(alpha[:, None] + beta @ design.T)
        w = np.exp(logw)
        mix = np.sum(w * dens, axis=0)
        lp += float(np.sum(np.log(mix) + m))
        resid = (w * dens / mix - w)[:-1]
        g_alpha += resid.sum(axis=1)
        g_beta += resid @ design

    lp += float(np.sum(_normal_logpdf(alpha, priors.alpha_prior_sd)))
    g_alpha -= alpha / priors.alpha_prior_sd**2

    if not layout.pooling:
        lp += float(np.sum(_normal_logpdf(beta, priors.beta_prior_sd)))
        g_beta -= beta / priors.beta_prior_sd**2
        return lp, grad

    mu = float(u["mu"])
    j = kf + kf * layout.n_cols
    lp += float(_normal_logpdf(mu, priors.mu_prior_sd))
    grad[j] -= mu / priors.mu_prior_sd**2
    j_mu = j
    j += 1
    for name, cols in layout.families:
        off = float(u[f"offset_{name}"])
        log_sigma = float(u[f"log_sigma_{name}"])
        if not -700.0 < log_sigma < 700.0:
            # scale under/overflows: zero density, the sampler rejects the move
            return -math.inf, np.full_like(params, np.nan)
        sigma = np.exp(log_sigma)
        # half-normal on sigma plus the log-scale Jacobian
        lp += math.log(2.0) + float(_normal_logpdf(sigma, priors.sigma_prior_sd)) + log_sigma
        grad[j + 1] += 1.0 - (sigma / priors.sigma_prior_sd) ** 2
        lp += float(_normal_logpdf(off, priors.offset_prior_sd))
        grad[j] -= off / priors.offset_prior_sd**2

        b = beta[:, cols]
        z = (b - mu - off) / sigma
        lp += float(np.sum(-0.5 * z**2) - b.size * (log_sigma + _HALF_LOG_2PI))
        g_beta[:, cols] -= z / sigma
        grad[j_mu] += float(np.sum(z) / sigma)
        grad[j] += float(np.sum(z) / sigma)
        grad[j + 1] += float(np.sum(z**2) - b.size)
        j += 2
    return lp, grad
