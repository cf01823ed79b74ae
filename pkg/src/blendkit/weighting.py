"""Pooled weight estimators: pseudo-BMA, pseudo-BMA+ and optimization stacking."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from blendkit.errors import NumericalError, ValidationError
from blendkit.psis import PointwiseElpd

SUM_TOL = 1e-12


@dataclass(frozen=True)
class WeightMatrix:
    """``K x N`` column-stochastic model weights (``N == 1`` for pooled methods)."""

    model_names: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.model_names)
        w = np.array(self.weights, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.ndim != 2 or w.shape[0] != len(names):
            raise ValidationError(
                f"weights shape {w.shape} does not match {len(names)} model names"
            )
        if not np.all(np.isfinite(w)) or w.min() < 0 or w.max() > 1:
            raise ValidationError("weights must lie in [0, 1]")
        colsum = w.sum(axis=0)
        if np.max(np.abs(colsum - 1.0)) > SUM_TOL:
            raise ValidationError(f"weight columns must sum to 1, got {colsum}")
        w.setflags(write=False)
        object.__setattr__(self, "model_names", names)
        object.__setattr__(self, "weights", w)

    @property
    def n_models(self) -> int:
        return self.weights.shape[0]

    @property
    def n_columns(self) -> int:
        return self.weights.shape[1]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: self.weights[k] for k, name in enumerate(self.model_names)}

    def broadcast(self, n: int) -> np.ndarray:
        """Weights as a ``K x n`` array; pooled weights are repeated."""
        if self.n_columns == n:
            return np.array(self.weights)
        if self.n_columns == 1:
            return np.repeat(self.weights, n, axis=1)
        raise ValidationError(f"cannot use {self.n_columns} weight columns for {n} datapoints")


@dataclass(frozen=True)
class OptimizeReport:
    converged: bool
    iterations: int
    final_objective: float
    grad_inf_norm: float
    flat: bool = False
    message: str = ""


def softmax(x: np.ndarray, axis: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def _simplex(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0.0, None)
    return w / w.sum(axis=0, keepdims=True)


def _elpd_matrix(elpd: Mapping[str, PointwiseElpd | Sequence[float]]) -> tuple[list[str], np.ndarray]:
    names = [str(k) for k in elpd]
    if len(names) < 2:
        raise ValidationError(f"need at least 2 models, got {len(names)}")
    rows = []
    for name, e in elpd.items():
        vals = e.values if isinstance(e, PointwiseElpd) else np.asarray(e, dtype=float).reshape(-1)
        rows.append(vals)
    lengths = {r.shape[0] for r in rows}
    if len(lengths) != 1:
        raise ValidationError(
            "pointwise elpd lengths differ: "
            + ", ".join(f"{n}={r.shape[0]}" for n, r in zip(names, rows))
        )
    return names, np.vstack(rows)


def pseudo_bma(elpd: Mapping[str, PointwiseElpd | Sequence[float]]) -> WeightMatrix:
    """Softmax of each model's total ELPD."""
    names, mat = _elpd_matrix(elpd)
    totals = mat.sum(axis=1)
    return WeightMatrix(names, _simplex(softmax(totals))[:, None])


def dirichlet_ones(rng: np.random.Generator, n: int) -> np.ndarray:
    """One Dirichlet(1, ..., 1) draw as normalized standard exponentials."""
    e = rng.standard_exponential(n)
    return e / e.sum()


def pseudo_bma_plus(
    elpd: Mapping[str, PointwiseElpd | Sequence[float]],
    replications: int = 1000,
    seed: int | None = 0,
) -> WeightMatrix:
    """Pseudo-BMA weights averaged over Bayesian-bootstrap replications.

    Each replication reweights the datapoints by a Dirichlet(1, ..., 1) draw,
    scales the weighted pointwise sum by ``N`` and takes the softmax over
    models.
    """
    if replications < 1:
        raise ValidationError(f"replications must be >= 1, got {replications}")
    names, mat = _elpd_matrix(elpd)
    n = mat.shape[1]
    rng = np.random.default_rng(seed)
    acc = np.zeros(mat.shape[0])
    for _ in range(replications):
        alpha = dirichlet_ones(rng, n)
        # row-wise sum rather than matmul: identical rows must give identical scores
        acc += softmax(n * (mat * alpha).sum(axis=1))
    return WeightMatrix(names, _simplex(acc / replications)[:, None])


def _shifted_densities(lpd_matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lpd_matrix = np.asarray(lpd_matrix, dtype=float)
    if lpd_matrix.ndim != 2:
        raise ValidationError(f"lpd matrix must be 2-D, got shape {lpd_matrix.shape}")
    if np.isnan(lpd_matrix).any() or np.isposinf(lpd_matrix).any():
        raise ValidationError("lpd matrix entries must be finite or -inf")
    m = lpd_matrix.max(axis=0)
    dead = np.flatnonzero(np.isneginf(m))
    if dead.size:
        raise NumericalError(
            f"every model has zero density at datapoint {int(dead[0])}", index=int(dead[0])
        )
    return np.exp(lpd_matrix - m), m


def stacking_objective(w, lpd_matrix) -> tuple[float, np.ndarray]:
    """Stacking log score ``sum_i log sum_k w_k exp(lpd_ki)`` and its gradient in ``w``."""
    w = np.asarray(w, dtype=float).reshape(-1)
    dens, m = _shifted_densities(lpd_matrix)
    if w.shape[0] != dens.shape[0]:
        raise ValidationError(f"{w.shape[0]} weights for {dens.shape[0]} models")
    mix = w @ dens
    with np.errstate(divide="ignore"):
        obj = float(np.sum(np.log(mix) + m))
        grad = np.sum(dens / mix, axis=1)
    return obj, grad


def _face_terms(w, dens, m):
    """Objective, gradient in ``w`` and per-point mixture densities."""
    with np.errstate(divide="ignore"):
        mix = w @ dens
        obj = float(np.sum(np.log(mix) + m))
    grad = (dens / mix).sum(axis=1) if np.all(mix > 0) else None
    return obj, grad, mix


def _kkt_residual(w, grad, free, n):
    """Simplex optimality residual.

    Since ``sum_k w_k grad_k == n`` everywhere, a maximum has ``grad_k == n``
    on the support and ``grad_k <= n`` off it.
    """
    r = grad - n
    return float(max(np.max(np.abs(r[free])), np.max(r[~free], initial=0.0)))


def _newton_direction(w, grad, mix, dens, free):
    """Newton step on the face spanned by the free models, summing to zero."""
    idx = np.flatnonzero(free)
    d = np.zeros_like(w)
    if idx.size < 2:
        return d
    # null-space basis of the sum constraint: e_j - e_last over the free models
    sub = dens[idx] / mix
    z = sub[:-1] - sub[-1]
    g = grad[idx[:-1]] - grad[idx[-1]]
    h = z @ z.T  # negated reduced Hessian, positive semidefinite
    try:
        s = np.linalg.solve(np.linalg.cholesky(h).T, np.linalg.solve(np.linalg.cholesky(h), g))
    except np.linalg.LinAlgError:
        s = np.linalg.lstsq(h, g, rcond=None)[0]
    d[idx[:-1]] = s
    d[idx[-1]] = -s.sum()
    return d


def mle_stacking(
    lpd_matrix,
    model_names: Sequence[str] | None = None,
    tol: float = 1e-10,
    max_iter: int = 10000,
    init_weights=None,
) -> tuple[WeightMatrix, OptimizeReport]:
    """Maximize the stacking log score over the simplex.

    The objective is concave in ``w``, so an active-set Newton method works
    directly on the simplex: Newton steps on the face of models with positive
    weight, a model is dropped when a step drives its weight to zero, and a
    dropped model whose gradient exceeds the optimality level re-enters with a
    step toward its vertex. Armijo backtracking keeps the ascent monotone.
    Iteration stops when the optimality residual (see ``_kkt_residual``)
    drops to ``tol``, or when the relative objective change drops to 1e-12
    while the residual has stopped improving. The
    default start is uniform weights.
    """
    dens, m = _shifted_densities(lpd_matrix)
    k, n = dens.shape
    if k < 2:
        raise ValidationError(f"need at least 2 models, got {k}")
    names = list(model_names) if model_names is not None else [f"model_{j}" for j in range(k)]
    if len(names) != k:
        raise ValidationError(f"{len(names)} model names for {k} lpd rows")

    if init_weights is None:
        w = np.full(k, 1.0 / k)
    else:
        w = np.asarray(init_weights, dtype=float)
        if w.shape != (k,) or np.any(w <= 0):
            raise ValidationError("init_weights must be a strictly positive length-K vector")
        w = w / w.sum()

    free = np.ones(k, dtype=bool)
    obj, grad, mix = _face_terms(w, dens, m)
    obj_lo = obj_hi = obj
    resid = _kkt_residual(w, grad, free, n)
    converged = False
    message = "maximum iterations reached"
    it = 0
    for it in range(1, max_iter + 1):
        if resid <= tol:
            converged, message, it = True, "optimality residual below tolerance", it - 1
            break
        face_resid = float(np.max(np.abs(grad[free] - n)))
        if face_resid > tol:
            d = _newton_direction(w, grad, mix, dens, free)
            if not grad @ d > 0:
                d = np.where(free, grad - grad[free].mean(), 0.0)
        else:
            # optimal on the face: release the dropped model with the largest gradient
            j = int(np.argmax(np.where(free, -np.inf, grad)))
            d = -w.copy()
            d[j] += 1.0
        slope = float(grad @ d)
        blocking = d < 0
        ratio = np.where(blocking, w / np.where(blocking, -d, 1.0), np.inf)
        t_max = float(ratio.min())
        t = min(1.0, t_max)
        for _ in range(60):
            cand = np.clip(w + t * d, 0.0, None)
            if t == t_max:
                cand[ratio <= t_max * (1 + 1e-12)] = 0.0
            c_obj, c_grad, _ = _face_terms(cand, dens, m)
            if c_grad is not None:
                if c_obj >= obj + 1e-4 * t * slope:
                    break
                # near the optimum the gain drowns in rounding; judge by the residual
                if abs(c_obj - obj) <= 1e-13 * max(abs(obj), 1.0):
                    c_w = cand / cand.sum()
                    if _kkt_residual(c_w, c_grad, c_w > 0, n) < 0.5 * resid:
                        break
            t *= 0.5
        else:
            converged, message = True, "line search cannot improve the objective"
            break
        prev, prev_resid = obj, resid
        w = cand / cand.sum()
        free = w > 0
        obj, grad, mix = _face_terms(w, dens, m)
        obj_lo, obj_hi = min(obj_lo, obj), max(obj_hi, obj)
        resid = _kkt_residual(w, grad, free, n)
        # a stalled objective only counts once no dropped model wants back in
        # and the residual has stopped shrinking
        pending = float(np.max(grad[~free] - n, initial=0.0)) > tol
        stalled = resid > 0.5 * prev_resid
        if not pending and stalled and abs(obj - prev) <= 1e-12 * max(abs(prev), 1.0):
            converged, message = True, "relative objective change below 1e-12"
            break

    # the objective is constant on the simplex only when every model has the
    # same density at every datapoint
    flat = False
    if obj_hi - obj_lo < 1e-13 and np.max(np.ptp(dens, axis=0)) <= 1e-13:
        flat = True
        w = np.full(k, 1.0 / k)
        obj = stacking_objective(w, lpd_matrix)[0]
        resid = 0.0
        converged, message = True, "flat objective; returning uniform weights"

    report = OptimizeReport(
        converged=converged,
        iterations=it,
        final_objective=obj,
        grad_inf_norm=resid,
        flat=flat,
        message=message,
    )
    return WeightMatrix(names, _simplex(w)[:, None]), report
