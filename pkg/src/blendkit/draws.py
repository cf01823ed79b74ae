"""Containers for per-model posterior draws and the log pointwise density."""

from __future__ import annotations

from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field

import numpy as np

from blendkit.errors import ValidationError


def log_mean_exp(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Numerically stable ``log(mean(exp(a)))`` along ``axis``.

    Slices that are entirely ``-inf`` reduce to ``-inf`` without warnings.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[axis]
    m = np.max(a, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - shift), axis=axis)) - np.log(n)
    return out + np.squeeze(shift, axis=axis)


def _as_matrix(name: str, x) -> tuple[np.ndarray, tuple[int, ...]]:
    arr = np.array(x, dtype=float)
    if arr.ndim == 0:
        raise ValidationError(f"{name} must have a sample axis, got a scalar")
    if arr.ndim == 1:
        arr = arr[:, None]
    shape = arr.shape
    if shape[0] < 1 or int(np.prod(shape[1:])) < 1:
        raise ValidationError(f"{name} must be nonempty, got shape {shape}")
    return arr.reshape(shape[0], -1), shape


@dataclass(frozen=True)
class Draws:
    """Pointwise log likelihoods and optional posterior predictions for one model.

    Both arrays are held as ``S x N`` matrices (samples by datapoints). Inputs
    with more than two dimensions are flattened row-major into the datapoint
    axis; ``shape`` keeps the original layout.
    """

    log_lik: np.ndarray
    post_pred: np.ndarray | None = None
    shape: tuple[int, ...] = field(default=())

    def __post_init__(self):
        ll, shape = _as_matrix("log_lik", self.log_lik)
        if np.isnan(ll).any() or np.isposinf(ll).any():
            bad = np.argwhere(np.isnan(ll) | np.isposinf(ll))[0]
            raise ValidationError(
                f"log_lik has a NaN or +inf entry at sample {bad[0]}, datapoint {bad[1]}"
            )
        ll.setflags(write=False)
        object.__setattr__(self, "log_lik", ll)
        object.__setattr__(self, "shape", tuple(self.shape) or shape)
        if self.post_pred is not None:
            pp, pshape = _as_matrix("post_pred", self.post_pred)
            if pshape != shape:
                raise ValidationError(
                    f"post_pred shape {pshape} does not match log_lik shape {shape}"
                )
            pp.setflags(write=False)
            object.__setattr__(self, "post_pred", pp)

    @property
    def n_samples(self) -> int:
        return self.log_lik.shape[0]

    @property
    def n_datapoints(self) -> int:
        return self.log_lik.shape[1]

    @property
    def lpd(self) -> np.ndarray:
        """Log pointwise predictive density, ``log(mean_s(exp(log_lik)))``."""
        return lpd(self)

    def log_lik_nd(self) -> np.ndarray:
        """``log_lik`` in its original (possibly >2-D) shape."""
        return self.log_lik.reshape(self.shape)

    def post_pred_nd(self) -> np.ndarray | None:
        return None if self.post_pred is None else self.post_pred.reshape(self.shape)


def make_draws(log_lik, post_pred=None) -> Draws:
    """Validate and wrap posterior arrays; inputs are copied, never mutated."""
    return Draws(log_lik=log_lik, post_pred=post_pred)


def lpd(d: Draws) -> np.ndarray:
    return log_mean_exp(d.log_lik, axis=0)


class DrawsCollection(Mapping):
    """Ordered, validated mapping of model name to :class:`Draws`.

    All members share the sample count and datapoint count. Insertion order is
    significant: it fixes column order in weight matrices and which model
    carries the fixed zero score in softmax parameterizations.
    """

    def __init__(self, models: Mapping[str, Draws]):
        items = list(models.items())
        if len(items) < 2:
            raise ValidationError(f"need at least 2 models, got {len(items)}")
        names = [str(k) for k, _ in items]
        if len(set(names)) != len(names):
            raise ValidationError(f"model names must be unique, got {names}")
        first = items[0][1]
        for name, d in items:
            if not isinstance(d, Draws):
                raise ValidationError(f"model {name!r} is not a Draws instance")
            if d.n_datapoints != first.n_datapoints:
                raise ValidationError(
                    f"model {name!r} has {d.n_datapoints} datapoints, "
                    f"expected {first.n_datapoints}"
                )
            if d.n_samples != first.n_samples:
                raise ValidationError(
                    f"model {name!r} has {d.n_samples} samples, expected {first.n_samples}"
                )
        self._models = dict(zip(names, (d for _, d in items)))

    def __getitem__(self, key: str) -> Draws:
        return self._models[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._models)

    def __len__(self) -> int:
        return len(self._models)

    @property
    def names(self) -> list[str]:
        return list(self._models)

    @property
    def n_samples(self) -> int:
        return next(iter(self._models.values())).n_samples

    @property
    def n_datapoints(self) -> int:
        return next(iter(self._models.values())).n_datapoints

    def lpd_matrix(self) -> np.ndarray:
        """``K x N`` stack of each model's log pointwise density."""
        return np.vstack([lpd(d) for d in self._models.values()])
