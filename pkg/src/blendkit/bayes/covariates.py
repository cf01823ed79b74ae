"""Covariate preprocessing for covariate-dependent stacking.

Continuous covariates are transformed with statistics frozen at fit time;
discrete covariates are one-hot coded with one column per level (no dropped
level), levels ordered by first appearance in the training data.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from blendkit.errors import ValidationError


class Transform(str, Enum):
    STANDARDIZE = "standardize"
    IDENTITY = "identity"
    RELU = "relu"


@dataclass(frozen=True)
class CovariateSet:
    continuous: Mapping[str, Sequence[float]] = field(default_factory=dict)
    discrete: Mapping[str, Sequence[str]] = field(default_factory=dict)
    transform: Transform = Transform.STANDARDIZE

    def __post_init__(self):
        cont = {str(k): np.asarray(v, dtype=float).reshape(-1) for k, v in self.continuous.items()}
        disc = {
            str(k): np.asarray([str(x) for x in np.asarray(v).reshape(-1)], dtype=object)
            for k, v in self.discrete.items()
        }
        overlap = set(cont) & set(disc)
        if overlap:
            raise ValidationError(f"covariate names used twice: {sorted(overlap)}")
        lengths = {name: len(v) for name, v in (cont | disc).items()}
        if len(set(lengths.values())) > 1:
            raise ValidationError(f"covariates have different lengths: {lengths}")
        for name, v in cont.items():
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"continuous covariate {name!r} has non-finite values")
        object.__setattr__(self, "continuous", cont)
        object.__setattr__(self, "discrete", disc)
        object.__setattr__(self, "transform", Transform(self.transform))

    @property
    def n(self) -> int | None:
        for v in (*self.continuous.values(), *self.discrete.values()):
            return len(v)
        return None

    @property
    def is_empty(self) -> bool:
        return not self.continuous and not self.discrete


@dataclass(frozen=True)
class CovariateInfo:
    """Training statistics frozen at fit time and reused for prediction."""

    transform: Transform
    continuous: dict[str, dict[str, float]]
    discrete: dict[str, list[str]]

    @property
    def n_continuous_columns(self) -> int:
        return len(self.continuous)

    @property
    def n_discrete_columns(self) -> int:
        return sum(len(levels) for levels in self.discrete.values())

    @property
    def column_names(self) -> list[str]:
        return list(self.continuous) + [
            f"{name}[{level}]" for name, levels in self.discrete.items() for level in levels
        ]

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.value,
            "continuous": {k: dict(v) for k, v in self.continuous.items()},
            "discrete": {k: list(v) for k, v in self.discrete.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CovariateInfo":
        return cls(
            transform=Transform(d.get("transform", "standardize")),
            continuous={k: {s: float(x) for s, x in v.items()} for k, v in d.get("continuous", {}).items()},
            discrete={k: [str(x) for x in v] for k, v in d.get("discrete", {}).items()},
        )


def covariate_info(c: CovariateSet) -> CovariateInfo:
    """Compute the training statistics used to transform ``c``.

    The scale is twice the population standard deviation.
    """
    stats = {}
    for name, x in c.continuous.items():
        two_sd = 2.0 * float(np.std(x))
        if c.transform is Transform.STANDARDIZE and not two_sd > 0:
            raise ValidationError(f"continuous covariate {name!r} has zero variance")
        stats[name] = {"mean": float(np.mean(x)), "2sd": two_sd, "median": float(np.median(x))}
    levels = {name: list(dict.fromkeys(x.tolist())) for name, x in c.discrete.items()}
    return CovariateInfo(transform=c.transform, continuous=stats, discrete=levels)


def transform_covariates(c: CovariateSet, info: CovariateInfo | None = None) -> np.ndarray:
    """Build the ``N x P`` design matrix: transformed continuous columns, then one-hot columns."""
    if info is None:
        info = covariate_info(c)
    if set(c.continuous) != set(info.continuous) or set(c.discrete) != set(info.discrete):
        raise ValidationError(
            "covariate names do not match training: expected continuous "
            f"{sorted(info.continuous)} and discrete {sorted(info.discrete)}, got "
            f"{sorted(c.continuous)} and {sorted(c.discrete)}"
        )
    n = c.n or 0
    cols = []
    for name, st in info.continuous.items():
        x = c.continuous[name]
        if info.transform is Transform.STANDARDIZE:
            cols.append((x - st["mean"]) / st["2sd"])
        elif info.transform is Transform.RELU:
            cols.append(np.maximum(x - st["median"], 0.0))
        else:
            cols.append(x.copy())
    for name, levels in info.discrete.items():
        x = c.discrete[name]
        unknown = sorted(set(x.tolist()) - set(levels))
        if unknown:
            raise ValidationError(f"discrete covariate {name!r} has unknown levels {unknown}")
        for level in levels:
            cols.append((x == level).astype(float))
    if not cols:
        return np.zeros((n, 0))
    return np.column_stack(cols)
