"""Blending candidate draws by weight, and ELPD comparison."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from blendkit.draws import Draws, DrawsCollection, lpd
from blendkit.errors import ValidationError
from blendkit.weighting import WeightMatrix


def blend(models: DrawsCollection | Mapping[str, Draws], weights: WeightMatrix, seed: int | None = 0) -> Draws:
    """Build one set of draws by picking a candidate model per (sample, datapoint) cell.

    The model index for each cell is drawn from ``Categorical(w[:, i])``.
    Uniform variates are consumed sample-major, so output depends only on
    ``seed``. ``post_pred`` is blended only when every model carries it.
    """
    if not isinstance(models, DrawsCollection):
        models = DrawsCollection(models)
    if list(weights.model_names) != models.names:
        raise ValidationError(
            f"weight models {list(weights.model_names)} do not match draws models {models.names}"
        )
    s, n = models.n_samples, models.n_datapoints
    w = weights.broadcast(n)
    cum = np.cumsum(w, axis=0)
    # the last positive-weight model per column absorbs round-off, so models
    # after it stay unreachable
    last = w.shape[0] - 1 - np.argmax(w[::-1] > 0, axis=0)
    cum[np.arange(w.shape[0])[:, None] >= last[None, :]] = np.inf
    rng = np.random.default_rng(seed)
    u = rng.random((s, n))
    idx = np.zeros((s, n), dtype=np.intp)
    for k in range(w.shape[0] - 1):
        idx += u >= cum[k]

    draws = list(models.values())
    ll = np.stack([d.log_lik for d in draws])
    rows = np.arange(s)[:, None]
    cols = np.arange(n)[None, :]
    out_ll = ll[idx, rows, cols]
    out_pp = None
    if all(d.post_pred is not None for d in draws):
        pp = np.stack([d.post_pred for d in draws])
        out_pp = pp[idx, rows, cols]
    return Draws(log_lik=out_ll, post_pred=out_pp)


def elpd_of(d: Draws) -> float:
    return float(np.sum(lpd(d)))


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    elpd: float
    elpd_diff: float
    se_diff: float


@dataclass(frozen=True)
class ElpdComparison:
    rows: tuple[ComparisonRow, ...]

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"name": r.name, "elpd": r.elpd, "elpd_diff": r.elpd_diff, "se_diff": r.se_diff}
                for r in self.rows
            ]
        }

    def table(self) -> str:
        width = max(4, *(len(r.name) for r in self.rows))
        lines = [f"{'name':<{width}}  {'elpd':>12}  {'elpd_diff':>12}  {'se_diff':>10}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  {r.elpd:>12.3f}  {r.elpd_diff:>12.3f}  {r.se_diff:>10.3f}")
        return "\n".join(lines)


def compare(entries: Mapping[str, Draws]) -> ElpdComparison:
    """Rank entries by ELPD, best first.

    ``se_diff`` is ``sqrt(N * var(lpd - lpd_best))`` with the population
    variance of the pointwise differences.
    """
    if not entries:
        raise ValidationError("nothing to compare")
    pointwise = {str(name): lpd(d) for name, d in entries.items()}
    lengths = {name: v.shape[0] for name, v in pointwise.items()}
    if len(set(lengths.values())) != 1:
        raise ValidationError(f"entries have different datapoint counts: {lengths}")
    totals = {name: float(np.sum(v)) for name, v in pointwise.items()}
    order = sorted(totals, key=lambda name: -totals[name])
    best = order[0]
    n = lengths[best]
    rows = []
    for name in order:
        diff = pointwise[name] - pointwise[best]
        if name == best:
            se = 0.0
        else:
            with np.errstate(invalid="ignore"):
                se = float(np.sqrt(n * np.var(diff)))
        rows.append(ComparisonRow(name, totals[name], totals[name] - totals[best], se))
    return ElpdComparison(tuple(rows))
