"""Independent reference computations used as test oracles.

Nothing here calls into blendkit's optimizers or gradients.
"""

from __future__ import annotations

import math

import numpy as np


def stacking_score(w: np.ndarray, lpd_matrix: np.ndarray) -> np.ndarray:
    """Stacking log score for each row of ``w`` (``G x K``), computed directly."""
    lpd_matrix = np.asarray(lpd_matrix, dtype=float)
    m = lpd_matrix.max(axis=0)
    dens = np.exp(lpd_matrix - m)
    return np.log(np.atleast_2d(w) @ dens).sum(axis=1) + m.sum()


def _simplex_grid(k: int, step: float) -> np.ndarray:
    n = int(round(1 / step))
    if k == 2:
        a = np.arange(n + 1) / n
        return np.column_stack([a, 1 - a])
    if k == 3:
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        mask = i + j <= n
        a, b = i[mask] / n, j[mask] / n
        return np.column_stack([a, b, np.clip(1 - a - b, 0, None)])
    raise ValueError("grid oracle supports K in {2, 3}")


def grid_search_stacking(lpd_matrix: np.ndarray, step: float = 1e-3, fine: float = 1e-5) -> tuple[np.ndarray, float]:
    """Exhaustive simplex grid at ``step``, then a local grid at ``fine`` around the best point."""
    k = lpd_matrix.shape[0]
    best = None
    grid = _simplex_grid(k, step)
    for chunk in np.array_split(grid, max(1, len(grid) // 20000)):
        with np.errstate(divide="ignore"):
            vals = stacking_score(chunk, lpd_matrix)
        j = int(np.argmax(vals))
        if best is None or vals[j] > best[1]:
            best = (chunk[j], float(vals[j]))
    center = best[0]
    r = int(round(2 * step / fine))
    offsets = np.arange(-r, r + 1) * fine
    if k == 2:
        a = np.clip(center[0] + offsets, 0, 1)
        local = np.column_stack([a, 1 - a])
    else:
        da, db = np.meshgrid(offsets, offsets, indexing="ij")
        a = center[0] + da.ravel()
        b = center[1] + db.ravel()
        ok = (a >= 0) & (b >= 0) & (a + b <= 1)
        local = np.column_stack([a[ok], b[ok], np.clip(1 - a[ok] - b[ok], 0, None)])
    with np.errstate(divide="ignore"):
        vals = stacking_score(local, lpd_matrix)
    j = int(np.argmax(vals))
    if vals[j] > best[1]:
        best = (local[j], float(vals[j]))
    return best


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest |a - n| / max(|a|, |n|, 1) across components."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)))


def pseudo_bma_plus_loop(pointwise: list[list[float]], replications: int, seed: int) -> list[float]:
    """Plain-Python pseudo-BMA+ with Dirichlet(1) draws as normalized exponentials."""
    rng = np.random.default_rng(seed)
    k = len(pointwise)
    n = len(pointwise[0])
    totals = [0.0] * k
    for _ in range(replications):
        e = rng.standard_exponential(n)
        s = sum(e)
        alpha = [x / s for x in e]
        z = [n * sum(alpha[i] * pointwise[j][i] for i in range(n)) for j in range(k)]
        top = max(z)
        ez = [math.exp(v - top) for v in z]
        tot = sum(ez)
        for j in range(k):
            totals[j] += ez[j] / tot
    mean = [t / replications for t in totals]
    s = sum(mean)
    return [m / s for m in mean]
