"""MCMC convergence diagnostics: split R-hat and effective sample size."""

from __future__ import annotations

import numpy as np


def _as_chains(draws) -> np.ndarray:
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected a chains x draws matrix, got shape {x.shape}")
    return x


def split_rhat(draws) -> float:
    """Split-chain potential scale reduction factor.

    Each chain is cut in half (the middle draw is dropped for odd lengths).
    Returns NaN when every half-chain has zero variance.
    """
    x = _as_chains(draws)
    n = x.shape[1]
    if n < 2:
        raise ValueError("split R-hat needs at least 2 draws per chain")
    half = n // 2
    halves = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    within = np.mean(np.var(halves, axis=1, ddof=1)) if half > 1 else 0.0
    if not within > 0:
        return float("nan")
    between = half * np.var(np.mean(halves, axis=1), ddof=1)
    var_plus = (half - 1) / half * within + between / half
    return float(np.sqrt(var_plus / within))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    centered = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(centered, n=size, axis=-1)
    acov = np.fft.irfft(f * np.conjugate(f), n=size, axis=-1)[..., :n]
    return acov / n


def ess_bulk(draws) -> float:
    """Effective sample size across chains.

    Autocorrelations are combined across chains and truncated with Geyer's
    initial monotone sequence estimator. Constant draws give 0.
    """
    x = _as_chains(draws)
    m, n = x.shape
    if n < 4:
        return float(m * n)
    acov = _autocovariance(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    within = chain_var.mean()
    var_plus = within * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(x.mean(axis=1), ddof=1)
    if not var_plus > 0:
        return 0.0
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # sum consecutive pairs while positive, enforcing monotone decrease
    t = 0
    pair_sums = []
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p < 0:
            break
        if pair_sums and p > pair_sums[-1]:
            p = pair_sums[-1]
        pair_sums.append(p)
        t += 2
    tau = -1.0 + 2.0 * float(np.sum(pair_sums)) if pair_sums else 1.0
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def summarize(samples: np.ndarray, names: list[str] | None = None) -> dict[str, dict[str, float]]:
    """Per-parameter R-hat and ESS for a ``(chains, draws, dim)`` array."""
    samples = np.asarray(samples, dtype=float)
    dim = samples.shape[-1]
    names = names or [f"x[{j}]" for j in range(dim)]
    return {
        name: {"rhat": split_rhat(samples[..., j]), "ess": ess_bulk(samples[..., j])}
        for j, name in enumerate(names)
    }
