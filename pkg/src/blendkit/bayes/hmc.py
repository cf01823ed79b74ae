"""Hamiltonian Monte Carlo with dual-averaging step size and diagonal metric.

Each chain draws its randomness from its own ``SeedSequence`` child, so the
output depends only on ``(seed, chains, config)`` and not on whether chains
run serially or in threads.
"""

from __future__ import annotations

import math
import os
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from blendkit.errors import NumericalError, ValidationError

LogDensity = Callable[[np.ndarray], tuple[float, np.ndarray]]

DIVERGENCE_THRESHOLD = 1000.0
INIT_RETRIES = 100


@dataclass(frozen=True)
class HmcConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    target_accept: float = 0.8
    l_max: int = 32
    max_step_doublings: int = 50
    init_sd: float = 0.1
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        if self.chains < 1 or self.draws < 1 or self.warmup < 0:
            raise ValidationError("chains and draws must be >= 1 and warmup >= 0")
        if not 0 < self.target_accept < 1:
            raise ValidationError("target_accept must lie in (0, 1)")
        if self.l_max < 1:
            raise ValidationError("l_max must be >= 1")


@dataclass
class ChainStats:
    step_size: float
    inv_metric: np.ndarray
    accept_rate: float
    divergences: int


@dataclass
class HmcResult:
    samples: np.ndarray  # (chains, draws, dim)
    chain_stats: list[ChainStats] = field(default_factory=list)

    @property
    def flat(self) -> np.ndarray:
        return self.samples.reshape(-1, self.samples.shape[-1])

    @property
    def divergences(self) -> int:
        return sum(c.divergences for c in self.chain_stats)


def n_threads(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("BLENDKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"BLENDKIT_THREADS must be an integer, got {env!r}") from None
    return 1


class _DualAveraging:
    gamma, t0, kappa = 0.05, 10.0, 0.75

    def __init__(self, step_size: float, target: float):
        self.mu = math.log(10.0 * step_size)
        self.target = target
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.m = 0

    def update(self, accept_prob: float) -> float:
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob)
        log_eps = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        eta = m ** (-self.kappa)
        self.log_eps_bar = eta * log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def final(self) -> float:
        return math.exp(self.log_eps_bar)


def _leapfrog(target, x, lp, grad, p, eps, inv_metric, n_steps):
    x = x.copy()
    p = p + 0.5 * eps * grad
    for step in range(n_steps):
        x = x + eps * inv_metric * p
        lp, grad = target(x)
        if not (np.isfinite(lp) and np.all(np.isfinite(grad))):
            return x, -math.inf, grad, p
        if step < n_steps - 1:
            p = p + eps * grad
    p = p + 0.5 * eps * grad
    return x, lp, grad, p


def _hamiltonian(lp, p, inv_metric):
    return -lp + 0.5 * float(np.sum(inv_metric * p * p))


def _initial_step_size(target, x, lp, grad, inv_metric, rng, max_doublings):
    eps = 1.0
    p = rng.normal(size=x.shape) / np.sqrt(inv_metric)
    h0 = _hamiltonian(lp, p, inv_metric)

    def log_accept(e):
        _, lp1, _, p1 = _leapfrog(target, x, lp, grad, p, e, inv_metric, 1)
        h1 = _hamiltonian(lp1, p1, inv_metric) if np.isfinite(lp1) else math.inf
        return h0 - h1

    direction = 1 if log_accept(eps) > math.log(0.5) else -1
    for _ in range(max_doublings):
        la = log_accept(eps)
        if direction == 1 and not la > math.log(0.5):
            break
        if direction == -1 and la > math.log(0.5):
            break
        eps = eps * 2.0 if direction == 1 else eps / 2.0
    return eps


def _run_chain(target: LogDensity, dim: int, cfg: HmcConfig, seed: np.random.SeedSequence):
    rng = np.random.default_rng(seed)
    for _ in range(INIT_RETRIES):
        x = rng.normal(0.0, cfg.init_sd, size=dim)
        lp, grad = target(x)
        if np.isfinite(lp) and np.all(np.isfinite(grad)):
            break
    else:
        raise NumericalError(f"no finite log density/gradient after {INIT_RETRIES} initializations")

    inv_metric = np.ones(dim)
    eps = _initial_step_size(target, x, lp, grad, inv_metric, rng, cfg.max_step_doublings)
    da = _DualAveraging(eps, cfg.target_accept)

    warmup = cfg.warmup
    adapt_metric = warmup >= 20
    window_start, window_end = warmup // 2, warmup - max(warmup // 10, 1)
    window = []

    out = np.empty((cfg.draws, dim))
    accepted = 0.0
    divergences = 0
    for it in range(warmup + cfg.draws):
        n_steps = int(rng.integers(1, cfg.l_max + 1))
        p0 = rng.normal(size=dim) / np.sqrt(inv_metric)
        h0 = _hamiltonian(lp, p0, inv_metric)
        x1, lp1, grad1, p1 = _leapfrog(target, x, lp, grad, p0, eps, inv_metric, n_steps)
        h1 = _hamiltonian(lp1, p1, inv_metric) if np.isfinite(lp1) else math.inf
        delta = h0 - h1
        divergent = not np.isfinite(delta) or -delta > DIVERGENCE_THRESHOLD
        accept_prob = 0.0 if divergent else min(1.0, math.exp(min(delta, 0.0)))
        if rng.random() < accept_prob:
            x, lp, grad = x1, lp1, grad1

        if it < warmup:
            eps = da.update(accept_prob)
            if adapt_metric and window_start <= it < window_end:
                window.append(x)
            if adapt_metric and it == window_end - 1:
                n = len(window)
                var = np.var(np.asarray(window), axis=0, ddof=1) if n > 1 else np.ones(dim)
                inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                eps = _initial_step_size(target, x, lp, grad, inv_metric, rng, cfg.max_step_doublings)
                da = _DualAveraging(eps, cfg.target_accept)
            if it == warmup - 1:
                eps = da.final
        else:
            out[it - warmup] = x
            accepted += accept_prob
            divergences += int(divergent)
    stats = ChainStats(
        step_size=eps,
        inv_metric=inv_metric,
        accept_rate=accepted / cfg.draws,
        divergences=divergences,
    )
    return out, stats


def hmc_sample(target: LogDensity, dim: int, config: HmcConfig | None = None) -> HmcResult:
    """Draw ``config.chains`` independent HMC chains from ``target``.

    ``target(x)`` returns the log density and its gradient on an
    unconstrained ``dim``-dimensional space. The number of leapfrog steps is
    drawn uniformly from ``1..l_max`` every iteration.
    """
    cfg = config or HmcConfig()
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    workers = min(n_threads(cfg.threads), cfg.chains)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: _run_chain(target, dim, cfg, s), seeds))
    else:
        results = [_run_chain(target, dim, cfg, s) for s in seeds]
    samples = np.stack([r[0] for r in results])
    return HmcResult(samples=samples, chain_stats=[r[1] for r in results])
