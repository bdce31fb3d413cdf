"""Exact O(n^2) t-SNE.

Gaussian input affinities are calibrated per point by bisection on the
precision to hit the requested perplexity. The map is optimised by gradient
descent with momentum, adaptive gains and early exaggeration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_POINTS = 5_000


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    exaggeration_iters: int = 250
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    seed: int = 0

    def validate(self, n: int) -> None:
        if n < 2:
            raise ValueError("t-SNE needs at least 2 points")
        if n > MAX_POINTS:
            raise ValueError(f"exact t-SNE is limited to {MAX_POINTS} points, got {n}")
        if not 1 < self.perplexity < (n - 1) / 3:
            raise ValueError(
                f"perplexity must lie in (1, {(n - 1) / 3:.3g}) for {n} points, got {self.perplexity}"
            )
        if self.iterations < 250:
            raise ValueError("iterations must be >= 250")


def squared_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_entropy(d_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    p = np.exp(-(d_row - d_row.min()) * beta)
    s = p.sum()
    p /= s
    h = -np.sum(p[p > 0] * np.log(p[p > 0]))
    return float(h), p


def conditional_probabilities(
    d2: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 50
) -> np.ndarray:
    """Row-stochastic P(j | i) whose entropies match ``log(perplexity)``."""
    n = d2.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, lo, hi = 1.0, -np.inf, np.inf
        h, p = _row_entropy(row, beta)
        for _ in range(max_iter):
            diff = h - target
            if abs(diff) <= tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2 if hi == np.inf else (beta + hi) / 2
            else:
                hi = beta
                beta = beta / 2 if lo == -np.inf else (beta + lo) / 2
            h, p = _row_entropy(row, beta)
        P[i, np.arange(n) != i] = p
    return P


def joint_probabilities(x: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrised affinities normalised to sum to 1."""
    P = conditional_probabilities(squared_distances(x), perplexity)
    P = P + P.T
    return P / P.sum()


def tsne_project(x: np.ndarray, cfg: TsneConfig | None = None) -> np.ndarray:
    """Embed the rows of ``x`` in 2-D; deterministic for a given ``cfg.seed``."""
    cfg = cfg or TsneConfig()
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    cfg.validate(n)
    rng = np.random.default_rng(cfg.seed)
    if np.ptp(x, axis=0).max(initial=0.0) == 0.0:
        # all rows identical: break the tie with tiny seeded noise
        x = x + rng.normal(scale=1e-10, size=x.shape)
    P = joint_probabilities(x, cfg.perplexity)

    y = rng.normal(scale=1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    for it in range(cfg.iterations):
        exaggerate = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        momentum = cfg.momentum if it < cfg.momentum_switch else cfg.final_momentum
        num = 1.0 / (1.0 + squared_distances(y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (exaggerate * P - Q) * num
        grad = 4.0 * (W.sum(axis=1)[:, None] * y - W @ y)
        same = np.sign(grad) == np.sign(velocity)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        velocity = momentum * velocity - cfg.learning_rate * gains * grad
        y = y + velocity
        y -= y.mean(axis=0)
    return y


def kl_divergence(P: np.ndarray, y: np.ndarray) -> float:
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-12)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))
