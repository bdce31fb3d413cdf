"""Central finite-difference check of autodiff gradients in float64."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_diff_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-4,
    max_coords: int | None = 64,
    seed: int = 0,
    masks: Sequence[np.ndarray | None] | None = None,
) -> float:
    """Return the max relative error between autodiff and central differences.

    ``fn`` must rebuild its graph from ``params`` on every call. The params
    are promoted to float64 for the duration of the check and restored
    afterwards. At most ``max_coords`` coordinates per parameter are probed
    (all of them when ``None``). ``masks`` optionally restricts probing to
    the True entries of each parameter, e.g. to skip a frozen row.
    """
    saved = [p.data for p in params]
    rng = np.random.default_rng(seed)
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
            p.grad = None
        loss = fn()
        loss.backward()
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
        for p in params:
            p.grad = None

        worst = 0.0
        if masks is None:
            masks = [None] * len(params)
        for p, grad, mask in zip(params, analytic, masks):
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size) if mask is None else np.flatnonzero(mask)
            if max_coords is not None and len(coords) > max_coords:
                coords = np.sort(rng.choice(coords, size=max_coords, replace=False))
            for i in coords:
                orig = flat[i]
                flat[i] = orig + epsilon
                up = fn().item()
                flat[i] = orig - epsilon
                down = fn().item()
                flat[i] = orig
                numeric = (up - down) / (2 * epsilon)
                err = abs(grad.reshape(-1)[i] - numeric) / max(1e-8, abs(numeric))
                worst = max(worst, err)
        return worst
    finally:
        for p, d in zip(params, saved):
            p.data = d
            p.grad = None
