"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
              max_coords: int | None = None, seed: int = 0) -> float:
    """Return the maximum relative error between autodiff and finite differences.

    ``f`` must rebuild the graph on every call and return a scalar. Each
    checked coordinate is perturbed by ``±h``. The relative error of a
    coordinate is ``max(|a - n| - noise, 0) / (max(|a|, |n|) + 1e-6 * max|n|)``
    where ``max|n|`` is taken over the whole parameter and ``noise`` is ten
    times the round-off bound ``eps * |f| / h`` of a central difference. The
    finite difference cannot resolve anything below ``noise``, which matters
    for entries whose true gradient is zero (e.g. attention key biases).
    ``max_coords`` limits the number of coordinates checked per parameter
    (sampled with ``seed``).
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"gradcheck requires float64 parameters, got {p.dtype}")
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    noise = 10.0 * np.finfo(np.float64).eps * abs(loss.item()) / h
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(len(coords))
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * h)
        a_sel = a.reshape(-1)[coords]
        floor = 1e-6 * float(np.abs(numeric).max(initial=0.0)) + 1e-300
        excess = np.maximum(np.abs(a_sel - numeric) - noise, 0.0)
        rel = excess / (np.maximum(np.abs(a_sel), np.abs(numeric)) + floor)
        worst = max(worst, float(rel.max(initial=0.0)))
    for p in params:
        p.grad = None
    return worst
