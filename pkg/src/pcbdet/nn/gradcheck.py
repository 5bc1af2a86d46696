"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from pcbdet.errors import NumericError
from pcbdet.nn.params import ParamStore
from pcbdet.nn.tensor import Tensor, no_grad


def grad_check(
    f: Callable[[], Tensor],
    point: ParamStore,
    eps: float | None = None,
    max_coords: int | None = 64,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must read its inputs from ``point`` and return a scalar tensor.
    Only non-frozen entries are checked; up to ``max_coords`` coordinates per
    entry are sampled (all of them when ``None``). The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if eps is None:
        eps = 1e-5 if all(t.dtype == np.float64 for _, t in point.items()) else 1e-3
    point.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("grad_check: non-finite loss")
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in point.trainable()}
    point.zero_grad()

    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for name, t in point.trainable():
            flat = t.data.reshape(-1)
            n = flat.size
            coords = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                up = float(f().data)
                flat[i] = orig - eps
                down = float(f().data)
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericError(f"grad_check: non-finite loss while perturbing {name}[{i}]")
                numeric = (up - down) / (2 * eps)
                a = float(analytic[name].reshape(-1)[i])
                worst = max(worst, abs(a - numeric) / max(1.0, abs(numeric)))
    return worst
