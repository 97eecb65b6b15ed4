"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, no_grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    n_probes: int


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    probes: int = 20,
    step: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckResult:
    """Compare tape gradients with central differences.

    ``loss_fn`` must rebuild the scalar loss from the current parameter
    values on each call. Up to ``probes`` coordinates are drawn per
    parameter. The relative error of a coordinate is
    ``|a - n| / max(|a| + |n|, floor)``; the floor keeps exactly-zero
    gradients (e.g. attention key biases) from amplifying roundoff.
    """
    with Tape() as tape:
        loss = loss_fn()
    analytic = tape.backward(loss, params)

    rng = np.random.default_rng(seed)
    worst = (0.0, "", ())
    total = 0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        k = min(probes, flat.size)
        for i in rng.choice(flat.size, size=k, replace=False):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                up = loss_fn().item()
                flat[i] = orig - step
                down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            err = relative_error(float(analytic[name].reshape(-1)[i]), numeric, floor)
            total += 1
            if err > worst[0] or not worst[1]:
                worst = (err, name, tuple(int(v) for v in np.unravel_index(i, p.shape)))
    return GradCheckResult(worst[0], worst[1], worst[2], total)
