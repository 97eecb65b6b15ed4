from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import NumericError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adaptive-moment optimizer with bias-corrected moments.

    Updates parameter arrays in place. Gradients are validated before any
    parameter is touched, so a bad step leaves everything unchanged.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> None:
        st = self.state
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
        st.step += 1
        c1 = 1.0 - st.beta1 ** st.step
        c2 = 1.0 - st.beta2 ** st.step
        for name, p in params.items():
            g = grads[name]
            m = st.m.get(name)
            if m is None:
                m = st.m[name] = np.zeros_like(p.data)
                st.v[name] = np.zeros_like(p.data)
            v = st.v[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * (g * g)
            if st.lr != 0.0:
                p.data -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
