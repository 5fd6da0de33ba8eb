from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """In-place Adam update with bias correction.

    ``params`` maps names to arrays (or objects with a ``.data`` array);
    parameters without a gradient entry are left untouched.  Names are
    visited in sorted order.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name in sorted(params):
        g = grads.get(name)
        if g is None:
            continue
        p = params[name]
        arr = p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p
        m = state.m.setdefault(name, np.zeros_like(arr))
        v = state.v.setdefault(name, np.zeros_like(arr))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        arr -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
