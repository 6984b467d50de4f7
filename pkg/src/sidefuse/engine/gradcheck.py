"""Central-difference verification of analytic gradients."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .autodiff import Tensor
from .optim import Parameter, zero_grad


def grad_check(f: Callable[[], Tensor], params: list[Parameter],
               epsilon: float = 2.0 ** -10) -> float:
    """Max over parameter elements of |analytic - numeric| / max(1, |analytic|).

    ``f`` must be a deterministic closure that rebuilds its graph from the
    current parameter values and returns a scalar. Only the given parameters
    are perturbed; pass the ones whose gradients actually flow. The central
    difference divides by the float32 perturbation actually stored, so the
    default power-of-two epsilon costs no representation error.
    """
    if not 1e-5 <= epsilon <= 1e-2:
        raise ValueError(f"epsilon must be in [1e-5, 1e-2], got {epsilon}")
    zero_grad(params)
    out = f()
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise ValueError("grad_check: function returned a non-finite value")
    out.backward()
    analytic = {
        p.name: (p.tensor.grad.copy() if p.tensor.grad is not None
                 else np.zeros_like(p.tensor.data))
        for p in params
    }
    worst = 0.0
    for p in params:
        flat = p.tensor.data.reshape(-1)
        ana = analytic[p.name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = float(flat[i])
            fp = f().item()
            flat[i] = orig - epsilon
            lo = float(flat[i])
            fm = f().item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise ValueError(
                    f"grad_check: non-finite output while perturbing '{p.name}'[{i}]")
            numeric = (fp - fm) / (hi - lo)
            rel = abs(float(ana[i]) - numeric) / max(1.0, abs(float(ana[i])))
            worst = max(worst, rel)
    return worst
