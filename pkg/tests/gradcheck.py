"""Central finite-difference checks for layers with hand-written backward passes."""

from __future__ import annotations

import numpy as np

STEP = 1e-4


def rel_error(a, b) -> float:
    # the floor keeps exactly-zero gradients (e.g. a bias feeding batch norm) from
    # turning round-off into a relative error of 1
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-6)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        up = f()
        x[i] = old - step
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * step)
    return g


def check_module(module, x: np.ndarray, rng: np.random.Generator, step: float = STEP) -> dict[str, float]:
    """Relative errors of input and parameter gradients of ``sum(R * module(x))``."""
    out = module.forward(x)
    weights = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(weights * module.forward(x)))

    module.zero_grad()
    module.forward(x)
    dx = module.backward(weights.astype(out.dtype))
    errors = {"input": rel_error(dx, numeric_grad(loss, x, step))}
    analytic = {name: p.grad.copy() for name, p in module.named_parameters()}
    for name, p in module.named_parameters():
        errors[name] = rel_error(analytic[name], numeric_grad(loss, p.value, step))
    return errors


def check_loss(loss_fn, prediction: np.ndarray, *args, step: float = STEP) -> float:
    _, grad = loss_fn(prediction, *args)
    num = numeric_grad(lambda: loss_fn(prediction, *args)[0], prediction, step)
    return rel_error(grad, num)
