"""Central finite-difference checks for layer and model gradients."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from .layers import Layer, softmax_cross_entropy

FD_STEP = 1e-5


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-5) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)``.

    The floor keeps identically-zero gradients (a bias feeding batchnorm)
    from being judged on finite-difference round-off alone.
    """
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), floor)
    return float(np.linalg.norm(a - b)) / denom


def numerical_gradient(f: Callable[[], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Gradient of ``f`` with respect to ``x``, which ``f`` must read in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        fp = f()
        x[idx] = orig - step
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * step)
    return g


def check_layer(layer: Layer, x: np.ndarray, seed: int = 0, train: bool = True, step: float = FD_STEP) -> dict[str, float]:
    """Relative errors of the input and parameter gradients of ``layer``.

    The scalar probed is ``sum(y * R)`` for a fixed random ``R``.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    proj = rng.standard_normal(layer.forward(x, train).shape)

    def f():
        return float(np.sum(layer.forward(x, train) * proj))

    layer.forward(x, train)
    dx = layer.backward(proj)
    analytic = {"input": dx, **{k: v.copy() for k, v in layer.grads.items()}}
    errors = {"input": relative_error(dx, numerical_gradient(f, x, step))}
    for key, p in layer.params.items():
        errors[key] = relative_error(analytic[key], numerical_gradient(f, p, step))
    return errors


def check_softmax_ce(logits: np.ndarray, targets: np.ndarray, step: float = FD_STEP) -> float:
    logits = np.array(logits, dtype=np.float64)
    _, _, grad = softmax_cross_entropy(logits, targets)

    def f():
        return softmax_cross_entropy(logits, targets)[0]

    return relative_error(grad, numerical_gradient(f, logits, step))


def check_model(model, x: np.ndarray, targets: np.ndarray, l2: float = 0.0, step: float = FD_STEP) -> dict[str, float]:
    """Relative error per parameter tensor of the full training loss."""
    x = np.array(x, dtype=np.float64)

    def f():
        return model.loss_and_grads(x, targets, l2)[0]

    model.loss_and_grads(x, targets, l2)
    analytic = {k: v.copy() for k, v in model.grad_dict().items()}
    return {
        name: relative_error(analytic[name], numerical_gradient(f, p, step))
        for name, p in model.param_dict().items()
    }
