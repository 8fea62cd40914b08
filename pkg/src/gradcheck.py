"""Central finite-difference oracle for the hand-derived backward passes."""
import numpy as np

EPS = 1e-5


def numeric_grad(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """d f / d x by central differences; `f` takes no arguments and reads `x` in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        g[i] = (up - down) / (2.0 * eps)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute disagreement scaled by the largest gradient magnitude in the tensor."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def check_params(loss_fn, params: dict, grads: dict, eps: float = EPS) -> dict:
    """Compare analytic `grads` with finite differences of `loss_fn()` for every named parameter.

    Parameters are perturbed in place and restored; returns {name: relative error}.
    """
    errors = {}
    for name, p in params.items():
        num = numeric_grad(loss_fn, p, eps)
        errors[name] = rel_error(grads[name], num)
    return errors
