"""Dense float64 tensors and the differentiable primitives the models are built from.

Every primitive is a pair: `op(...) -> (out, OpContext)` and
`op_backward(ctx, grad_out) -> gradients`. Gradients are derived by hand per
op; there is no graph. A context records which op produced it, so feeding it
to a different backward raises `ContextError`.
"""
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContextError, ShapeError
from .kernels import maxpool2_scan, quadrant_scan, route_to_argmax

Tensor = np.ndarray

ACTIVATIONS = ("relu", "tanh")
MODES = ("train", "eval")


@dataclass(frozen=True)
class OpContext:
    op: str
    out_shape: tuple
    saved: dict = field(default_factory=dict)


def as_tensor(values, shape=None) -> Tensor:
    """Build a float64, C-ordered tensor; `shape` reshapes a flat `values` list."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeError(f"tensor extents must be positive, got {shape}")
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"shape {shape} needs {int(np.prod(shape))} values, got {arr.size}")
        arr = arr.reshape(shape)
    return arr


def _check_ctx(ctx, op: str, grad: Tensor):
    if not isinstance(ctx, OpContext) or ctx.op != op:
        got = ctx.op if isinstance(ctx, OpContext) else type(ctx).__name__
        raise ContextError(f"{op}_backward received a context from '{got}'")
    if tuple(np.shape(grad)) != ctx.out_shape:
        raise ContextError(f"{op}_backward: upstream gradient shape {np.shape(grad)} != forward output {ctx.out_shape}")


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor):
    """Valid (unpadded, stride 1) cross-correlation: [C_in,H,W] -> [C_out,H-k+1,W-k+1]."""
    if x.ndim != 3:
        raise ShapeError(f"conv2d: input must be [C,H,W], got shape {x.shape}")
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"conv2d: kernels must be [C_out,C_in,k,k], got shape {kernels.shape}")
    c_out, c_in, k, _ = kernels.shape
    if k < 1:
        raise ShapeError("conv2d: kernel size must be >= 1")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d: input channels {x.shape[0]} != kernel input channels {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    _, H, W = x.shape
    if H < k:
        raise ShapeError(f"conv2d: input height {H} < kernel size {k}")
    if W < k:
        raise ShapeError(f"conv2d: input width {W} < kernel size {k}")
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # [C_in, Ho, Wo, k, k]
    out = np.tensordot(kernels, win, axes=([1, 2, 3], [0, 3, 4])) + bias[:, None, None]
    return out, OpContext("conv2d", out.shape, {"x": x, "kernels": kernels})


def conv2d_backward(ctx: OpContext, grad: Tensor):
    """Returns (d_input, d_kernels, d_bias)."""
    _check_ctx(ctx, "conv2d", grad)
    x, kernels = ctx.saved["x"], ctx.saved["kernels"]
    k = kernels.shape[2]
    win = sliding_window_view(x, (k, k), axis=(1, 2))
    d_kernels = np.tensordot(grad, win, axes=([1, 2], [1, 2]))
    d_bias = grad.sum(axis=(1, 2))
    padded = np.pad(grad, ((0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    gwin = sliding_window_view(padded, (k, k), axis=(1, 2))  # [C_out, H, W, k, k]
    flipped = kernels[:, :, ::-1, ::-1]
    d_x = np.tensordot(flipped, gwin, axes=([0, 2, 3], [0, 3, 4]))
    return d_x, d_kernels, d_bias


def maxpool2(x: Tensor):
    """Disjoint 2x2 max pooling; H and W must be even."""
    if x.ndim != 3:
        raise ShapeError(f"maxpool2: input must be [C,H,W], got shape {x.shape}")
    _, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2: extents must be even, got H={H} W={W}")
    out, arg = maxpool2_scan(np.ascontiguousarray(x))
    return out, OpContext("maxpool2", out.shape, {"arg": arg, "hw": (H, W)})


def maxpool2_backward(ctx: OpContext, grad: Tensor):
    _check_ctx(ctx, "maxpool2", grad)
    H, W = ctx.saved["hw"]
    return route_to_argmax(np.ascontiguousarray(grad, dtype=np.float64), ctx.saved["arg"], H, W)


def quadrant_pool(x: Tensor):
    """Max over the four quadrants split at floor(H/2), floor(W/2): [C,H,W] -> [C,2,2]."""
    if x.ndim != 3:
        raise ShapeError(f"quadrant_pool: input must be [C,H,W], got shape {x.shape}")
    _, H, W = x.shape
    if H < 2 or W < 2:
        raise ShapeError(f"quadrant_pool: extents must be >= 2, got H={H} W={W}")
    out, arg = quadrant_scan(np.ascontiguousarray(x))
    return out, OpContext("quadrant_pool", out.shape, {"arg": arg, "hw": (H, W)})


def quadrant_pool_backward(ctx: OpContext, grad: Tensor):
    _check_ctx(ctx, "quadrant_pool", grad)
    H, W = ctx.saved["hw"]
    return route_to_argmax(np.ascontiguousarray(grad, dtype=np.float64), ctx.saved["arg"], H, W)


def activation(x: Tensor, kind: str):
    if kind == "relu":
        out = np.maximum(x, 0.0)
    elif kind == "tanh":
        out = np.tanh(x)
    else:
        raise ConfigError(f"activation kind must be one of {ACTIVATIONS}, got '{kind}'")
    return out, OpContext("activation", out.shape, {"kind": kind, "x": x, "out": out})


def activation_backward(ctx: OpContext, grad: Tensor):
    _check_ctx(ctx, "activation", grad)
    if ctx.saved["kind"] == "relu":
        # derivative at exactly 0 is 0
        return grad * (ctx.saved["x"] > 0)
    out = ctx.saved["out"]
    return grad * (1.0 - out * out)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None):
    """Affine map weight @ x + bias. `x` may be [n] or a batch [B, n]; `bias=None` omits the bias term."""
    if weight.ndim != 2:
        raise ShapeError(f"linear: weight must be [m,n], got shape {weight.shape}")
    m, n = weight.shape
    if x.ndim not in (1, 2) or x.shape[-1] != n:
        raise ShapeError(f"linear: input dim {x.shape[-1] if x.ndim else 0} != weight columns {n}")
    if bias is not None and bias.shape != (m,):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({m},)")
    out = x @ weight.T
    if bias is not None:
        out = out + bias
    return out, OpContext("linear", out.shape, {"x": x, "weight": weight, "has_bias": bias is not None})


def linear_backward(ctx: OpContext, grad: Tensor):
    """Returns (d_input, d_weight, d_bias); d_bias is None when the forward had no bias."""
    _check_ctx(ctx, "linear", grad)
    x, weight = ctx.saved["x"], ctx.saved["weight"]
    d_x = grad @ weight
    if x.ndim == 1:
        d_w = np.outer(grad, x)
        d_b = grad.copy()
    else:
        d_w = grad.T @ x
        d_b = grad.sum(axis=0)
    return d_x, d_w, (d_b if ctx.saved["has_bias"] else None)


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator):
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p); eval is the identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if mode not in MODES:
        raise ConfigError(f"dropout mode must be one of {MODES}, got '{mode}'")
    if mode == "eval":
        return x, OpContext("dropout", x.shape, {"mask": None})
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, OpContext("dropout", x.shape, {"mask": mask})


def dropout_backward(ctx: OpContext, grad: Tensor):
    _check_ctx(ctx, "dropout", grad)
    mask = ctx.saved["mask"]
    return grad if mask is None else grad * mask


def mse_loss(pred: Tensor, target: Tensor):
    """Mean squared error over all elements; returns (loss, ctx)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: pred shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ShapeError("mse_loss: empty input")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, OpContext("mse_loss", (), {"diff": diff})


def mse_loss_backward(ctx: OpContext, grad: float = 1.0):
    """Gradient w.r.t. pred: (2/n)(pred - target), scaled by the upstream scalar."""
    _check_ctx(ctx, "mse_loss", np.asarray(grad))
    diff = ctx.saved["diff"]
    return (2.0 / diff.size) * diff * grad
