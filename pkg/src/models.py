"""The single-frame regression CNN and the windowed Elman RNN that runs on its frozen features.

CNN pipeline (valid 5x5 convolutions):
    [conv -> act -> maxpool2] x 2 -> conv -> act -> quadrant_pool -> flatten
    -> fc -> act -> (dropout) -> regress (1 unit)

RNN, per layer l and step t:
    h_t = act(W_x x_t + W_h h_{t-1} + b_h),  h_{-1} = 0
    y_t = W_o h_t(last layer) + b_o
"""
import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dataio import FeatureTimeline, fill_gaps
from .errors import ConfigError, ContextError, FrozenModelError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CnnSpec:
    input_height: int = 96
    input_width: int = 96
    input_channels: int = 1
    conv_filters: tuple = (64, 128, 256)
    kernel_size: int = 5
    fc_units: int = 300
    dropout_p: float = 0.0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        if len(self.conv_filters) != 3:
            raise ConfigError(f"conv_filters must list 3 filter counts, got {list(self.conv_filters)}")
        if any(f < 1 for f in self.conv_filters) or self.fc_units < 1 or self.input_channels < 1:
            raise ConfigError("filter counts, fc_units and input_channels must be >= 1")
        if self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.activation not in T.ACTIVATIONS:
            raise ConfigError(f"activation must be one of {T.ACTIVATIONS}, got '{self.activation}'")
        self.shape_chain()

    def shape_chain(self) -> list:
        """[(stage, (C, H, W)), ...] through every stage; raises ConfigError on an unusable extent."""
        k = self.kernel_size
        c, h, w = self.input_channels, self.input_height, self.input_width
        chain = [("input", (c, h, w))]
        for i, filters in enumerate(self.conv_filters, start=1):
            h, w = h - k + 1, w - k + 1
            if h < 1 or w < 1:
                raise ConfigError(f"conv{i}: input too small for kernel {k} (would give {h}x{w})")
            c = filters
            chain.append((f"conv{i}", (c, h, w)))
            if i < 3:
                if h % 2 or w % 2:
                    raise ConfigError(f"pool{i}: maxpool2 needs even extents, conv{i} gives {h}x{w}")
                h, w = h // 2, w // 2
                chain.append((f"pool{i}", (c, h, w)))
            else:
                if h < 2 or w < 2:
                    raise ConfigError(f"quadrant: needs extents >= 2, conv3 gives {h}x{w}")
                chain.append(("quadrant", (c, 2, 2)))
        return chain

    @property
    def flatten_dim(self) -> int:
        return self.conv_filters[-1] * 4

    @property
    def input_shape(self) -> tuple:
        return (self.input_channels, self.input_height, self.input_width)


@dataclass(frozen=True)
class RnnSpec:
    input_dim: int = 300
    hidden_sizes: tuple = (100,)
    window_W: int = 100
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes:
            raise ConfigError("hidden_sizes must name at least one layer")
        if any(h < 1 for h in self.hidden_sizes) or self.input_dim < 1:
            raise ConfigError("layer widths and input_dim must be >= 1")
        if self.window_W < 1:
            raise ConfigError(f"window_W must be >= 1, got {self.window_W}")
        if self.activation not in T.ACTIVATIONS:
            raise ConfigError(f"activation must be one of {T.ACTIVATIONS}, got '{self.activation}'")


def cnn_param_shapes(spec: CnnSpec) -> dict:
    k = spec.kernel_size
    shapes = {}
    c_in = spec.input_channels
    for i, filters in enumerate(spec.conv_filters, start=1):
        shapes[f"conv{i}.kernels"] = (filters, c_in, k, k)
        shapes[f"conv{i}.bias"] = (filters,)
        c_in = filters
    shapes["fc.weight"] = (spec.fc_units, spec.flatten_dim)
    shapes["fc.bias"] = (spec.fc_units,)
    shapes["regress.weight"] = (1, spec.fc_units)
    shapes["regress.bias"] = (1,)
    return shapes


def rnn_param_shapes(spec: RnnSpec) -> dict:
    shapes = {}
    d_in = spec.input_dim
    for layer, h in enumerate(spec.hidden_sizes):
        shapes[f"layer{layer}.W_x"] = (h, d_in)
        shapes[f"layer{layer}.W_h"] = (h, h)
        shapes[f"layer{layer}.b_h"] = (h,)
        d_in = h
    shapes["out.W_o"] = (1, d_in)
    shapes["out.b_o"] = (1,)
    return shapes


def _init_params(shapes: dict, rng: np.random.Generator) -> dict:
    """Uniform in [-s, s] with s = sqrt(1/fan_in); 1-d tensors (biases) start at zero."""
    params = {}
    for name, shape in shapes.items():
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            s = np.sqrt(1.0 / fan_in)
            params[name] = rng.uniform(-s, s, size=shape)
    return params


@dataclass(eq=False)
class _Model:
    params: dict
    version: int = field(default=0, compare=False)

    def touch(self):
        """Mark parameters as changed; traces taken before this point become stale."""
        self.version += 1

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()

    @property
    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def _check_shapes(self, expected: dict):
        if set(self.params) != set(expected):
            raise ShapeError(f"parameter names {sorted(self.params)} != expected {sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != tuple(shape):
                raise ShapeError(f"parameter {name}: shape {self.params[name].shape} != {tuple(shape)}")


@dataclass(eq=False)
class CnnModel(_Model):
    spec: CnnSpec = field(default_factory=CnnSpec)

    def __post_init__(self):
        self._check_shapes(cnn_param_shapes(self.spec))

    @classmethod
    def init(cls, spec: CnnSpec, rng: np.random.Generator) -> "CnnModel":
        return cls(params=_init_params(cnn_param_shapes(spec), rng), spec=spec)

    @classmethod
    def zeros(cls, spec: CnnSpec) -> "CnnModel":
        return cls(params={n: np.zeros(s) for n, s in cnn_param_shapes(spec).items()}, spec=spec)


@dataclass(eq=False)
class RnnModel(_Model):
    spec: RnnSpec = field(default_factory=RnnSpec)

    def __post_init__(self):
        self._check_shapes(rnn_param_shapes(self.spec))

    @classmethod
    def init(cls, spec: RnnSpec, rng: np.random.Generator) -> "RnnModel":
        return cls(params=_init_params(rnn_param_shapes(spec), rng), spec=spec)

    @classmethod
    def zeros(cls, spec: RnnSpec) -> "RnnModel":
        return cls(params={n: np.zeros(s) for n, s in rnn_param_shapes(spec).items()}, spec=spec)


@dataclass(frozen=True)
class Trace:
    """Forward contexts in execution order plus the identity of the model that produced them."""
    model_id: int
    version: int
    mode: str
    steps: list
    meta: dict = field(default_factory=dict)


def _check_trace(model: _Model, trace, kind: str):
    if not isinstance(trace, Trace) or trace.meta.get("kind") != kind:
        raise ContextError(f"{kind}_backward needs a trace from {kind}_forward")
    if trace.model_id != id(model):
        raise ContextError(f"{kind}_backward: trace was produced by a different model")
    if trace.version != model.version:
        raise ContextError(f"{kind}_backward: stale trace (model changed since the forward pass)")


# --- CNN ---------------------------------------------------------------------------


def cnn_forward(model: CnnModel, image: T.Tensor, mode: str = "eval", rng: np.random.Generator | None = None):
    """Returns (valence, features, trace). `features` is the post-activation FC vector."""
    spec, p = model.spec, model.params
    if mode not in T.MODES:
        raise ConfigError(f"mode must be one of {T.MODES}, got '{mode}'")
    if tuple(image.shape) != spec.input_shape:
        raise ShapeError(f"input: image shape {tuple(image.shape)} != spec {spec.input_shape}")
    steps = []
    x = image
    for i in (1, 2, 3):
        try:
            x, ctx = T.conv2d(x, p[f"conv{i}.kernels"], p[f"conv{i}.bias"])
        except ShapeError as exc:
            raise ShapeError(f"conv{i}: {exc}") from exc
        steps.append(ctx)
        x, ctx = T.activation(x, spec.activation)
        steps.append(ctx)
        if i < 3:
            x, ctx = T.maxpool2(x)
        else:
            x, ctx = T.quadrant_pool(x)
        steps.append(ctx)
    flat_shape = x.shape
    x = x.reshape(-1)
    x, ctx = T.linear(x, p["fc.weight"], p["fc.bias"])
    steps.append(ctx)
    features, ctx = T.activation(x, spec.activation)
    steps.append(ctx)
    x = features
    use_dropout = mode == "train" and spec.dropout_p > 0
    if use_dropout:
        if rng is None:
            raise ConfigError("cnn_forward: train mode with dropout needs an rng")
        x, ctx = T.dropout(x, spec.dropout_p, mode, rng)
        steps.append(ctx)
    out, ctx = T.linear(x, p["regress.weight"], p["regress.bias"])
    steps.append(ctx)
    trace = Trace(id(model), model.version, mode, steps, {"kind": "cnn", "flat_shape": flat_shape, "dropout": use_dropout})
    return float(out[0]), features, trace


def cnn_backward(model: CnnModel, trace: Trace, d_valence: float) -> dict:
    """Exact parameter gradients for the forward recorded in `trace` (train mode)."""
    _check_trace(model, trace, "cnn")
    if trace.mode != "train":
        raise ContextError("cnn_backward needs a train-mode trace")
    steps = list(trace.steps)
    grads = {}
    g, grads["regress.weight"], grads["regress.bias"] = T.linear_backward(steps.pop(), np.array([d_valence], dtype=np.float64))
    if trace.meta["dropout"]:
        g = T.dropout_backward(steps.pop(), g)
    g = T.activation_backward(steps.pop(), g)
    g, grads["fc.weight"], grads["fc.bias"] = T.linear_backward(steps.pop(), g)
    g = g.reshape(trace.meta["flat_shape"])
    for i in (3, 2, 1):
        pool_ctx = steps.pop()
        if i == 3:
            g = T.quadrant_pool_backward(pool_ctx, g)
        else:
            g = T.maxpool2_backward(pool_ctx, g)
        g = T.activation_backward(steps.pop(), g)
        g, grads[f"conv{i}.kernels"], grads[f"conv{i}.bias"] = T.conv2d_backward(steps.pop(), g)
    return grads


def cnn_predict(model: CnnModel, image: T.Tensor) -> float:
    valence, _, _ = cnn_forward(model, image, "eval")
    return valence


def extract_features(model: CnnModel, frames, labels=None, sequence_id: str = "") -> FeatureTimeline:
    """Run the frozen CNN (eval mode, regression head unused) over every frame.

    `frames` entries may be None for frames without a detected face; their
    feature vectors are gap-filled per dimension and flagged in the mask.
    """
    spec = model.spec
    before = model.checksum()
    n = len(frames)
    if n == 0:
        raise ShapeError("extract_features: no frames")
    feats = np.full((n, spec.fc_units), np.nan)
    missing = np.zeros(n, dtype=bool)
    for idx, frame in enumerate(frames):
        if frame is None:
            missing[idx] = True
            continue
        if tuple(frame.shape) != spec.input_shape:
            raise ShapeError(f"frame {idx}: shape {tuple(frame.shape)} != spec {spec.input_shape}")
        _, feats[idx], _ = cnn_forward(model, frame, "eval")
    if missing.any():
        if missing.all():
            raise ShapeError(f"extract_features: sequence '{sequence_id}' has no usable frame")
        filled = np.empty_like(feats)
        for d in range(spec.fc_units):
            filled[:, d], _ = fill_gaps(feats[:, d], missing)
        feats = filled
    if model.checksum() != before:
        raise FrozenModelError(f"extract_features: frozen CNN parameters changed while extracting '{sequence_id}'")
    lab = None if labels is None else np.asarray(labels, dtype=np.float64)
    return FeatureTimeline(sequence_id=sequence_id, features=feats, labels=lab, mask=missing)


# --- RNN ---------------------------------------------------------------------------


def _rnn_run(model: RnnModel, xs: np.ndarray):
    """Forward a batch of windows xs[B, L, D]; returns (outputs[B, L], steps)."""
    spec, p = model.spec, model.params
    B, L, D = xs.shape
    if D != spec.input_dim:
        raise ShapeError(f"rnn: feature dim {D} != spec input_dim {spec.input_dim}")
    layers = []
    seq = xs
    for layer, width in enumerate(spec.hidden_sizes):
        W_x, W_h, b_h = p[f"layer{layer}.W_x"], p[f"layer{layer}.W_h"], p[f"layer{layer}.b_h"]
        h = np.zeros((B, width))
        hs = np.empty((B, L, width))
        ctxs = []
        for t in range(L):
            a_in, c_in = T.linear(seq[:, t], W_x, b_h)
            a_rec, c_rec = T.linear(h, W_h, None)
            h, c_act = T.activation(a_in + a_rec, spec.activation)
            hs[:, t] = h
            ctxs.append((c_in, c_rec, c_act))
        layers.append(ctxs)
        seq = hs
    outs = np.empty((B, L))
    heads = []
    for t in range(L):
        y, c_out = T.linear(seq[:, t], p["out.W_o"], p["out.b_o"])
        outs[:, t] = y[:, 0]
        heads.append(c_out)
    return outs, {"layers": layers, "heads": heads, "shape": (B, L)}


def _rnn_grads(model: RnnModel, steps: dict, d_out: np.ndarray) -> dict:
    """Backpropagation through time over every step and layer; gradients summed over steps."""
    spec, p = model.spec, model.params
    B, L = steps["shape"]
    grads = {name: np.zeros_like(val) for name, val in p.items()}
    top = spec.hidden_sizes[-1]
    d_seq = np.zeros((B, L, top))
    for t in range(L):
        dh, dW, db = T.linear_backward(steps["heads"][t], d_out[:, t:t + 1])
        d_seq[:, t] = dh
        grads["out.W_o"] += dW
        grads["out.b_o"] += db
    for layer in reversed(range(len(spec.hidden_sizes))):
        ctxs = steps["layers"][layer]
        d_below = None
        dh_next = np.zeros((B, spec.hidden_sizes[layer]))
        for t in reversed(range(L)):
            c_in, c_rec, c_act = ctxs[t]
            da = T.activation_backward(c_act, d_seq[:, t] + dh_next)
            dx, dWx, dbh = T.linear_backward(c_in, da)
            dh_next, dWh, _ = T.linear_backward(c_rec, da)
            grads[f"layer{layer}.W_x"] += dWx
            grads[f"layer{layer}.W_h"] += dWh
            grads[f"layer{layer}.b_h"] += dbh
            if d_below is None:
                d_below = np.zeros((B, L, dx.shape[1]))
            d_below[:, t] = dx
        d_seq = d_below
    return grads


def rnn_forward(model: RnnModel, window: T.Tensor, mode: str = "eval", rng: np.random.Generator | None = None):
    """Run one window [W, D]; returns (outputs[W], trace). The RNN has no stochastic layer, so `rng` is unused."""
    spec = model.spec
    if mode not in T.MODES:
        raise ConfigError(f"mode must be one of {T.MODES}, got '{mode}'")
    if window.ndim != 2 or window.shape[0] != spec.window_W:
        raise ShapeError(f"rnn_forward: window must have {spec.window_W} rows, got shape {window.shape}")
    outs, steps = _rnn_run(model, window[None])
    return outs[0], Trace(id(model), model.version, mode, [steps], {"kind": "rnn"})


def rnn_forward_batch(model: RnnModel, windows: np.ndarray, mode: str = "train"):
    """Batched rnn_forward over windows [B, W, D]; returns (outputs[B, W], trace)."""
    spec = model.spec
    if windows.ndim != 3 or windows.shape[1] != spec.window_W:
        raise ShapeError(f"rnn_forward_batch: windows must be [B, {spec.window_W}, D], got shape {windows.shape}")
    outs, steps = _rnn_run(model, windows)
    return outs, Trace(id(model), model.version, mode, [steps], {"kind": "rnn"})


def rnn_backward(model: RnnModel, trace: Trace, d_outputs: np.ndarray) -> dict:
    """Parameter gradients for d_outputs shaped like the forward's outputs ([W] or [B, W])."""
    _check_trace(model, trace, "rnn")
    steps = trace.steps[0]
    B, L = steps["shape"]
    d = np.asarray(d_outputs, dtype=np.float64).reshape(-1)
    if d.size != B * L:
        raise ContextError(f"rnn_backward: upstream gradient has {d.size} values, forward produced {B * L}")
    return _rnn_grads(model, steps, d.reshape(B, L))


def predict_timeline(cnn: CnnModel | None, rnn: RnnModel, features: FeatureTimeline) -> np.ndarray:
    """Per-frame valence: the last RNN output of the W-frame window ending at each t.

    Frames t < W-1 use the truncated prefix [0..t]. `cnn`, when given, only
    checks that the timeline came from a compatible feature extractor.
    """
    W = rnn.spec.window_W
    feats = features.features
    n = feats.shape[0]
    if n == 0:
        raise ShapeError("predict_timeline: empty timeline")
    if cnn is not None and cnn.spec.fc_units != feats.shape[1]:
        raise ShapeError(f"predict_timeline: feature dim {feats.shape[1]} != CNN fc_units {cnn.spec.fc_units}")
    preds = np.empty(n)
    for t in range(n):
        lo = max(0, t - W + 1)
        outs, _ = _rnn_run(rnn, feats[None, lo:t + 1])
        preds[t] = outs[0, -1]
    return preds
