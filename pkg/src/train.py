"""Training loops: the single-frame CNN, then the windowed RNN on frozen CNN features."""
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from . import tensor as T
from .dataio import FeatureTimeline, LoadedSequence, fill_gaps, make_windows
from .errors import ShapeError, TrainingError
from .metrics import evaluate_timelines
from .models import (
    CnnModel, CnnSpec, RnnModel, RnnSpec, cnn_backward, cnn_forward, cnn_predict,
    predict_timeline, rnn_backward, rnn_forward_batch,
)
from .optim import AugmentConfig, OptState, SgdConfig, augment, sgd_step

logger = logging.getLogger(__name__)

DROPOUT_P = 0.5


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    rmse: float
    cc: float
    ccc: float
    seconds: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def add(self, record: EpochRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def losses(self) -> list:
        return [r.loss for r in self.records]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=["epoch", "loss", "rmse", "cc", "ccc", "seconds"])

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)


def _check_finite(loss: float, epoch: int, batch: int, what: str):
    if not np.isfinite(loss):
        raise TrainingError(f"{what}: non-finite loss {loss}", epoch=epoch, batch=batch)


def _accumulate(total: dict | None, grads: dict) -> dict:
    if total is None:
        return {k: v.copy() for k, v in grads.items()}
    for k, v in grads.items():
        total[k] += v
    return total


def cnn_batch(model: CnnModel, images, labels, rng: np.random.Generator, augment_cfg: AugmentConfig | None = None):
    """Mean-MSE loss and parameter gradients over one minibatch.

    Samples are processed one at a time (forward, then backward with upstream
    scaled by 1/B) and gradients summed in sample order.
    """
    B = len(images)
    if B == 0:
        raise ShapeError("cnn_batch: empty batch")
    total = None
    loss = 0.0
    for img, y in zip(images, labels):
        if augment_cfg is not None:
            img = augment(img, rng, augment_cfg)
        pred, _, trace = cnn_forward(model, img, "train", rng)
        l_i, ctx = T.mse_loss(np.array([pred]), np.array([y]))
        d_pred = T.mse_loss_backward(ctx, 1.0 / B)
        total = _accumulate(total, cnn_backward(model, trace, float(d_pred[0])))
        loss += l_i
    return loss / B, total


def predict_cnn_sequence(model: CnnModel, seq: LoadedSequence) -> np.ndarray:
    """Per-frame CNN valence; frames without a face are filled from their neighbours."""
    raw = np.array([np.nan if f is None else cnn_predict(model, f) for f in seq.frames])
    missing = np.array([f is None for f in seq.frames])
    filled, _ = fill_gaps(raw, missing)
    return filled


def predict_rnn_timeline(model: RnnModel, tl: FeatureTimeline) -> np.ndarray:
    """Per-frame RNN valence; frames without a face are re-filled from their neighbours' predictions."""
    raw = predict_timeline(None, model, tl)
    filled, _ = fill_gaps(np.where(tl.mask, np.nan, raw), tl.mask)
    return filled


def _dev_scores(items):
    if not items:
        return np.nan, np.nan, np.nan
    report = evaluate_timelines(items, lenient=True)
    return report.rmse, report.cc, report.ccc


def train_cnn(
    train: list,
    spec: CnnSpec,
    cfg: SgdConfig,
    dropout: bool = False,
    use_augment: bool = False,
    dev: list | None = None,
    augment_cfg: AugmentConfig | None = None,
):
    """Train the single-frame CNN on every frame with a detected face.

    `train`/`dev` are LoadedSequence lists. The dropout flag forces p=0.5;
    augmentation is applied to training samples only.
    Returns (model, history).
    """
    images, labels = [], []
    for seq in train:
        for frame, y, filled in zip(seq.frames, seq.labels, seq.mask):
            if frame is not None and not filled:
                images.append(frame)
                labels.append(y)
    if not images:
        raise TrainingError("train_cnn: dataset has no labeled frame")
    labels = np.asarray(labels, dtype=np.float64)
    spec = replace(spec, dropout_p=DROPOUT_P if dropout else 0.0)
    aug = (augment_cfg or AugmentConfig()) if use_augment else None

    rng = np.random.default_rng(cfg.seed)
    model = CnnModel.init(spec, rng)
    state = OptState.zeros(model.params)
    history = TrainHistory()
    n = len(images)
    logger.info("[TRAIN-CNN] %d frames, %d params, dropout=%s augment=%s", n, model.num_params, dropout, use_augment)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = cnn_batch(model, [images[i] for i in idx], labels[idx], rng, aug)
            _check_finite(loss, epoch, b, "train_cnn")
            sgd_step(model.params, grads, state, cfg)
            model.touch()
            epoch_loss += loss * len(idx)
        items = [(s.sequence_id, predict_cnn_sequence(model, s), s.labels, s.mask) for s in (dev or [])]
        rmse_, cc_, ccc_ = _dev_scores(items)
        rec = EpochRecord(epoch, epoch_loss / n, rmse_, cc_, ccc_, time.perf_counter() - t0)
        history.add(rec)
        logger.info("[TRAIN-CNN] epoch %d/%d loss=%.5f dev_ccc=%.3f (%.1fs)", epoch, cfg.epochs, rec.loss, rec.ccc, rec.seconds)
    return model, history


def train_rnn(
    train: list,
    spec: RnnSpec,
    cfg: SgdConfig,
    dev: list | None = None,
):
    """Train the Elman RNN on every complete W-frame window of every training timeline.

    Loss is the mean over the batch of the mean-over-steps MSE against the
    per-frame labels. Returns (model, history).
    """
    W = spec.window_W
    windows = []
    for tl in train:
        if tl.dim != spec.input_dim:
            raise ShapeError(f"sequence '{tl.sequence_id}': feature dim {tl.dim} != RnnSpec.input_dim {spec.input_dim}")
        windows.append(make_windows(tl, W))
    if not windows:
        raise TrainingError("train_rnn: no training timelines")
    index = np.concatenate([np.stack([np.full(len(w), i), np.arange(len(w))], axis=1) for i, w in enumerate(windows)])
    n = len(index)

    rng = np.random.default_rng(cfg.seed)
    model = RnnModel.init(spec, rng)
    state = OptState.zeros(model.params)
    history = TrainHistory()
    logger.info("[TRAIN-RNN] %d windows of W=%d, layers=%s, %s, %d params", n, W, list(spec.hidden_sizes), spec.activation, model.num_params)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            picked = index[order[start:start + cfg.batch_size]]
            X = np.stack([windows[i].features[j] for i, j in picked])
            Y = np.stack([windows[i].labels[j] for i, j in picked])
            outs, trace = rnn_forward_batch(model, X, "train")
            loss, ctx = T.mse_loss(outs, Y)
            _check_finite(loss, epoch, b, "train_rnn")
            grads = rnn_backward(model, trace, T.mse_loss_backward(ctx))
            sgd_step(model.params, grads, state, cfg)
            model.touch()
            epoch_loss += loss * len(picked)
        items = [(tl.sequence_id, predict_rnn_timeline(model, tl), tl.labels, tl.mask) for tl in (dev or [])]
        rmse_, cc_, ccc_ = _dev_scores(items)
        rec = EpochRecord(epoch, epoch_loss / n, rmse_, cc_, ccc_, time.perf_counter() - t0)
        history.add(rec)
        logger.info("[TRAIN-RNN] epoch %d/%d loss=%.5f dev_ccc=%.3f (%.1fs)", epoch, cfg.epochs, rec.loss, rec.ccc, rec.seconds)
    return model, history

