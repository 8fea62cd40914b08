import numpy as np
import pytest
from numpy.testing import assert_array_equal

from src import tensor as T
from src import train as train_mod
from src.dataio import FeatureTimeline, LoadedSequence
from src.errors import ShapeError, TrainingError
from src.models import CnnModel, RnnModel, RnnSpec, rnn_backward, rnn_forward_batch
from src.optim import OptState, SgdConfig, sgd_step
from src.train import TrainHistory, cnn_batch, train_cnn, train_rnn


def _sequences(rng, spec, n_seq=2, length=6, label=None):
    out = []
    for s in range(n_seq):
        frames = [rng.normal(size=spec.input_shape) for _ in range(length)]
        labels = np.full(length, label) if label is not None else rng.uniform(-1, 1, size=length)
        out.append(LoadedSequence(f"s{s}", frames, labels, np.zeros(length, bool)))
    return out


def test_zero_label_loss_does_not_increase(rng, tiny_cnn_spec):
    train = _sequences(rng, tiny_cnn_spec, label=0.0)
    cfg = SgdConfig(learning_rate=1e-3, momentum=0.0, weight_decay=0.0, batch_size=4, epochs=5, seed=1)
    _, history = train_cnn(train, tiny_cnn_spec, cfg)
    losses = history.losses
    assert len(history) == 5
    assert all(b <= a for a, b in zip(losses, losses[1:])), losses


def test_train_cnn_is_deterministic(rng, tiny_cnn_spec):
    train = _sequences(rng, tiny_cnn_spec)
    cfg = SgdConfig(batch_size=3, epochs=2, seed=7)
    m1, _ = train_cnn(train, tiny_cnn_spec, cfg)
    m2, _ = train_cnn(train, tiny_cnn_spec, cfg)
    for name in m1.params:
        assert_array_equal(m1.params[name], m2.params[name])


def test_train_cnn_with_dropout_and_augment_records_dev_scores(rng, tiny_cnn_spec):
    train = _sequences(rng, tiny_cnn_spec)
    dev = _sequences(rng, tiny_cnn_spec, n_seq=1)
    model, history = train_cnn(train, tiny_cnn_spec, SgdConfig(batch_size=4, epochs=1), dropout=True, use_augment=True, dev=dev)
    assert model.spec.dropout_p == 0.5
    frame = history.to_frame()
    assert list(frame.columns) == ["epoch", "loss", "rmse", "cc", "ccc", "seconds"]
    assert np.isfinite(frame.loc[0, "rmse"])


def test_train_cnn_skips_frames_without_face(rng, tiny_cnn_spec):
    seq = _sequences(rng, tiny_cnn_spec, n_seq=1, length=4)[0]
    seq.frames[2] = None
    seq.mask[2] = True
    _, history = train_cnn([seq], tiny_cnn_spec, SgdConfig(batch_size=2, epochs=1))
    assert len(history) == 1


def test_train_cnn_empty_dataset(tiny_cnn_spec):
    with pytest.raises(TrainingError):
        train_cnn([], tiny_cnn_spec, SgdConfig(epochs=1))


def test_non_finite_loss_reports_epoch_and_batch(rng, tiny_cnn_spec):
    train = _sequences(rng, tiny_cnn_spec, n_seq=1, length=2)
    train[0].labels[:] = np.inf
    with pytest.raises(TrainingError, match=r"epoch 1, batch 0"):
        train_cnn(train, tiny_cnn_spec, SgdConfig(batch_size=2, epochs=1))


def _timelines(rng, lengths, dim=3):
    return [
        FeatureTimeline(f"t{i}", rng.normal(size=(n, dim)), rng.uniform(-1, 1, size=n), np.zeros(n, bool))
        for i, n in enumerate(lengths)
    ]


def test_train_rnn_window_counts(rng, caplog):
    spec = RnnSpec(input_dim=3, hidden_sizes=(4,), window_W=5)
    cfg = SgdConfig(batch_size=8, epochs=1, weight_decay=0.0)
    with caplog.at_level("INFO", logger="src.train"):
        train_rnn(_timelines(rng, [5]), spec, cfg)
    assert "1 windows of W=5" in caplog.text
    caplog.clear()
    with caplog.at_level("INFO", logger="src.train"):
        train_rnn(_timelines(rng, [105, 105]), RnnSpec(input_dim=3, hidden_sizes=(2,), window_W=100), cfg)
    assert "12 windows of W=100" in caplog.text


def test_train_rnn_learns_and_is_deterministic(rng):
    tls = _timelines(rng, [30, 30])
    for tl in tls:
        tl.labels = 0.5 * np.tanh(tl.features[:, 0])
    spec = RnnSpec(input_dim=3, hidden_sizes=(4,), window_W=5, activation="tanh")
    cfg = SgdConfig(learning_rate=0.01, batch_size=8, epochs=5, weight_decay=0.0, seed=2)
    m1, h1 = train_rnn(tls, spec, cfg, dev=tls[:1])
    m2, _ = train_rnn(tls, spec, cfg)
    assert len(h1) == 5
    assert h1.losses[-1] < h1.losses[0], h1.losses
    for name in m1.params:
        assert_array_equal(m1.params[name], m2.params[name])


def test_train_rnn_short_timeline_names_sequence(rng):
    spec = RnnSpec(input_dim=3, hidden_sizes=(4,), window_W=10)
    with pytest.raises(ShapeError, match="t0"):
        train_rnn(_timelines(rng, [6]), spec, SgdConfig(epochs=1))


def test_history_csv(tmp_path):
    from src.train import EpochRecord

    h = TrainHistory()
    h.add(EpochRecord(1, 0.5, 0.1, 0.2, 0.3, 1.0))
    h.to_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "epoch,loss,rmse,cc,ccc,seconds"


def test_tiny_step_does_not_increase_batch_loss(rng, tiny_cnn_spec):
    cfg = SgdConfig(learning_rate=1e-6, momentum=0.0, weight_decay=0.0)
    cnn = CnnModel.init(tiny_cnn_spec, rng)
    images = [rng.normal(size=tiny_cnn_spec.input_shape) for _ in range(4)]
    labels = rng.uniform(-1, 1, size=4)
    before, grads = cnn_batch(cnn, images, labels, rng)
    sgd_step(cnn.params, grads, OptState.zeros(cnn.params), cfg)
    assert cnn_batch(cnn, images, labels, rng)[0] <= before

    rnn = RnnModel.init(RnnSpec(input_dim=3, hidden_sizes=(4, 3), window_W=5, activation="tanh"), rng)
    X, Y = rng.normal(size=(6, 5, 3)), rng.uniform(-1, 1, size=(6, 5))
    outs, trace = rnn_forward_batch(rnn, X, "train")
    before, ctx = T.mse_loss(outs, Y)
    sgd_step(rnn.params, rnn_backward(rnn, trace, T.mse_loss_backward(ctx)), OptState.zeros(rnn.params), cfg)
    assert T.mse_loss(rnn_forward_batch(rnn, X, "eval")[0], Y)[0] <= before


def test_each_epoch_visits_every_window_once(rng, monkeypatch):
    tls = _timelines(rng, [9, 12])
    W = 4
    seen = []
    real = train_mod.rnn_forward_batch

    def recording(model, X, mode="train"):
        seen.extend(X[:, 0, 0])
        return real(model, X, mode)

    monkeypatch.setattr(train_mod, "rnn_forward_batch", recording)
    cfg = SgdConfig(batch_size=4, epochs=2, weight_decay=0.0, seed=3)
    train_rnn(tls, RnnSpec(input_dim=3, hidden_sizes=(2,), window_W=W), cfg)
    starts = sorted(np.concatenate([tl.features[:len(tl) - W + 1, 0] for tl in tls]))
    n = len(starts)
    assert len(seen) == 2 * n
    assert sorted(seen[:n]) == starts
    assert sorted(seen[n:]) == starts
