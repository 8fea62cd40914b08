"""Finite-difference check of every primitive and of tiny CNN/RNN models; prints the max relative error per item."""
import sys
from pathlib import Path
repo_root = Path(__file__).resolve().parents[1]
if str(repo_root) not in sys.path:
    sys.path.insert(0, str(repo_root))

import numpy as np

from src import tensor as T
from src.gradcheck import check_params, numeric_grad, rel_error
from src.models import CnnModel, CnnSpec, RnnModel, RnnSpec, cnn_backward, cnn_forward, rnn_backward, rnn_forward

TOL = 1e-5


def _primitive_errors(rng):
    out = {}

    x = rng.normal(size=(2, 6, 6))
    K = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    up = rng.normal(size=(3, 4, 4))
    y, ctx = T.conv2d(x, K, b)
    dx, dK, db = T.conv2d_backward(ctx, up)
    f = lambda: float(np.sum(T.conv2d(x, K, b)[0] * up))
    out['conv2d'] = max(rel_error(dx, numeric_grad(f, x)), rel_error(dK, numeric_grad(f, K)), rel_error(db, numeric_grad(f, b)))

    # distinct values keep the pooling argmax away from ties
    x = rng.permutation(2 * 4 * 6).reshape(2, 4, 6).astype(np.float64) * 0.1
    up = rng.normal(size=(2, 2, 3))
    _, ctx = T.maxpool2(x)
    f = lambda: float(np.sum(T.maxpool2(x)[0] * up))
    out['maxpool2'] = rel_error(T.maxpool2_backward(ctx, up), numeric_grad(f, x))

    x = rng.permutation(2 * 5 * 5).reshape(2, 5, 5).astype(np.float64) * 0.1
    up = rng.normal(size=(2, 2, 2))
    _, ctx = T.quadrant_pool(x)
    f = lambda: float(np.sum(T.quadrant_pool(x)[0] * up))
    out['quadrant_pool'] = rel_error(T.quadrant_pool_backward(ctx, up), numeric_grad(f, x))

    for kind in T.ACTIVATIONS:
        x = rng.uniform(0.1, 1.0, size=10) * rng.choice([-1.0, 1.0], size=10)
        up = rng.normal(size=10)
        _, ctx = T.activation(x, kind)
        f = lambda: float(np.sum(T.activation(x, kind)[0] * up))
        out[f'activation[{kind}]'] = rel_error(T.activation_backward(ctx, up), numeric_grad(f, x))

    x = rng.normal(size=(3, 4))
    W = rng.normal(size=(5, 4))
    b = rng.normal(size=5)
    up = rng.normal(size=(3, 5))
    _, ctx = T.linear(x, W, b)
    dx, dW, db = T.linear_backward(ctx, up)
    f = lambda: float(np.sum(T.linear(x, W, b)[0] * up))
    out['linear'] = max(rel_error(dx, numeric_grad(f, x)), rel_error(dW, numeric_grad(f, W)), rel_error(db, numeric_grad(f, b)))

    x = rng.normal(size=12)
    up = rng.normal(size=12)
    _, ctx = T.dropout(x, 0.5, 'train', np.random.default_rng(7))
    f = lambda: float(np.sum(T.dropout(x, 0.5, 'train', np.random.default_rng(7))[0] * up))
    out['dropout'] = rel_error(T.dropout_backward(ctx, up), numeric_grad(f, x))

    pred = rng.normal(size=7)
    target = rng.normal(size=7)
    _, ctx = T.mse_loss(pred, target)
    f = lambda: T.mse_loss(pred, target)[0]
    out['mse_loss'] = rel_error(T.mse_loss_backward(ctx), numeric_grad(f, pred))
    return out


def _model_errors(rng):
    out = {}
    spec = CnnSpec(input_height=22, input_width=22, conv_filters=(2, 2, 2), kernel_size=3, fc_units=4)
    cnn = CnnModel.init(spec, rng)
    image = rng.normal(size=spec.input_shape)
    _, _, trace = cnn_forward(cnn, image, 'train')
    grads = cnn_backward(cnn, trace, 1.0)
    errs = check_params(lambda: cnn_forward(cnn, image, 'eval')[0], cnn.params, grads)
    out[f'cnn ({cnn.num_params} params)'] = max(errs.values())

    for kind in T.ACTIVATIONS:
        spec = RnnSpec(input_dim=3, hidden_sizes=(4, 3), window_W=5, activation=kind)
        rnn = RnnModel.init(spec, rng)
        window = rng.normal(size=(5, 3))
        target = rng.normal(size=5)
        outs, trace = rnn_forward(rnn, window, 'train')
        _, ctx = T.mse_loss(outs, target)
        grads = rnn_backward(rnn, trace, T.mse_loss_backward(ctx))
        errs = check_params(lambda: T.mse_loss(rnn_forward(rnn, window, 'eval')[0], target)[0], rnn.params, grads)
        out[f'rnn[{kind}] ({rnn.num_params} params)'] = max(errs.values())
    return out


def main(seed: int = 0) -> int:
    rng = np.random.default_rng(seed)
    results = {**_primitive_errors(rng), **_model_errors(rng)}
    worst = 0.0
    for name, err in results.items():
        worst = max(worst, err)
        print(f"{name:<28} {err:.3e}  {'ok' if err < TOL else 'FAIL'}")
    print(f'max relative error {worst:.3e} (tolerance {TOL:g})')
    return 0 if worst < TOL else 1


if __name__ == '__main__':
    sys.exit(main(int(sys.argv[1]) if len(sys.argv) > 1 else 0))
