"""Hyperparameter sweeps over the CNN+RNN pipeline.

A sweep varies one or more axes of a base RunConfig. Every run is identified
by the hash of its full config; results are appended to a CSV in grid order,
one row per run, and rows already present are never recomputed.
"""
import hashlib
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import pandas as pd

from .config import apply_section
from .errors import ConfigError
from .metrics import evaluate_timelines
from .models import CnnSpec, RnnSpec, extract_features
from .optim import RNN_SGD_DEFAULTS, AugmentConfig, SgdConfig
from .train import predict_cnn_sequence, predict_rnn_timeline, train_cnn, train_rnn

logger = logging.getLogger(__name__)

CNN_FLAGS = ("", "D", "A", "AD")
FAILED = "FAILED"
OK = "OK"

RESULT_COLUMNS = [
    "config_hash", "grid", "label", "status",
    "hidden_sizes", "window_W", "activation", "cnn_flags", "seed",
    "rmse", "cc", "ccc", "cnn_rmse", "cnn_cc", "cnn_ccc",
    "seconds", "error", "config",
]


@dataclass(frozen=True)
class RunConfig:
    """Everything one CNN -> features -> RNN -> dev-eval run depends on."""
    cnn: CnnSpec = CnnSpec()
    rnn: RnnSpec = RnnSpec()
    sgd: SgdConfig = SgdConfig()
    rnn_sgd: SgdConfig = RNN_SGD_DEFAULTS
    augment: AugmentConfig = AugmentConfig()
    cnn_flags: str = ""

    def __post_init__(self):
        if self.cnn_flags not in CNN_FLAGS:
            raise ConfigError(f"cnn_flags must be one of {CNN_FLAGS}, got '{self.cnn_flags}'")
        if self.rnn.input_dim != self.cnn.fc_units:
            object.__setattr__(self, "rnn", replace(self.rnn, input_dim=self.cnn.fc_units))

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def cnn_key(self) -> str:
        """Hash of the parts that determine the trained CNN."""
        d = self.to_dict()
        return _digest({k: d[k] for k in ("cnn", "sgd", "augment", "cnn_flags")})


def _digest(doc) -> str:
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def config_hash(run: RunConfig) -> str:
    return _digest(run.to_dict())


def with_axis(run: RunConfig, axis: str, value) -> RunConfig:
    """Set one axis: `cnn_flags` or a dotted `<section>.<field>` name (e.g. `rnn.window_W`)."""
    if axis == "cnn_flags":
        return replace(run, cnn_flags=value)
    section, _, name = axis.partition(".")
    if section not in ("cnn", "rnn", "sgd", "rnn_sgd", "augment") or not name:
        raise ConfigError(f"unknown sweep axis '{axis}'")
    return replace(run, **{section: apply_section(getattr(run, section), {name: value}, axis)})


@dataclass(frozen=True)
class SweepGrid:
    name: str
    axes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.axes or any(len(v) == 0 for v in self.axes.values()):
            raise ConfigError(f"sweep grid '{self.name}' has an empty axis")

    def __len__(self):
        n = 1
        for values in self.axes.values():
            n *= len(values)
        return n

    def configs(self, base: RunConfig) -> list:
        """Cartesian product of the axes in declaration order; the last axis varies fastest."""
        names = list(self.axes)
        out = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            run = base
            for axis, value in zip(names, combo):
                run = with_axis(run, axis, value)
            out.append(run)
        return out


DEFAULT_GRIDS = {
    "h": SweepGrid("h", {"rnn.hidden_sizes": [(50,), (100,), (150,), (200,)]}),
    "W": SweepGrid("W", {"rnn.window_W": [25, 50, 75, 100, 150]}),
    "layers": SweepGrid("layers", {"rnn.hidden_sizes": [(100,), (100, 100), (100, 100, 50)]}),
    "nonlinearity": SweepGrid("nonlinearity", {"rnn.activation": ["tanh", "relu"]}),
    "cnn_flags": SweepGrid("cnn_flags", {"cnn_flags": list(CNN_FLAGS)}),
}


def grid_from_dict(name: str, doc: dict) -> SweepGrid:
    axes = {axis: [tuple(v) if isinstance(v, list) else v for v in values] for axis, values in doc.items()}
    return SweepGrid(name, axes)


def run_label(grid: str, run: RunConfig) -> str:
    rnn = run.rnn
    if grid == "cnn_flags":
        return "CNN" + (f"+{run.cnn_flags}" if run.cnn_flags else "")
    if grid == "h" and len(rnn.hidden_sizes) == 1:
        return f"CNN+RNN - h={rnn.hidden_sizes[0]}"
    if grid == "W":
        return f"CNN+RNN - W={rnn.window_W}"
    if grid == "layers":
        n = len(rnn.hidden_sizes)
        return f"CNN+RNN - W={rnn.window_W} - {n} layer{'s' if n > 1 else ''}"
    if grid == "nonlinearity":
        return f"CNN+RNN - {'ReLU' if rnn.activation == 'relu' else rnn.activation}"
    return f"CNN+RNN - {config_hash(run)}"


# Published development-set scores of each variant, keyed like run_label().
_REFERENCE = [
    ("cnn_flags", "CNN", 0.121, 0.341, 0.242),
    ("cnn_flags", "CNN+D", 0.113, 0.426, 0.326),
    ("cnn_flags", "CNN+A", 0.125, 0.349, 0.270),
    ("cnn_flags", "CNN+AD", 0.118, 0.405, 0.309),
    ("nonlinearity", "CNN+RNN - tanh", 0.111, 0.518, 0.492),
    ("nonlinearity", "CNN+RNN - ReLU", 0.108, 0.544, 0.506),
    ("h", "CNN+RNN - h=50", 0.110, 0.519, 0.485),
    ("h", "CNN+RNN - h=100", 0.108, 0.544, 0.506),
    ("h", "CNN+RNN - h=150", 0.112, 0.529, 0.494),
    ("h", "CNN+RNN - h=200", 0.108, 0.534, 0.495),
    ("W", "CNN+RNN - W=25", 0.111, 0.501, 0.474),
    ("W", "CNN+RNN - W=50", 0.112, 0.526, 0.492),
    ("W", "CNN+RNN - W=75", 0.111, 0.528, 0.498),
    ("W", "CNN+RNN - W=100", 0.108, 0.544, 0.506),
    ("W", "CNN+RNN - W=150", 0.110, 0.521, 0.485),
    ("layers", "CNN+RNN - W=100 - 1 layer", 0.108, 0.544, 0.506),
    ("layers", "CNN+RNN - W=100 - 2 layers", 0.112, 0.519, 0.479),
    ("layers", "CNN+RNN - W=100 - 3 layers", 0.107, 0.554, 0.507),
]


def published_reference_rows() -> pd.DataFrame:
    return pd.DataFrame(_REFERENCE, columns=["grid", "label", "rmse", "cc", "ccc"])


# --- running ------------------------------------------------------------------------


def run_config(run: RunConfig, train: list, dev: list, cache: dict | None = None) -> dict:
    """Train CNN (or reuse a cached one), extract features, train the RNN, score both on dev.

    `train`/`dev` are LoadedSequence lists. Returns the metric columns of a result row.
    """
    if not dev:
        raise ConfigError("sweep runs need at least one dev sequence")
    key = run.cnn_key()
    stage = cache.get(key) if cache is not None else None
    if stage is None:
        cnn, _ = train_cnn(
            train, run.cnn, run.sgd,
            dropout="D" in run.cnn_flags, use_augment="A" in run.cnn_flags, augment_cfg=run.augment,
        )
        train_tl = [extract_features(cnn, s.frames, s.labels, s.sequence_id) for s in train]
        dev_tl = [extract_features(cnn, s.frames, s.labels, s.sequence_id) for s in dev]
        cnn_report = evaluate_timelines(
            [(s.sequence_id, predict_cnn_sequence(cnn, s), s.labels, s.mask) for s in dev], lenient=True
        )
        stage = (train_tl, dev_tl, cnn_report)
        if cache is not None:
            cache[key] = stage
    train_tl, dev_tl, cnn_report = stage
    rnn, _ = train_rnn(train_tl, run.rnn, run.rnn_sgd)
    report = evaluate_timelines(
        [(tl.sequence_id, predict_rnn_timeline(rnn, tl), tl.labels, tl.mask) for tl in dev_tl], lenient=True
    )
    return dict(
        rmse=report.rmse, cc=report.cc, ccc=report.ccc,
        cnn_rmse=cnn_report.rmse, cnn_cc=cnn_report.cc, cnn_ccc=cnn_report.ccc,
    )


def _row(grid: str, run: RunConfig, metrics: dict | None, seconds: float, error: str = "") -> dict:
    row = dict(
        config_hash=config_hash(run),
        grid=grid,
        label=run_label(grid, run),
        status=OK if metrics is not None else FAILED,
        hidden_sizes="-".join(str(h) for h in run.rnn.hidden_sizes),
        window_W=run.rnn.window_W,
        activation=run.rnn.activation,
        cnn_flags=run.cnn_flags,
        seed=run.sgd.seed,
        seconds=round(seconds, 3),
        error=error,
        config=json.dumps(run.to_dict(), sort_keys=True, separators=(",", ":")),
    )
    for col in ("rmse", "cc", "ccc", "cnn_rmse", "cnn_cc", "cnn_ccc"):
        row[col] = metrics[col] if metrics is not None else float("nan")
    return row


def _execute(grid: str, run: RunConfig, train: list, dev: list, cache: dict | None) -> dict:
    t0 = time.perf_counter()
    try:
        metrics = run_config(run, train, dev, cache)
    except Exception as exc:
        logger.warning("[SWEEP] %s %s failed: %s", grid, run_label(grid, run), exc)
        return _row(grid, run, None, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
    return _row(grid, run, metrics, time.perf_counter() - t0)


_WORKER = {}


def _init_worker(train, dev):
    _WORKER["train"], _WORKER["dev"], _WORKER["cache"] = train, dev, {}


def _execute_in_worker(grid: str, run: RunConfig) -> dict:
    return _execute(grid, run, _WORKER["train"], _WORKER["dev"], _WORKER["cache"])


def completed_hashes(results_csv) -> set:
    p = Path(results_csv)
    if not p.exists():
        return set()
    return set(pd.read_csv(p, usecols=["config_hash"], dtype=str)["config_hash"])


def _append(results_csv: Path, row: dict):
    exists = results_csv.exists()
    pd.DataFrame([row], columns=RESULT_COLUMNS).to_csv(
        results_csv, mode="a", header=not exists, index=False, float_format="%.17g"
    )


def run_sweep(grid: SweepGrid, base: RunConfig, train: list, dev: list, results_csv, workers: int = 1) -> pd.DataFrame:
    """Run every config of `grid` not yet in `results_csv`, appending one row per run in grid order.

    A failing run is recorded with status FAILED and the sweep continues.
    With workers > 1 runs go to a process pool; only this process writes the CSV.
    """
    results_csv = Path(results_csv)
    results_csv.parent.mkdir(parents=True, exist_ok=True)
    done = completed_hashes(results_csv)
    pending = [run for run in grid.configs(base) if config_hash(run) not in done]
    logger.info("[SWEEP] grid '%s': %d configs, %d cached, %d to run", grid.name, len(grid), len(grid) - len(pending), len(pending))
    if not pending:
        return pd.read_csv(results_csv)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(train, dev)) as pool:
            rows = pool.map(_execute_in_worker, [grid.name] * len(pending), pending)
            for row in rows:
                _append(results_csv, row)
                logger.info("[SWEEP] %s: %s ccc=%s", row["label"], row["status"], row["ccc"])
    else:
        cache = {}
        for run in pending:
            row = _execute(grid.name, run, train, dev, cache)
            _append(results_csv, row)
            logger.info("[SWEEP] %s: %s ccc=%s", row["label"], row["status"], row["ccc"])
    return pd.read_csv(results_csv)


def export_sweep_workbook(results_csv, xlsx_path, include_reference: bool = True) -> Path:
    """One sheet per grid from the results CSV, plus an optional sheet of published scores."""
    df = pd.read_csv(results_csv)
    out = Path(xlsx_path)
    with pd.ExcelWriter(out, engine="openpyxl") as writer:
        for grid, group in df.groupby("grid", sort=False):
            group.drop(columns=["config"]).to_excel(writer, index=False, sheet_name=str(grid)[:31])
        if include_reference:
            published_reference_rows().to_excel(writer, index=False, sheet_name="reference")
    logger.info("[SWEEP] workbook written to %s", out)
    return out
