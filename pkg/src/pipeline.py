"""One run_* function per CLI subcommand; each reads its inputs, does the work and writes its outputs under settings.out."""
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import pandas as pd

from .config import RunSettings
from .dataio import (
    SequenceDataset, Template, load_manifest, load_sequences, load_template, split_dataset,
)
from .errors import ConfigError
from .metrics import EvalReport, evaluate_timelines, first_difference_variance
from .models import CnnModel, CnnSpec, RnnModel, RnnSpec, extract_features
from .optim import RNN_SGD_DEFAULTS, AugmentConfig, SgdConfig
from .serialize import load_model, load_timeline, save_model, save_timeline
from . import sweep as sw
from .synth import SynthConfig, generate
from .train import predict_cnn_sequence, predict_rnn_timeline, train_cnn, train_rnn

logger = logging.getLogger(__name__)

TIMELINE_COLUMNS = ["sequence_id", "frame_index", "gold", "pred_cnn", "pred_cnn_rnn", "interpolated"]
SPLIT_KEYS = ("dev_sequences", "dev_fraction")


def _out(settings: RunSettings, *parts) -> Path:
    p = Path(settings.out, *parts)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def resolve_template(manifest, template=None) -> Template:
    """Explicit path, else template.json next to the manifest, else the canonical 96x96 template."""
    if template is not None:
        return load_template(template)
    beside = Path(manifest).parent / "template.json"
    if beside.exists():
        return load_template(beside)
    return Template.canonical(96)


def resolve_split(settings: RunSettings, dataset: SequenceDataset, manifest) -> tuple:
    """Config `split` section wins; otherwise split.json next to the manifest; otherwise a 20% dev tail."""
    section = settings.sections.get("split", {})
    unknown = set(section) - set(SPLIT_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s) in config section 'split': {', '.join(sorted(unknown))}")
    if section:
        return split_dataset(dataset, section.get("dev_sequences"), float(section.get("dev_fraction", 0.2)))
    beside = Path(manifest).parent / "split.json"
    if beside.exists():
        return split_dataset(dataset, json.loads(beside.read_text()).get("dev") or None)
    return split_dataset(dataset)


def cnn_spec_for(settings: RunSettings, template: Template) -> CnnSpec:
    """The configured CnnSpec; the input size follows the template unless the config sets it."""
    section = settings.sections.get("cnn", {})
    spec = settings.resolve(CnnSpec(), "cnn")
    if "input_height" not in section and "input_width" not in section:
        spec = replace(spec, input_height=template.out_size, input_width=template.out_size)
    if (spec.input_height, spec.input_width) != (template.out_size, template.out_size):
        raise ConfigError(
            f"CNN input {spec.input_height}x{spec.input_width} does not match template out_size {template.out_size}"
        )
    return spec


def _load(settings: RunSettings, manifest, template=None):
    dataset = load_manifest(manifest)
    tpl = resolve_template(manifest, template)
    train_ds, dev_ds = resolve_split(settings, dataset, manifest)
    logger.info("[DATA] %d train / %d dev sequences, template out_size=%d", len(train_ds.sequences), len(dev_ds.sequences), tpl.out_size)
    return tpl, train_ds, dev_ds


def run_synth(settings: RunSettings, **overrides) -> Path:
    cfg = settings.resolve(SynthConfig(), "synth")
    if overrides:
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    return generate(cfg, settings.out)


def run_train_cnn(settings: RunSettings, manifest, template=None, flags: str = "") -> tuple:
    if flags not in sw.CNN_FLAGS:
        raise ConfigError(f"flags must be one of {sw.CNN_FLAGS}, got '{flags}'")
    tpl, train_ds, dev_ds = _load(settings, manifest, template)
    spec = cnn_spec_for(settings, tpl)
    cfg = settings.resolve(SgdConfig(), "sgd")
    aug = settings.resolve(AugmentConfig(), "augment")
    train = load_sequences(train_ds, tpl, settings.workers)
    dev = load_sequences(dev_ds, tpl, settings.workers)
    model, history = train_cnn(train, spec, cfg, dropout="D" in flags, use_augment="A" in flags, dev=dev, augment_cfg=aug)
    model_path = _out(settings, "cnn.afen")
    save_model(model, model_path)
    history.to_csv(_out(settings, "cnn_history.csv"))
    logger.info("[TRAIN-CNN] model written to %s", model_path)
    return model_path, history


def run_extract(settings: RunSettings, model_path, manifest, template=None) -> Path:
    """Write features/<train|dev>/<sequence_id>.afft for every sequence of the manifest."""
    cnn = load_model(model_path)
    if not isinstance(cnn, CnnModel):
        raise ConfigError(f"{model_path} holds an RNN, expected a CNN")
    tpl, train_ds, dev_ds = _load(settings, manifest, template)
    root = Path(settings.out, "features")
    for part, ds in (("train", train_ds), ("dev", dev_ds)):
        for seq in load_sequences(ds, tpl, settings.workers):
            tl = extract_features(cnn, seq.frames, seq.labels, seq.sequence_id)
            save_timeline(tl, _out(settings, "features", part, f"{seq.sequence_id}.afft"))
            logger.info("[EXTRACT] %s/%s: %d frames x %d features", part, seq.sequence_id, len(tl), tl.dim)
    return root


def load_timelines(features_dir) -> tuple:
    """(train, dev) timelines from features/<train|dev>/*.afft; a flat directory counts as train."""
    root = Path(features_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"features directory not found: {root}")
    if (root / "train").is_dir():
        train = [load_timeline(p) for p in sorted((root / "train").glob("*.afft"))]
        dev = [load_timeline(p) for p in sorted((root / "dev").glob("*.afft"))] if (root / "dev").is_dir() else []
    else:
        train, dev = [load_timeline(p) for p in sorted(root.glob("*.afft"))], []
    if not train:
        raise FileNotFoundError(f"no training feature files under {root}")
    return train, dev


def _fit_window(timelines: list, W: int, what: str) -> list:
    usable = [tl for tl in timelines if len(tl) >= W]
    if not usable:
        shortest = min(timelines, key=len)
        raise ConfigError(
            f"window W={W} is longer than every {what} sequence; shortest is '{shortest.sequence_id}' with {len(shortest)} frames"
        )
    for tl in timelines:
        if len(tl) < W:
            logger.warning("[TRAIN-RNN] skipping '%s': %d frames < W=%d", tl.sequence_id, len(tl), W)
    return usable


def run_train_rnn(settings: RunSettings, features_dir, hidden_sizes=None, window_W=None, activation=None) -> tuple:
    train, dev = load_timelines(features_dir)
    spec = settings.resolve(RnnSpec(input_dim=train[0].dim), "rnn")
    flags = {"hidden_sizes": tuple(hidden_sizes) if hidden_sizes else None, "window_W": window_W, "activation": activation}
    spec = replace(spec, input_dim=train[0].dim, **{k: v for k, v in flags.items() if v is not None})
    cfg = settings.resolve(RNN_SGD_DEFAULTS, "rnn_sgd")
    train = _fit_window(train, spec.window_W, "training")
    model, history = train_rnn(train, spec, cfg, dev=dev)
    model_path = _out(settings, "rnn.afen")
    save_model(model, model_path)
    history.to_csv(_out(settings, "rnn_history.csv"))
    logger.info("[TRAIN-RNN] model written to %s", model_path)
    return model_path, history


@dataclass
class EvalResult:
    cnn: EvalReport
    cnn_rnn: EvalReport
    timeline: pd.DataFrame

    def smoothness(self) -> dict:
        """First-difference variance of each prediction track over the whole timeline."""
        return {
            "pred_cnn": first_difference_variance(self.timeline["pred_cnn"]),
            "pred_cnn_rnn": first_difference_variance(self.timeline["pred_cnn_rnn"]),
        }


def predict_sequence(cnn: CnnModel, rnn: RnnModel, seq) -> tuple:
    """(pred_cnn, pred_cnn_rnn) for one LoadedSequence; both are gap-filled at frames without a face."""
    pred_cnn = predict_cnn_sequence(cnn, seq)
    tl = extract_features(cnn, seq.frames, seq.labels, seq.sequence_id)
    pred_rnn = predict_rnn_timeline(rnn, tl)
    return pred_cnn, pred_rnn


def run_eval(settings: RunSettings, cnn_path, rnn_path, manifest, template=None, all_sequences: bool = False) -> EvalResult:
    """Score CNN and CNN+RNN on the dev split (or every sequence) and write reports plus the per-frame timeline."""
    cnn, rnn = load_model(cnn_path), load_model(rnn_path)
    if not isinstance(cnn, CnnModel) or not isinstance(rnn, RnnModel):
        raise ConfigError("eval needs a CNN model file and an RNN model file, in that order")
    dataset = load_manifest(manifest)
    tpl = resolve_template(manifest, template)
    if all_sequences:
        ds = dataset
    else:
        _, ds = resolve_split(settings, dataset, manifest)
        if not ds.sequences:
            logger.warning("[EVAL] no dev sequences; scoring every sequence")
            ds = dataset

    cnn_items, rnn_items, rows = [], [], []
    for seq in load_sequences(ds, tpl, settings.workers):
        pred_cnn, pred_rnn = predict_sequence(cnn, rnn, seq)
        cnn_items.append((seq.sequence_id, pred_cnn, seq.labels, seq.mask))
        rnn_items.append((seq.sequence_id, pred_rnn, seq.labels, seq.mask))
        for rec, g, pc, pr, m in zip(ds.frames(seq.sequence_id), seq.labels, pred_cnn, pred_rnn, seq.mask):
            rows.append((seq.sequence_id, rec.frame_index, g, pc, pr, int(m)))

    result = EvalResult(
        cnn=evaluate_timelines(cnn_items, lenient=True),
        cnn_rnn=evaluate_timelines(rnn_items, lenient=True),
        timeline=pd.DataFrame(rows, columns=TIMELINE_COLUMNS),
    )
    result.cnn_rnn.to_csv(_out(settings, "eval_report.csv"))
    result.cnn_rnn.to_json(_out(settings, "eval_report.json"))
    result.cnn.to_csv(_out(settings, "eval_cnn_report.csv"))
    result.timeline.to_csv(_out(settings, "eval_timeline.csv"), index=False, float_format="%.17g")
    smooth = result.smoothness()
    summary = {
        "cnn": {"rmse": result.cnn.rmse, "cc": result.cnn.cc, "ccc": result.cnn.ccc, "first_diff_var": smooth["pred_cnn"]},
        "cnn_rnn": {"rmse": result.cnn_rnn.rmse, "cc": result.cnn_rnn.cc, "ccc": result.cnn_rnn.ccc, "first_diff_var": smooth["pred_cnn_rnn"]},
    }
    _out(settings, "eval_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    logger.info(
        "[EVAL] CNN ccc=%.3f  CNN+RNN ccc=%.3f  (rmse %.4f / %.4f)",
        result.cnn.ccc, result.cnn_rnn.ccc, result.cnn.rmse, result.cnn_rnn.rmse,
    )
    return result


def base_run_config(settings: RunSettings, template: Template) -> sw.RunConfig:
    cnn = cnn_spec_for(settings, template)
    return sw.RunConfig(
        cnn=cnn,
        rnn=settings.resolve(RnnSpec(input_dim=cnn.fc_units), "rnn"),
        sgd=settings.resolve(SgdConfig(), "sgd"),
        rnn_sgd=settings.resolve(RNN_SGD_DEFAULTS, "rnn_sgd"),
        augment=settings.resolve(AugmentConfig(), "augment"),
    )


def run_sweep(settings: RunSettings, manifest, grid: str = "W", grid_file=None, template=None, xlsx: bool = False) -> pd.DataFrame:
    """Run a named default grid, or a JSON grid file `{"name": ..., "axes": {axis: [values]}}`."""
    if grid_file is not None:
        p = Path(grid_file)
        if not p.exists():
            raise FileNotFoundError(f"grid file not found: {p}")
        doc = json.loads(p.read_text())
        sweep_grid = sw.grid_from_dict(doc.get("name", p.stem), doc.get("axes", {}))
    elif grid in sw.DEFAULT_GRIDS:
        sweep_grid = sw.DEFAULT_GRIDS[grid]
    else:
        raise ConfigError(f"unknown grid '{grid}'; choose one of {', '.join(sw.DEFAULT_GRIDS)}")
    tpl, train_ds, dev_ds = _load(settings, manifest, template)
    base = base_run_config(settings, tpl)
    train = load_sequences(train_ds, tpl, settings.workers)
    dev = load_sequences(dev_ds, tpl, settings.workers)
    results_csv = _out(settings, "sweep_results.csv")
    df = sw.run_sweep(sweep_grid, base, train, dev, results_csv, workers=settings.workers)
    if xlsx:
        sw.export_sweep_workbook(results_csv, _out(settings, "sweep_results.xlsx"))
    return df


@dataclass(frozen=True)
class AcceptanceDefaults:
    """Reduced desk-scale setup for the synthetic CNN vs CNN+RNN comparison."""
    conv_filters: tuple = (8, 16, 32)
    fc_units: int = 64
    hidden: int = 32
    window_W: int = 25
    cnn_lr: float = 0.005
    cnn_batch: int = 32
    cnn_epochs: int = 15
    rnn_lr: float = 0.002
    rnn_batch: int = 64
    rnn_epochs: int = 20
    min_cnn_ccc: float = 0.5
    min_ccc_gain: float = 0.03

    def sections(self) -> dict:
        """JSON run-config sections; the synthetic corpus keeps SynthConfig defaults."""
        return {
            "cnn": {"conv_filters": list(self.conv_filters), "fc_units": self.fc_units},
            "rnn": {"hidden_sizes": [self.hidden], "window_W": self.window_W, "activation": "relu"},
            "sgd": {"learning_rate": self.cnn_lr, "batch_size": self.cnn_batch, "epochs": self.cnn_epochs},
            "rnn_sgd": {"learning_rate": self.rnn_lr, "batch_size": self.rnn_batch, "epochs": self.rnn_epochs},
        }
