"""Synthetic stand-in corpus with a known latent valence signal.

Each frame shows a constant reference blob at the nose anchor and a signal
blob whose brightness and horizontal position follow the shown valence
v(t) + e(t), where e(t) is independent per-frame jitter and the gold label
stays v(t). A single frame therefore determines v(t) only up to the jitter
and pixel noise; averaging over neighbouring frames removes most of both.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .dataio import FRAME_STEP_S, MANIFEST_COLUMNS, Template, save_template, write_pgm
from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 20
    n_dev: int = 4
    length: int = 300
    image_size: int = 32
    out_size: int = 36
    noise: float = 0.08
    frame_jitter: float = 0.35
    tau_s: float = 0.5
    walk_step: float = 0.08
    walk_reversion: float = 0.995
    gap_fraction: float = 0.05
    background: float = 0.3
    blob_sigma: float = 2.5
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 1 or self.n_dev < 0:
            raise ConfigError("n_train must be >= 1 and n_dev >= 0")
        if self.length < 2:
            raise ConfigError(f"length must be >= 2, got {self.length}")
        if self.image_size < 16:
            raise ConfigError(f"image_size must be >= 16, got {self.image_size}")
        if self.noise < 0 or self.frame_jitter < 0 or self.tau_s <= 0:
            raise ConfigError("noise and frame_jitter must be >= 0 and tau_s > 0")
        if not 0 <= self.gap_fraction < 1:
            raise ConfigError(f"gap_fraction must lie in [0, 1), got {self.gap_fraction}")

    @property
    def n_sequences(self) -> int:
        return self.n_train + self.n_dev


def frame_landmarks(size: int) -> np.ndarray:
    """eye_l, eye_r, nose in frame pixels (x, y)."""
    return np.array([[0.3125 * size, 0.375 * size], [0.6875 * size, 0.375 * size], [0.5 * size, 0.625 * size]])


def synth_template(cfg: SynthConfig) -> Template:
    pts = frame_landmarks(cfg.image_size) * (cfg.out_size / cfg.image_size)
    return Template(tuple(pts[0]), tuple(pts[1]), tuple(pts[2]), cfg.out_size)


def latent_valence(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Mean-reverting random walk, exponentially smoothed with time constant tau_s, clipped to [-1, 1]."""
    alpha = 1.0 - math.exp(-FRAME_STEP_S / cfg.tau_s)
    steps = rng.normal(0.0, cfg.walk_step, size=cfg.length)
    walk = np.empty(cfg.length)
    smooth = np.empty(cfg.length)
    r = rng.uniform(-0.5, 0.5)
    s = r
    for t in range(cfg.length):
        r = cfg.walk_reversion * r + steps[t]
        s = s + alpha * (r - s)
        walk[t] = r
        smooth[t] = s
    return np.clip(smooth, -1.0, 1.0)


def _blob(size: int, cx: float, cy: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma * sigma))


def render_frame(v: float, cfg: SynthConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """uint8 [size, size] frame for valence v; pixel noise is drawn from `rng` when noise > 0."""
    size = cfg.image_size
    lm = frame_landmarks(size)
    img = np.full((size, size), cfg.background)
    img += 0.3 * _blob(size, lm[2, 0], lm[2, 1], cfg.blob_sigma)
    amp = 0.15 + 0.25 * (v + 1.0) / 2.0
    cx = size / 2.0 + 0.1875 * size * v
    img += amp * _blob(size, cx, lm[0, 1], cfg.blob_sigma)
    if cfg.noise > 0 and rng is not None:
        img += rng.normal(0.0, cfg.noise, size=img.shape)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def sequence_signal(cfg: SynthConfig, index: int):
    """(rng, gold v, gap flags, shown valence) of sequence `index`; rng is left positioned for pixel noise."""
    rng = np.random.default_rng([cfg.seed, index])
    v = latent_valence(cfg, rng)
    gaps = np.zeros(cfg.length, dtype=bool)
    n_gap = int(round(cfg.gap_fraction * cfg.length))
    if n_gap:
        gaps[rng.choice(cfg.length, size=n_gap, replace=False)] = True
    shown = v + rng.normal(0.0, cfg.frame_jitter, size=cfg.length)
    return rng, v, gaps, shown


def generate(cfg: SynthConfig, out_dir) -> Path:
    """Write manifest.csv, template.json, split.json and frames/<seq>/<frame>.pgm under out_dir."""
    out = Path(out_dir)
    try:
        (out / "frames").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot write synthetic corpus to {out}: {exc}") from exc

    lm = frame_landmarks(cfg.image_size)
    n_gap = int(round(cfg.gap_fraction * cfg.length))
    rows = []
    ids = [f"seq{i:03d}" for i in range(cfg.n_sequences)]
    for i, seq in enumerate(ids):
        rng, v, gaps, shown = sequence_signal(cfg, i)
        seq_dir = out / "frames" / seq
        seq_dir.mkdir(parents=True, exist_ok=True)
        for t in range(cfg.length):
            rel = Path("frames") / seq / f"{t:05d}.pgm"
            write_pgm(out / rel, render_frame(float(shown[t]), cfg, rng))
            found = not gaps[t]
            cells = [repr(float(c)) for c in lm.reshape(-1)] if found else [""] * 6
            rows.append([seq, t, repr(round(t * FRAME_STEP_S, 2)), rel.as_posix(), int(found), *cells, repr(float(v[t]))])
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).to_csv(out / "manifest.csv", index=False)
    save_template(synth_template(cfg), out / "template.json")
    split = {"train": ids[:cfg.n_train], "dev": ids[cfg.n_train:], "config": asdict(cfg)}
    (out / "split.json").write_text(json.dumps(split, indent=2, sort_keys=True))
    logger.info("[SYNTH] wrote %d sequences x %d frames to %s (%d gaps each)", cfg.n_sequences, cfg.length, out, n_gap)
    return out
