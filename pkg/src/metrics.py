"""RMSE, Pearson CC and Lin's concordance correlation coefficient, all with population (1/n) moments."""
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import MetricError

logger = logging.getLogger(__name__)

POOLED = "__pooled__"

# Best published dev-set score (3-layer RNN, W=100). Shown next to reports, never asserted.
REFERENCE_BEST_DEV = {"rmse": 0.107, "cc": 0.554, "ccc": 0.507}


def _pair(pred, gold, min_len: int, op: str):
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    g = np.asarray(gold, dtype=np.float64).reshape(-1)
    if p.size != g.size:
        raise MetricError(f"{op}: length mismatch ({p.size} vs {g.size})")
    if p.size < min_len:
        raise MetricError(f"{op}: need at least {min_len} values, got {p.size}")
    return p, g


def rmse(pred, gold) -> float:
    p, g = _pair(pred, gold, 1, "rmse")
    d = p - g
    return float(np.sqrt(np.mean(d * d)))


def pearson_cc(pred, gold) -> float:
    p, g = _pair(pred, gold, 2, "pearson_cc")
    if np.ptp(p) == 0 or np.ptp(g) == 0:
        raise MetricError("pearson_cc: undefined correlation (constant input)")
    dp, dg = p - p.mean(), g - g.mean()
    cov = np.mean(dp * dg)
    r = cov / (np.sqrt(np.mean(dp * dp)) * np.sqrt(np.mean(dg * dg)))
    return float(np.clip(r, -1.0, 1.0))


def ccc(pred, gold) -> float:
    """2 cov / (var_p + var_g + (mean_p - mean_g)^2)."""
    p, g = _pair(pred, gold, 2, "ccc")
    mp, mg = p.mean(), g.mean()
    dp, dg = p - mp, g - mg
    const_p, const_g = np.ptp(p) == 0, np.ptp(g) == 0
    var_p = 0.0 if const_p else np.mean(dp * dp)
    var_g = 0.0 if const_g else np.mean(dg * dg)
    cov = 0.0 if (const_p or const_g) else np.mean(dp * dg)
    denom = var_p + var_g + (mp - mg) ** 2
    if denom == 0:
        raise MetricError("ccc: undefined CCC (both inputs constant with equal means)")
    return float(np.clip(2.0 * cov / denom, -1.0, 1.0))


@dataclass(frozen=True)
class MetricRow:
    sequence_id: str
    n: int
    rmse: float
    cc: float
    ccc: float
    n_interpolated: int = 0


@dataclass
class EvalReport:
    per_sequence: list = field(default_factory=list)
    pooled: MetricRow | None = None

    @property
    def rmse(self) -> float:
        return self.pooled.rmse

    @property
    def cc(self) -> float:
        return self.pooled.cc

    @property
    def ccc(self) -> float:
        return self.pooled.ccc

    @property
    def n(self) -> int:
        return self.pooled.n

    def to_frame(self) -> pd.DataFrame:
        rows = [asdict(r) for r in self.per_sequence] + [asdict(self.pooled)]
        return pd.DataFrame(rows, columns=["sequence_id", "n", "rmse", "cc", "ccc", "n_interpolated"])

    def to_csv(self, path):
        self.to_frame()[["sequence_id", "n", "rmse", "cc", "ccc"]].to_csv(path, index=False, float_format="%.17g")

    def to_json(self, path):
        doc = {
            "pooled": asdict(self.pooled),
            "per_sequence": [asdict(r) for r in self.per_sequence],
            "reference_best_dev": REFERENCE_BEST_DEV,
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True))


def _row(sequence_id, pred, gold, mask, lenient: bool) -> MetricRow:
    def guarded(fn):
        try:
            return fn(pred, gold)
        except MetricError as exc:
            if not lenient:
                raise
            logger.warning("[EVAL] %s: %s; reporting NaN", sequence_id, exc)
            return math.nan

    return MetricRow(
        sequence_id=sequence_id,
        n=int(np.size(pred)),
        rmse=rmse(pred, gold),
        cc=guarded(pearson_cc),
        ccc=guarded(ccc),
        n_interpolated=int(np.count_nonzero(mask)) if mask is not None else 0,
    )


def evaluate_timelines(items, lenient: bool = False) -> EvalReport:
    """items: iterable of (sequence_id, pred, gold, mask). Pooled scores use the concatenation.

    Gap-filled gold frames (mask=True) are scored like any other frame.
    `lenient` maps undefined CC/CCC to NaN with a warning instead of raising.
    """
    items = list(items)
    if not items:
        raise MetricError("evaluate: no sequences")
    rows = []
    for seq, pred, gold, mask in items:
        if mask is not None and np.size(mask) != np.size(gold):
            raise MetricError(f"evaluate: sequence '{seq}' mask length {np.size(mask)} != {np.size(gold)}")
        rows.append(_row(seq, pred, gold, mask, lenient))
    pooled_mask = np.concatenate([np.zeros(np.size(g), bool) if m is None else np.asarray(m, bool) for _, _, g, m in items])
    pooled = _row(
        POOLED,
        np.concatenate([np.asarray(p, np.float64).reshape(-1) for _, p, _, _ in items]),
        np.concatenate([np.asarray(g, np.float64).reshape(-1) for _, _, g, _ in items]),
        pooled_mask,
        lenient,
    )
    return EvalReport(rows, pooled)


def evaluate_timeline(pred, gold, mask=None, sequence_id: str = "sequence", lenient: bool = False) -> EvalReport:
    return evaluate_timelines([(sequence_id, pred, gold, mask)], lenient=lenient)


def first_difference_variance(values) -> float:
    """Variance of x[t] - x[t-1]; lower means a smoother timeline."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size < 2:
        return 0.0
    return float(np.var(np.diff(v)))
