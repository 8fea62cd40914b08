"""Dataset ingestion and frame preprocessing.

Manifest CSV columns (one row per frame, 25 fps):
    sequence_id,frame_index,timestamp_s,image_path,face_found,
    eye_l_x,eye_l_y,eye_r_x,eye_r_y,nose_x,nose_y,valence

Landmark cells are empty exactly when face_found=0. Images are 8-bit binary
PGM (P5) or PPM (P6); relative paths resolve against the manifest's folder.
"""
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from skimage.transform import SimilarityTransform, warp

from .errors import AlignmentError, FormatError, GapError, ManifestError, ShapeError

logger = logging.getLogger(__name__)

FPS = 25
FRAME_STEP_S = 1.0 / FPS

MANIFEST_COLUMNS = [
    "sequence_id", "frame_index", "timestamp_s", "image_path", "face_found",
    "eye_l_x", "eye_l_y", "eye_r_x", "eye_r_y", "nose_x", "nose_y", "valence",
]
LANDMARK_COLUMNS = MANIFEST_COLUMNS[5:11]
LUMA = np.array([0.299, 0.587, 0.114])
NORM_EPS = 1e-6

# eye/nose anchors on a 96x96 canvas; other sizes scale linearly
CANONICAL_96 = {"eye_l": (30.0, 36.0), "eye_r": (66.0, 36.0), "nose": (48.0, 60.0)}


@dataclass(frozen=True)
class FrameRecord:
    sequence_id: str
    frame_index: int
    timestamp_s: float
    image_path: Path
    face_found: bool
    landmarks: tuple | None  # ((eye_l_x, eye_l_y), (eye_r_x, eye_r_y), (nose_x, nose_y))
    valence: float | None


@dataclass(frozen=True)
class Template:
    eye_l: tuple
    eye_r: tuple
    nose: tuple
    out_size: int

    def points(self) -> np.ndarray:
        return np.array([self.eye_l, self.eye_r, self.nose], dtype=np.float64)

    @classmethod
    def canonical(cls, out_size: int = 96) -> "Template":
        s = out_size / 96.0
        return cls(**{k: (x * s, y * s) for k, (x, y) in CANONICAL_96.items()}, out_size=out_size)

    def to_dict(self) -> dict:
        return {"eye_l": list(self.eye_l), "eye_r": list(self.eye_r), "nose": list(self.nose), "out_size": self.out_size}


def load_template(path) -> Template:
    p = Path(path)
    if not p.exists():
        raise ManifestError(f"template not found: {p}")
    try:
        doc = json.loads(p.read_text())
        tpl = Template(
            eye_l=tuple(float(v) for v in doc["eye_l"]),
            eye_r=tuple(float(v) for v in doc["eye_r"]),
            nose=tuple(float(v) for v in doc["nose"]),
            out_size=int(doc["out_size"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"template {p} is malformed: {exc}") from exc
    if tpl.out_size < 1 or any(len(pt) != 2 for pt in (tpl.eye_l, tpl.eye_r, tpl.nose)):
        raise ManifestError(f"template {p} needs 2-d points and a positive out_size")
    return tpl


def save_template(template: Template, path):
    Path(path).write_text(json.dumps(template.to_dict(), indent=2, sort_keys=True))


@dataclass
class SequenceDataset:
    """Frames grouped per sequence, in manifest order; immutable after load."""
    sequences: dict = field(default_factory=dict)
    root: Path = Path(".")
    fps: int = FPS

    def __len__(self):
        return sum(len(v) for v in self.sequences.values())

    @property
    def sequence_ids(self) -> list:
        return list(self.sequences)

    def frames(self, sequence_id: str) -> list:
        return self.sequences[sequence_id]

    def subset(self, ids) -> "SequenceDataset":
        return SequenceDataset({i: self.sequences[i] for i in ids}, self.root, self.fps)

    def labels(self, sequence_id: str) -> tuple:
        """Gold valence per frame, gap-filled where no face was found; returns (values, mask)."""
        recs = self.sequences[sequence_id]
        raw = np.array([r.valence if r.face_found else np.nan for r in recs], dtype=np.float64)
        return fill_gaps(raw, ~np.array([r.face_found for r in recs]))


def _cell_empty(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v)) or (isinstance(v, str) and not v.strip())


def load_manifest(path) -> SequenceDataset:
    """Read and validate a manifest; images are not touched until load_frames."""
    p = Path(path)
    if not p.exists():
        raise ManifestError(f"manifest not found: {p}")
    df = pd.read_csv(p, dtype=str, keep_default_na=False)
    missing = [c for c in MANIFEST_COLUMNS if c not in df.columns]
    if missing:
        raise ManifestError(f"manifest {p} is missing columns: {', '.join(missing)}")
    if df.empty:
        raise ManifestError(f"manifest {p}: no frames")

    sequences = {}
    last = {}
    for i, row in enumerate(df.to_dict("records"), start=1):
        try:
            seq = row["sequence_id"].strip()
            idx = int(row["frame_index"])
            ts = float(row["timestamp_s"])
            face = row["face_found"].strip()
        except ValueError as exc:
            raise ManifestError(f"unparsable field: {exc}", row=i) from exc
        if not seq:
            raise ManifestError("empty sequence_id", row=i)
        if face not in ("0", "1"):
            raise ManifestError(f"face_found must be 0 or 1, got '{face}'", row=i)
        face_found = face == "1"
        grid = ts / FRAME_STEP_S
        if abs(grid - round(grid)) > 1e-6:
            raise ManifestError(f"timestamp {ts} is off the 40 ms grid", row=i)
        if seq in last and (ts <= last[seq][0] or idx <= last[seq][1]):
            raise ManifestError(f"timestamps/frame indices must increase within sequence '{seq}'", row=i)
        last[seq] = (ts, idx)

        cells = [row[c] for c in LANDMARK_COLUMNS]
        present = [not _cell_empty(c) for c in cells]
        if face_found and not all(present):
            raise ManifestError("face_found=1 needs all six landmark cells", row=i)
        if not face_found and any(present):
            raise ManifestError("face_found=0 but landmark cells are filled", row=i)
        landmarks = None
        if face_found:
            try:
                v = [float(c) for c in cells]
            except ValueError as exc:
                raise ManifestError(f"bad landmark value: {exc}", row=i) from exc
            landmarks = ((v[0], v[1]), (v[2], v[3]), (v[4], v[5]))

        valence = None
        if not _cell_empty(row["valence"]):
            try:
                valence = float(row["valence"])
            except ValueError as exc:
                raise ManifestError(f"bad valence: {exc}", row=i) from exc
            if not -1.0 <= valence <= 1.0:
                raise ManifestError(f"valence {valence} outside [-1, 1]", row=i)
        elif face_found:
            raise ManifestError("valence is required when face_found=1", row=i)

        image = Path(row["image_path"])
        if not image.is_absolute():
            image = p.parent / image
        sequences.setdefault(seq, []).append(
            FrameRecord(seq, idx, ts, image, face_found, landmarks, valence)
        )
    logger.info("[MANIFEST] %s: %d frames in %d sequences", p, len(df), len(sequences))
    return SequenceDataset(sequences, p.parent)


def split_dataset(dataset: SequenceDataset, dev_sequences=None, dev_fraction: float = 0.2):
    """Split by sequence. An explicit id list wins; otherwise the last ceil(fraction*n) ids in sorted order are dev."""
    ids = sorted(dataset.sequence_ids)
    if dev_sequences:
        unknown = [s for s in dev_sequences if s not in dataset.sequences]
        if unknown:
            raise ManifestError(f"unknown dev sequence(s): {', '.join(unknown)}")
        dev = [s for s in dataset.sequence_ids if s in set(dev_sequences)]
    else:
        n_dev = math.ceil(dev_fraction * len(ids)) if dev_fraction > 0 else 0
        dev = ids[len(ids) - n_dev:] if n_dev else []
    train = [s for s in dataset.sequence_ids if s not in set(dev)]
    if not train:
        raise ManifestError("split leaves no training sequence")
    return dataset.subset(train), dataset.subset(dev)


# --- images -------------------------------------------------------------------------


def _read_token(data: bytes, pos: int):
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_pnm(path) -> np.ndarray:
    """8-bit binary PGM/PPM -> uint8 array [H, W] (P5) or [H, W, 3] (P6)."""
    data = Path(path).read_bytes()
    magic, pos = _read_token(data, 0)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"{path}: unsupported image format {magic!r} (need P5 or P6)")
    try:
        w_tok, pos = _read_token(data, pos)
        h_tok, pos = _read_token(data, pos)
        m_tok, pos = _read_token(data, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: maxval must be 255, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    n = width * height * channels
    pixels = np.frombuffer(data, dtype=np.uint8, count=n, offset=pos) if len(data) - pos >= n else None
    if pixels is None:
        raise FormatError(f"{path}: expected {n} pixel bytes, found {len(data) - pos}")
    return pixels.reshape((height, width, 3) if channels == 3 else (height, width))


def write_pgm(path, pixels: np.ndarray):
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise ShapeError(f"write_pgm: need a [H, W] array, got shape {pixels.shape}")
    h, w = pixels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


def to_gray(pixels: np.ndarray) -> np.ndarray:
    """uint8 [H,W] or [H,W,3] -> float64 [H,W] in [0,1] (luma weights for colour)."""
    img = pixels.astype(np.float64) / 255.0
    if img.ndim == 3:
        img = img @ LUMA
    return img


@dataclass(frozen=True)
class SimilarityFit:
    scale: float
    rotation: float  # radians
    translation: tuple
    matrix: np.ndarray
    residual: float


def fit_similarity(landmarks, template_points) -> SimilarityFit:
    """Least-squares similarity (scale, rotation, translation) taking landmarks onto the template points."""
    src = np.asarray(landmarks, dtype=np.float64)
    dst = np.asarray(template_points, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise AlignmentError(f"landmarks {src.shape} and template {dst.shape} must both be [n, 2]")
    if src.shape[0] < 3:
        raise AlignmentError(f"need at least 3 landmark/template pairs, got {src.shape[0]}")
    for name, pts in (("landmarks", src), ("template", dst)):
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[0] == 0 or sv[-1] <= 1e-9 * sv[0]:
            raise AlignmentError(f"{name} are collinear or coincident")
    tform = SimilarityTransform()
    if not tform.estimate(src, dst):
        raise AlignmentError("similarity estimate failed")
    residual = float(np.max(np.linalg.norm(tform(src) - dst, axis=1)))
    return SimilarityFit(
        scale=float(tform.scale),
        rotation=float(tform.rotation),
        translation=(float(tform.translation[0]), float(tform.translation[1])),
        matrix=tform.params.copy(),
        residual=residual,
    )


def align_face(image: np.ndarray, landmarks, template: Template) -> np.ndarray:
    """Warp a frame so its eye/nose landmarks land on the template; returns [1, out, out].

    Bilinear inverse mapping; samples outside the source are 0.
    """
    gray = to_gray(image) if image.dtype == np.uint8 else np.asarray(image, dtype=np.float64)
    if gray.ndim == 3:
        gray = gray @ LUMA
    fit = fit_similarity(landmarks, template.points())
    tform = SimilarityTransform(matrix=fit.matrix)
    out = warp(
        gray, tform.inverse, output_shape=(template.out_size, template.out_size),
        order=1, mode="constant", cval=0.0, preserve_range=True, clip=False,
    )
    return out[None, :, :]


def normalize(image: np.ndarray) -> np.ndarray:
    """Per-image mean subtraction and division by max(population std, 1e-6)."""
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ShapeError("normalize: empty image")
    centred = img - img.mean()
    return centred / max(float(img.std()), NORM_EPS)


def load_frames(dataset: SequenceDataset, sequence_id: str, template: Template, workers: int = 1) -> list:
    """Aligned, normalized [1, out, out] tensors per frame; None where no face was found."""
    def one(rec: FrameRecord):
        if not rec.face_found:
            return None
        pixels = read_pnm(rec.image_path)
        return normalize(align_face(pixels, rec.landmarks, template))

    records = dataset.frames(sequence_id)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, records))
    return [one(r) for r in records]


# --- timelines ----------------------------------------------------------------------


def fill_gaps(values, missing):
    """Fill missing entries by linear interpolation between present neighbours.

    Leading/trailing runs hold the nearest present value. Returns (filled, mask)
    where mask marks the filled entries; present entries are copied untouched.
    """
    vals = np.asarray(values, dtype=np.float64)
    miss = np.asarray(missing, dtype=bool)
    if vals.shape != miss.shape or vals.ndim != 1:
        raise ShapeError(f"fill_gaps: values {vals.shape} and missing flags {miss.shape} must be equal 1-d")
    if miss.all():
        raise GapError("fill_gaps: every entry is missing")
    out = vals.copy()
    if miss.any():
        idx = np.arange(vals.size)
        out[miss] = np.interp(idx[miss], idx[~miss], vals[~miss])
    return out, miss.copy()


@dataclass
class FeatureTimeline:
    """Per-frame CNN features with aligned gold labels; `mask` flags gap-filled frames."""
    sequence_id: str
    features: np.ndarray  # [T, D]
    labels: np.ndarray | None  # [T]
    mask: np.ndarray  # [T] bool

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise ShapeError(f"timeline '{self.sequence_id}': features must be [T, D], got {self.features.shape}")
        if self.mask.shape != (n,):
            raise ShapeError(f"timeline '{self.sequence_id}': mask length {self.mask.shape} != {n} frames")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if self.labels.shape != (n,):
                raise ShapeError(f"timeline '{self.sequence_id}': {self.labels.shape[0]} labels for {n} frames")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Windows:
    features: np.ndarray  # [N, W, D] view into the timeline
    labels: np.ndarray  # [N, W]
    ends: np.ndarray  # [N] end index t of each window

    def __len__(self):
        return self.ends.size


def make_windows(timeline: FeatureTimeline, W: int) -> Windows:
    """Every complete window [t-W+1, t], t in [W-1, T-1]."""
    n = len(timeline)
    if W < 1:
        raise ShapeError(f"make_windows: W must be >= 1, got {W}")
    if n < W:
        raise ShapeError(f"sequence '{timeline.sequence_id}' has {n} frames, shorter than window W={W}")
    if timeline.labels is None:
        raise ShapeError(f"sequence '{timeline.sequence_id}' has no labels to window")
    feats = sliding_window_view(timeline.features, W, axis=0).transpose(0, 2, 1)
    labels = sliding_window_view(timeline.labels, W)
    return Windows(feats, labels, np.arange(W - 1, n))


@dataclass
class LoadedSequence:
    """Preprocessed frames of one sequence (None where no face was found) with gap-filled gold."""
    sequence_id: str
    frames: list
    labels: np.ndarray
    mask: np.ndarray

    def __len__(self):
        return len(self.frames)


def load_sequences(dataset: SequenceDataset, template: Template, workers: int = 1) -> list:
    out = []
    for seq in dataset.sequence_ids:
        labels, mask = dataset.labels(seq)
        out.append(LoadedSequence(seq, load_frames(dataset, seq, template, workers), labels, mask))
        logger.debug("[LOAD] %s: %d frames (%d without face)", seq, len(labels), int(mask.sum()))
    return out
