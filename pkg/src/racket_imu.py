"""Smart-racket IMU streams: stroke segmentation, window features, nearest-centroid stroke labels."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import jsonschema
import numpy as np
import pandas as pd
from scipy import signal

from .errors import ClassificationError, SpecificationError, StreamError, TrainingError
from .rally_analytics import BALL_TYPES, BallType

logger = logging.getLogger(__name__)

AXES = ("ax", "ay", "az", "gx", "gy", "gz")
CSV_COLUMNS = ("t_ms",) + AXES
STATISTICS = ("mean", "std", "min", "max")
FEATURE_NAMES = tuple(f"{axis}_{stat}" for axis in AXES for stat in STATISTICS) + ("peak_magnitude", "energy")
FEATURE_DIM = len(FEATURE_NAMES)

MODEL_SCHEMA = {
    "type": "object",
    "required": ["feature_names", "mean", "scale", "centroids"],
    "properties": {
        "feature_names": {"type": "array", "items": {"type": "string"}, "minItems": FEATURE_DIM, "maxItems": FEATURE_DIM},
        "mean": {"type": "array", "items": {"type": "number"}, "minItems": FEATURE_DIM, "maxItems": FEATURE_DIM},
        "scale": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0},
            "minItems": FEATURE_DIM,
            "maxItems": FEATURE_DIM,
        },
        "centroids": {
            "type": "object",
            "required": [bt.value for bt in BALL_TYPES],
            "additionalProperties": False,
            "properties": {
                bt.value: {"type": "array", "items": {"type": "number"}, "minItems": FEATURE_DIM, "maxItems": FEATURE_DIM}
                for bt in BALL_TYPES
            },
        },
    },
}


@dataclass(frozen=True)
class ImuSample:
    t: float  # ms
    ax: float
    ay: float
    az: float
    gx: float
    gy: float
    gz: float


@dataclass(frozen=True, eq=False)
class ImuStream:
    """Timestamps ``t`` in ms, shape (N,), and samples ``data`` in g and deg/s, shape (N, 6)."""
    t: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        data = np.asarray(self.data, dtype=np.float64).reshape(-1, len(AXES))
        if t.ndim != 1 or len(t) != len(data):
            raise StreamError(f"Stream has {t.size} timestamps but {len(data)} samples")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(data))):
            raise StreamError("Stream contains non-finite values")
        if np.any(np.diff(t) <= 0):
            bad = int(np.argmax(np.diff(t) <= 0)) + 1
            raise StreamError(f"Timestamps must be strictly increasing (sample {bad}, t={t[bad]:g} ms)")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "data", data)

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]) -> "ImuStream":
        return cls(
            t=np.array([s.t for s in samples], dtype=np.float64),
            data=np.array([[getattr(s, a) for a in AXES] for s in samples], dtype=np.float64),
        )

    def magnitude(self) -> np.ndarray:
        """Acceleration magnitude in g."""
        return np.linalg.norm(self.data[:, :3], axis=1)


@dataclass(frozen=True, eq=False)
class StrokeWindow:
    t: np.ndarray
    data: np.ndarray
    peak_time: float
    peak_magnitude: float

    def __len__(self) -> int:
        return len(self.t)


@dataclass(frozen=True, eq=False)
class StrokeModel:
    """Z-normalization statistics plus one centroid per stroke type, in canonical order."""
    mean: np.ndarray
    scale: np.ndarray
    centroids: np.ndarray  # (7, FEATURE_DIM), normalized space
    labels: tuple[BallType, ...] = BALL_TYPES

    def __post_init__(self):
        if len(self.labels) != len(BALL_TYPES) or self.centroids.shape != (len(BALL_TYPES), FEATURE_DIM):
            raise TrainingError(f"Model needs {len(BALL_TYPES)} centroids of dimension {FEATURE_DIM}")
        if np.any(self.scale <= 0):
            raise TrainingError("Normalization scales must be positive")

    def normalize(self, f: np.ndarray) -> np.ndarray:
        return (np.asarray(f, dtype=np.float64) - self.mean) / self.scale


def read_imu_csv(path: str | Path) -> ImuStream:
    """Load a decoded sample log with header ``t_ms,ax,ay,az,gx,gy,gz``."""
    try:
        frame = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise StreamError(f"{path}: unreadable CSV ({e})") from e
    if tuple(frame.columns) != CSV_COLUMNS:
        raise StreamError(f"{path}: expected header {','.join(CSV_COLUMNS)}, got {','.join(map(str, frame.columns))}")
    try:
        values = frame.astype(np.float64).to_numpy()
    except ValueError as e:
        raise StreamError(f"{path}: non-numeric sample value ({e})") from e
    stream = ImuStream(t=values[:, 0], data=values[:, 1:])
    logger.info(f"Read {len(stream)} IMU samples from {path}")
    return stream


def segment_strokes(
    stream: ImuStream,
    threshold: float = 3.0,
    window: float = 400.0,
    refractory: float = 300.0,
) -> list[StrokeWindow]:
    """Cut a window of ``window`` ms around each acceleration peak above ``threshold`` g.

    Peaks are accepted strongest first, ties to the earlier one, and suppress
    any other peak closer than ``refractory`` ms. Windows are truncated at the
    stream edges and returned in time order.
    """
    if window <= 0 or refractory < 0:
        raise SpecificationError(f"Window must be > 0 and refractory >= 0, got {window} / {refractory}")
    if len(stream) == 0:
        return []

    magnitude = stream.magnitude()
    # padding lets the first and last samples count as peaks
    padded = np.concatenate([[-1.0], magnitude, [-1.0]])
    peaks, _ = signal.find_peaks(padded)
    peaks = peaks - 1
    peaks = peaks[magnitude[peaks] > threshold]

    order = sorted(peaks.tolist(), key=lambda i: (-magnitude[i], stream.t[i]))
    accepted: list[int] = []
    for i in order:
        if all(abs(stream.t[i] - stream.t[j]) >= refractory for j in accepted):
            accepted.append(i)

    windows = []
    for i in sorted(accepted):
        center = stream.t[i]
        inside = (stream.t >= center - window / 2) & (stream.t <= center + window / 2)
        windows.append(
            StrokeWindow(
                t=stream.t[inside],
                data=stream.data[inside],
                peak_time=float(center),
                peak_magnitude=float(magnitude[i]),
            )
        )
    logger.debug(f"Segmented {len(windows)} stroke(s) from {len(peaks)} peak(s) above {threshold} g")
    return windows


def extract_features(w: StrokeWindow) -> np.ndarray:
    """26 values: mean, population std, min, max per axis, then peak magnitude and energy.

    Energy is the sum of squared acceleration magnitudes times each sample's
    interval in seconds; the last interval repeats the one before it.
    """
    if len(w) == 0:
        raise SpecificationError("Cannot extract features from an empty window")
    stats = np.stack(
        [w.data.mean(axis=0), w.data.std(axis=0), w.data.min(axis=0), w.data.max(axis=0)],
        axis=1,
    ).ravel()
    squared = np.sum(w.data[:, :3] ** 2, axis=1)
    if len(w) > 1:
        dt = np.diff(w.t) / 1000.0
        dt = np.append(dt, dt[-1])
        energy = float(np.sum(squared * dt))
    else:
        energy = 0.0
    return np.concatenate([stats, [w.peak_magnitude, energy]])


def train_centroids(labeled: Iterable[tuple[np.ndarray, BallType | str]]) -> StrokeModel:
    """Z-normalize with the training statistics and average each class."""
    rows, labels = [], []
    for f, label in labeled:
        rows.append(np.asarray(f, dtype=np.float64))
        labels.append(BallType.parse(label) if not isinstance(label, BallType) else label)
    if not rows:
        raise TrainingError("No training examples")
    x = np.stack(rows)
    if x.shape[1] != FEATURE_DIM:
        raise TrainingError(f"Expected {FEATURE_DIM}-dimensional features, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise TrainingError("Training features contain non-finite values")
    missing = [bt.value for bt in BALL_TYPES if bt not in labels]
    if missing:
        raise TrainingError(f"No training examples for stroke type(s): {', '.join(missing)}")

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale <= 0] = 1.0
    z = (x - mean) / scale
    label_arr = np.array([bt.value for bt in labels])
    centroids = np.stack([z[label_arr == bt.value].mean(axis=0) for bt in BALL_TYPES])
    logger.info(f"Trained stroke model on {len(x)} examples")
    return StrokeModel(mean=mean, scale=scale, centroids=centroids)


def stroke_probabilities(model: StrokeModel, f: np.ndarray) -> np.ndarray:
    """Softmin over centroid distances, in canonical class order."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (FEATURE_DIM,):
        raise ClassificationError(f"Expected a {FEATURE_DIM}-dimensional feature vector, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ClassificationError("Feature vector contains non-finite values")
    distances = np.linalg.norm(model.centroids - model.normalize(f), axis=1)
    weights = np.exp(-(distances - distances.min()))
    return weights / weights.sum()


def classify_stroke(model: StrokeModel, f: np.ndarray) -> tuple[BallType, float]:
    probs = stroke_probabilities(model, f)
    # argmax keeps the first maximum, which is the earliest class
    best = int(np.argmax(probs))
    return model.labels[best], float(probs[best])


def model_to_dict(model: StrokeModel) -> dict:
    return {
        "feature_names": list(FEATURE_NAMES),
        "mean": [float(v) for v in model.mean],
        "scale": [float(v) for v in model.scale],
        "centroids": {bt.value: [float(v) for v in row] for bt, row in zip(model.labels, model.centroids)},
    }


def save_model(model: StrokeModel, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model_to_dict(model), f, indent=2)
        f.write("\n")
    logger.info(f"Saved stroke model to {path}")
    return path


def load_model(path: str | Path, payload: Optional[dict] = None) -> StrokeModel:
    """Read and validate a model file (or an already-parsed ``payload``)."""
    if payload is None:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    try:
        jsonschema.validate(instance=payload, schema=MODEL_SCHEMA)
    except jsonschema.exceptions.ValidationError as e:
        raise TrainingError(f"{path}: invalid stroke model ({e.message})") from e
    if tuple(payload["feature_names"]) != FEATURE_NAMES:
        raise TrainingError(f"{path}: feature names do not match this version's features")
    return StrokeModel(
        mean=np.asarray(payload["mean"], dtype=np.float64),
        scale=np.asarray(payload["scale"], dtype=np.float64),
        centroids=np.asarray([payload["centroids"][bt.value] for bt in BALL_TYPES], dtype=np.float64),
    )
