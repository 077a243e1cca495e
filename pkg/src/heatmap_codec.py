"""Ground-truth heatmaps, depth-256 one-hot encoding, softmax and the pixel-wise loss.

Grids are stored image-style: ``values[y, x]`` with shape ``(height, width)``.
Use ``Heatmap.at(x, y)`` for column/row access in pixel coordinates.
"""

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import ComputationError, SpecificationError

logger = logging.getLogger(__name__)

DEPTH = 256
LOSS_EPSILON = 1e-12


@dataclass(frozen=True)
class HeatmapSpec:
    """Grid size and Gaussian parameters. Variance is sigma squared, in px^2."""
    width: int = 640
    height: int = 480
    variance: float = 10.0
    amplitude: int = 255

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise SpecificationError(f"Heatmap size must be positive, got {self.width}x{self.height}")
        if not self.variance > 0:
            raise SpecificationError(f"Variance must be > 0, got {self.variance}")
        if not 1 <= self.amplitude <= 255:
            raise SpecificationError(f"Amplitude must be in [1, 255], got {self.amplitude}")


@dataclass(frozen=True, eq=False)
class Heatmap:
    spec: HeatmapSpec
    values: np.ndarray  # uint8, (height, width)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != (self.spec.height, self.spec.width):
            raise SpecificationError(
                f"Heatmap grid {values.shape} does not match spec "
                f"{(self.spec.height, self.spec.width)}"
            )
        if values.dtype != np.uint8 and (values.min() < 0 or values.max() > 255):
            raise SpecificationError("Heatmap values must lie in [0, 255]")
        values = np.array(values, dtype=np.uint8)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def at(self, x: int, y: int) -> int:
        return int(self.values[y, x])


@dataclass(frozen=True, eq=False)
class OneHotVolume:
    """Class index per pixel; the implicit one-hot over depth 256 is Q(i, j, k)."""
    indices: np.ndarray  # integer, (height, width)

    def __post_init__(self):
        if self.indices.ndim != 2:
            raise SpecificationError(f"One-hot indices must be 2-D, got shape {self.indices.shape}")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= DEPTH):
            raise SpecificationError("One-hot indices must lie in [0, 255]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.indices.shape

    def to_dense(self) -> np.ndarray:
        """Materialise the (height, width, 256) one-hot array. Small grids only."""
        dense = np.zeros(self.indices.shape + (DEPTH,), dtype=np.float64)
        np.put_along_axis(dense, self.indices[..., None].astype(np.intp), 1.0, axis=-1)
        return dense


@dataclass(frozen=True, eq=False)
class ProbabilityVolume:
    """Per-pixel distribution over the 256 grayscale values, P(i, j, k)."""
    probs: np.ndarray  # (height, width, 256)

    def __post_init__(self):
        if self.probs.ndim != 3 or self.probs.shape[-1] != DEPTH:
            raise SpecificationError(
                f"Probability volume must have shape (H, W, {DEPTH}), got {self.probs.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]

    def check_normalized(self, tol: float = 1e-9) -> None:
        if np.any(self.probs < 0):
            raise SpecificationError("Probability volume has negative bins")
        sums = self.probs.sum(axis=-1)
        worst = float(np.max(np.abs(sums - 1.0), initial=0.0))
        if worst > tol:
            raise SpecificationError(f"Probability bins do not sum to 1 (max deviation {worst:.3g})")


def _squared_distance(center: tuple[float, float], spec: HeatmapSpec) -> np.ndarray:
    x0, y0 = center
    xs = np.arange(spec.width, dtype=np.float64)
    ys = np.arange(spec.height, dtype=np.float64)
    return (xs[None, :] - x0) ** 2 + (ys[:, None] - y0) ** 2


def generate_heatmap(center: tuple[float, float], spec: Optional[HeatmapSpec] = None) -> Heatmap:
    """Ground-truth heatmap: floor(amplitude * exp(-r^2 / 2 sigma^2)).

    The normalising 1/(2 pi sigma^2) and the 2 pi sigma^2 * 255 scale of the
    full expression cancel, so this is the simplified form. Centers may be
    fractional or lie outside the grid.
    """
    spec = spec or HeatmapSpec()
    gauss = np.exp(-_squared_distance(center, spec) / (2.0 * spec.variance))
    values = np.floor(gauss * spec.amplitude)
    return Heatmap(spec=spec, values=values.astype(np.uint8))


def literal_heatmap(center: tuple[float, float], spec: Optional[HeatmapSpec] = None) -> np.ndarray:
    """The unsimplified product form: floor((1/2πσ²)·e^(−r²/2σ²)·(2πσ²·amplitude))."""
    spec = spec or HeatmapSpec()
    norm = 2.0 * math.pi * spec.variance
    density = (1.0 / norm) * np.exp(-_squared_distance(center, spec) / (2.0 * spec.variance))
    return np.floor(density * (norm * spec.amplitude)).astype(np.int64)


def divergent_pixels(center: tuple[float, float], spec: Optional[HeatmapSpec] = None) -> list[tuple[int, int]]:
    """(x, y) pixels where the simplified and literal forms floor to different values."""
    spec = spec or HeatmapSpec()
    simple = generate_heatmap(center, spec).values.astype(np.int64)
    literal = literal_heatmap(center, spec)
    ys, xs = np.nonzero(simple != literal)
    pixels = [(int(x), int(y)) for x, y in zip(xs, ys)]
    if pixels:
        logger.warning(
            f"{len(pixels)} pixel(s) differ between heatmap evaluation orders "
            f"for center {center}: {pixels[:5]}"
        )
    return pixels


def encode_onehot(heatmap: Heatmap) -> OneHotVolume:
    return OneHotVolume(indices=heatmap.values.astype(np.int64))


def decode_onehot(volume: OneHotVolume, spec: HeatmapSpec) -> Heatmap:
    return Heatmap(spec=spec, values=volume.indices.astype(np.uint8))


def softmax_normalize(logits: np.ndarray) -> ProbabilityVolume:
    """Pixel-wise softmax over the last (depth-256) axis, max-shifted for stability."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 3 or logits.shape[-1] != DEPTH:
        raise SpecificationError(f"Logits must have shape (H, W, {DEPTH}), got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ComputationError("Softmax input contains non-finite scores")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return ProbabilityVolume(probs=exp / exp.sum(axis=-1, keepdims=True))


def cross_entropy_loss(
    pred: ProbabilityVolume,
    truth: OneHotVolume,
    epsilon: float = LOSS_EPSILON,
    validate: bool = True,
) -> float:
    """-sum over pixels of ln P(i, j, truth(i, j)), with P clamped at epsilon."""
    if pred.shape != truth.shape:
        raise SpecificationError(f"Prediction grid {pred.shape} does not match truth grid {truth.shape}")
    if validate:
        pred.check_normalized()
    picked = np.take_along_axis(pred.probs, truth.indices[..., None].astype(np.intp), axis=-1)[..., 0]
    return float(-np.sum(np.log(np.maximum(picked, epsilon))))


def rescale_point(
    point: tuple[float, float],
    original_size: tuple[int, int] = (1280, 720),
    working_size: tuple[int, int] = (640, 480),
) -> tuple[float, float]:
    """Map a label coordinate between resolutions, scaling each axis independently."""
    return (
        point[0] * working_size[0] / original_size[0],
        point[1] * working_size[1] / original_size[1],
    )


def write_pgm(heatmap: Heatmap, path: str | Path) -> Path:
    """Write an 8-bit binary (P5) PGM."""
    path = Path(path)
    Image.fromarray(np.ascontiguousarray(heatmap.values)).save(path, format="PPM")
    return path


def read_pgm(path: str | Path, spec: Optional[HeatmapSpec] = None) -> Heatmap:
    """Read a grayscale image as a heatmap. The spec's size is taken from the file."""
    with Image.open(path) as img:
        values = np.array(img.convert("L"), dtype=np.uint8)
    base = spec or HeatmapSpec()
    file_spec = HeatmapSpec(
        width=values.shape[1],
        height=values.shape[0],
        variance=base.variance,
        amplitude=base.amplitude,
    )
    return Heatmap(spec=file_spec, values=values)


def heatmap_descriptor(center: tuple[float, float], spec: HeatmapSpec) -> dict:
    return {
        "width": spec.width,
        "height": spec.height,
        "variance": spec.variance,
        "amplitude": spec.amplitude,
        "center": [float(center[0]), float(center[1])],
    }


def write_descriptor(center: tuple[float, float], spec: HeatmapSpec, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(heatmap_descriptor(center, spec), f, indent=2)
        f.write("\n")
    return path
