"""Heatmap to shuttlecock position: threshold, Hough gradient circles, one-circle rule."""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

import numpy as np
from scipy import ndimage

from .errors import SpecificationError
from .heatmap_codec import Heatmap

logger = logging.getLogger(__name__)

MODES = ("circle", "argmax")


class DetectionStatus(str, Enum):
    FOUND = "found"
    ABSENT = "absent"


@dataclass(frozen=True)
class DecoderConfig:
    """Binarisation and Hough parameters. Defaults are tuned on synthetic disks."""
    threshold: int = 128
    min_radius: int = 2
    max_radius: int = 10
    gradient_threshold: float = 100.0
    accumulator_threshold: int = 10
    min_center_distance: float = 10.0
    min_component_size: int = 3
    mode: str = "circle"

    def __post_init__(self):
        if not 0 < self.threshold < 255:
            raise SpecificationError(f"Threshold must be in (0, 255), got {self.threshold}")
        if not 0 < self.min_radius <= self.max_radius:
            raise SpecificationError(
                f"Radius window must satisfy 0 < min <= max, got [{self.min_radius}, {self.max_radius}]"
            )
        if self.mode not in MODES:
            raise SpecificationError(f"Unknown decode mode '{self.mode}', expected one of {MODES}")


@dataclass(frozen=True)
class Circle:
    x: float
    y: float
    radius: int
    votes: int


@dataclass(frozen=True)
class BallDetection:
    frame: int
    status: DetectionStatus
    position: Optional[tuple[float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, "status", DetectionStatus(self.status))
        if (self.position is not None) != (self.status is DetectionStatus.FOUND):
            raise SpecificationError("A detection has a position if and only if it was found")

    @property
    def found(self) -> bool:
        return self.status is DetectionStatus.FOUND

    @classmethod
    def absent(cls, frame: int) -> "BallDetection":
        return cls(frame=frame, status=DetectionStatus.ABSENT)

    @classmethod
    def at(cls, frame: int, x: float, y: float) -> "BallDetection":
        return cls(frame=frame, status=DetectionStatus.FOUND, position=(float(x), float(y)))


def binarize(heatmap: Heatmap, threshold: int) -> np.ndarray:
    """255 where the value is strictly greater than the threshold, else 0."""
    return np.where(heatmap.values > threshold, 255, 0).astype(np.uint8)


def _components(binary: np.ndarray, min_size: int) -> np.ndarray:
    """8-connected foreground labels, with components under ``min_size`` pixels zeroed."""
    labels, count = ndimage.label(binary > 0, structure=np.ones((3, 3), dtype=bool))
    if count == 0 or min_size <= 1:
        return labels
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_size
    keep[0] = False
    return np.where(keep[labels], labels, 0)


def _cast_votes(
    edge_y: np.ndarray,
    edge_x: np.ndarray,
    unit_x: np.ndarray,
    unit_y: np.ndarray,
    radii: np.ndarray,
    shape: tuple[int, int],
) -> np.ndarray:
    accumulator = np.zeros(shape, dtype=np.int64)
    for sign in (1.0, -1.0):
        # (radii, edges)
        cx = np.rint(edge_x[None, :] + sign * radii[:, None] * unit_x[None, :]).astype(np.int64)
        cy = np.rint(edge_y[None, :] + sign * radii[:, None] * unit_y[None, :]).astype(np.int64)
        inside = (cx >= 0) & (cx < shape[1]) & (cy >= 0) & (cy < shape[0])
        np.add.at(accumulator, (cy[inside], cx[inside]), 1)
    return accumulator


def _refine_center(labels: np.ndarray, cy: int, cx: int, reach: int) -> tuple[float, float]:
    """Centroid of the foreground component supporting the peak at (cy, cx).

    A peak inside a hollow ring has no label of its own; the component with
    the most pixels within ``reach`` of it is used instead.
    """
    label = int(labels[cy, cx])
    if label == 0:
        y0, y1 = max(cy - reach, 0), min(cy + reach + 1, labels.shape[0])
        x0, x1 = max(cx - reach, 0), min(cx + reach + 1, labels.shape[1])
        window = labels[y0:y1, x0:x1].ravel()
        window = window[window > 0]
        if window.size == 0:
            return float(cx), float(cy)
        label = int(np.argmax(np.bincount(window)))
    y, x = ndimage.center_of_mass(labels == label)
    return float(x), float(y)


def _radius_mode(
    edge_y: np.ndarray,
    edge_x: np.ndarray,
    center: tuple[float, float],
    config: DecoderConfig,
) -> int:
    dist = np.hypot(edge_x - center[0], edge_y - center[1])
    support = np.rint(dist[dist <= config.max_radius + 1]).astype(np.int64)
    support = support[(support >= config.min_radius) & (support <= config.max_radius)]
    if support.size == 0:
        return config.min_radius
    counts = np.bincount(support - config.min_radius)
    return int(np.argmax(counts)) + config.min_radius


def find_circles(binary: np.ndarray, config: Optional[DecoderConfig] = None) -> list[Circle]:
    """Hough gradient circle search on a 0/255 map.

    Edge pixels (Sobel magnitude above ``gradient_threshold``) vote along
    their gradient line, in both directions, for every radius in the window.
    Accumulator local maxima become centers, greedily separated by
    ``min_center_distance``. Circles come back sorted by votes, then (y, x).
    """
    config = config or DecoderConfig()
    labels = _components(np.asarray(binary), config.min_component_size)
    if not labels.any():
        return []

    image = np.where(labels > 0, 255.0, 0.0)
    gx = ndimage.sobel(image, axis=1, mode="constant")
    gy = ndimage.sobel(image, axis=0, mode="constant")
    magnitude = np.hypot(gx, gy)
    edge_y, edge_x = np.nonzero(magnitude > config.gradient_threshold)
    if edge_y.size == 0:
        return []

    unit_x = gx[edge_y, edge_x] / magnitude[edge_y, edge_x]
    unit_y = gy[edge_y, edge_x] / magnitude[edge_y, edge_x]
    radii = np.arange(config.min_radius, config.max_radius + 1, dtype=np.float64)
    accumulator = _cast_votes(edge_y, edge_x, unit_x, unit_y, radii, labels.shape)

    peaks = (accumulator == ndimage.maximum_filter(accumulator, size=3, mode="constant")) & (
        accumulator >= config.accumulator_threshold
    )
    peak_y, peak_x = np.nonzero(peaks)
    votes = accumulator[peak_y, peak_x]
    order = np.lexsort((peak_x, peak_y, -votes))

    accepted: list[tuple[int, int, int]] = []
    for idx in order:
        py, px, v = int(peak_y[idx]), int(peak_x[idx]), int(votes[idx])
        if all(np.hypot(px - ax, py - ay) >= config.min_center_distance for ay, ax, _ in accepted):
            accepted.append((py, px, v))

    circles = []
    for py, px, v in accepted:
        cx, cy = _refine_center(labels, py, px, config.max_radius)
        circles.append(Circle(x=cx, y=cy, radius=_radius_mode(edge_y, edge_x, (cx, cy), config), votes=v))
    circles.sort(key=lambda c: (-c.votes, c.y, c.x))
    logger.debug(f"Hough search found {len(circles)} circle(s) from {edge_y.size} edge pixels")
    return circles


def decode_ball(heatmap: Heatmap, config: Optional[DecoderConfig] = None, frame: int = 0) -> BallDetection:
    """Report the shuttlecock only when exactly one circle is found (circle mode),
    or at the brightest pixel above threshold (argmax mode)."""
    config = config or DecoderConfig()
    if config.mode == "argmax":
        flat = int(np.argmax(heatmap.values))
        y, x = divmod(flat, heatmap.spec.width)
        if heatmap.values[y, x] > config.threshold:
            return BallDetection.at(frame, x, y)
        return BallDetection.absent(frame)

    circles = find_circles(binarize(heatmap, config.threshold), config)
    if len(circles) == 1:
        return BallDetection.at(frame, circles[0].x, circles[0].y)
    if len(circles) > 1:
        logger.debug(f"Frame {frame}: {len(circles)} circles, reporting no shuttlecock")
    return BallDetection.absent(frame)


def decode_frames(heatmaps: Mapping[int, Heatmap], config: Optional[DecoderConfig] = None) -> list[BallDetection]:
    config = config or DecoderConfig()
    return [decode_ball(heatmaps[frame], config, frame=frame) for frame in sorted(heatmaps)]
