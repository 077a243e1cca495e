"""Image-to-court homography, ground points, player filtering and box enlargement.

Court coordinates are meters with the origin at the near-left corner, x across
the court width and y along its length toward the far back line.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EstimationError, ProjectionError, SpecificationError

logger = logging.getLogger(__name__)

Point = tuple[float, float]
Correspondence = tuple[Point, Point]  # (pixel point, court point)

SINGLES_INSET = 0.46
SHORT_SERVICE_FROM_NET = 1.98
LONG_SERVICE_FROM_BACK = 0.76
SCALE_EPSILON = 1e-12


@dataclass(frozen=True)
class CourtModel:
    """Standard doubles court by default, 13.40 m x 6.10 m."""
    length: float = 13.40
    width: float = 6.10
    margin: float = 0.0

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise SpecificationError(f"Court size must be positive, got {self.width}x{self.length}")
        if self.margin < 0:
            raise SpecificationError(f"Court margin must be >= 0, got {self.margin}")

    def landmarks(self) -> dict[str, Point]:
        net = self.length / 2
        inner_l, inner_r = SINGLES_INSET, self.width - SINGLES_INSET
        return {
            "near_left": (0.0, 0.0),
            "near_right": (self.width, 0.0),
            "far_left": (0.0, self.length),
            "far_right": (self.width, self.length),
            "singles_near_left": (inner_l, 0.0),
            "singles_near_right": (inner_r, 0.0),
            "singles_far_left": (inner_l, self.length),
            "singles_far_right": (inner_r, self.length),
            "near_short_service_left": (0.0, net - SHORT_SERVICE_FROM_NET),
            "near_short_service_right": (self.width, net - SHORT_SERVICE_FROM_NET),
            "far_short_service_left": (0.0, net + SHORT_SERVICE_FROM_NET),
            "far_short_service_right": (self.width, net + SHORT_SERVICE_FROM_NET),
            "near_long_service_left": (0.0, LONG_SERVICE_FROM_BACK),
            "near_long_service_right": (self.width, LONG_SERVICE_FROM_BACK),
            "far_long_service_left": (0.0, self.length - LONG_SERVICE_FROM_BACK),
            "far_long_service_right": (self.width, self.length - LONG_SERVICE_FROM_BACK),
            "near_center": (self.width / 2, 0.0),
            "far_center": (self.width / 2, self.length),
        }

    def bounds(self, singles: bool = False) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) of the playing area including the margin."""
        x_lo, x_hi = (SINGLES_INSET, self.width - SINGLES_INSET) if singles else (0.0, self.width)
        return (x_lo - self.margin, x_hi + self.margin, -self.margin, self.length + self.margin)


@dataclass(frozen=True, eq=False)
class Homography:
    """Projective map from image pixels to court meters."""
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise SpecificationError(f"Homography must be a finite 3x3 matrix, got shape {m.shape}")
        if abs(m[2, 2]) > SCALE_EPSILON:
            m = m / m[2, 2]
        else:
            m = m / np.linalg.norm(m)
        if abs(np.linalg.det(m[:2, :2])) < SCALE_EPSILON:
            raise EstimationError("Degenerate homography: upper-left 2x2 block is singular")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def to_list(self) -> list[float]:
        """Row-major nine numbers."""
        return [float(v) for v in self.matrix.ravel()]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Homography":
        if len(values) != 9:
            raise SpecificationError(f"Homography needs 9 numbers, got {len(values)}")
        return cls(np.asarray(values, dtype=np.float64).reshape(3, 3))


@dataclass(frozen=True)
class BoundingBox:
    """Top-left origin box in pixels."""
    x: float
    y: float
    w: float
    h: float
    score: float = 1.0
    source_frame: int = 0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise SpecificationError(f"Box size must be positive, got {self.w}x{self.h}")


@dataclass(frozen=True)
class CourtPoint:
    x: float
    y: float


def _hartley(points: np.ndarray) -> np.ndarray:
    """Similarity that moves the centroid to the origin and the mean distance to sqrt(2)."""
    centroid = points.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(points - centroid, axis=1))
    if mean_dist < SCALE_EPSILON:
        raise EstimationError("Degenerate configuration: all points coincide")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _collinear(a: np.ndarray, b: np.ndarray, c: np.ndarray, scale: float) -> bool:
    cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return abs(cross) <= 1e-9 * scale * scale


def _check_configuration(points: np.ndarray, label: str) -> None:
    scale = max(float(np.ptp(points, axis=0).max()), SCALE_EPSILON)
    if len(points) == 4:
        for a, b, c in itertools.combinations(points, 3):
            if _collinear(a, b, c, scale):
                raise EstimationError(f"Degenerate configuration: three {label} points are collinear")
    elif all(_collinear(points[0], points[1], p, scale) for p in points[2:]):
        raise EstimationError(f"Degenerate configuration: all {label} points are collinear")


def estimate_homography(correspondences: Sequence[Correspondence]) -> Homography:
    """Normalized direct linear transform, least squares for more than four points."""
    if len(correspondences) < 4:
        raise EstimationError(f"Need at least 4 correspondences, got {len(correspondences)}")
    src = np.array([c[0] for c in correspondences], dtype=np.float64)
    dst = np.array([c[1] for c in correspondences], dtype=np.float64)
    _check_configuration(src, "pixel")
    _check_configuration(dst, "court")

    t_src, t_dst = _hartley(src), _hartley(dst)
    ones = np.ones((len(src), 1))
    ns = (t_src @ np.hstack([src, ones]).T).T
    nd = (t_dst @ np.hstack([dst, ones]).T).T

    rows = []
    for (x, y, w), (u, v, t) in zip(ns, nd):
        rows.append([0, 0, 0, -t * x, -t * y, -t * w, v * x, v * y, v * w])
        rows.append([t * x, t * y, t * w, 0, 0, 0, -u * x, -u * y, -u * w])
    a = np.asarray(rows)

    _, s, vt = np.linalg.svd(a)
    if len(s) >= 9 and s[7] < 1e-10 * s[0]:
        raise EstimationError("Degenerate configuration: solution space has more than one dimension")
    gap = (s[7] - s[8]) / s[0] if len(s) >= 9 else s[-1] / s[0]
    if gap < 1e-6:
        logger.warning(f"Homography is ill-conditioned (singular value gap {gap:.3g})")

    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    if abs(np.linalg.det(h)) < SCALE_EPSILON * max(1.0, np.abs(h).max() ** 3):
        raise EstimationError("Degenerate configuration: estimated map is singular")
    return Homography(h)


def project_point(h: Homography, p: Point) -> CourtPoint:
    vec = h.matrix @ np.array([p[0], p[1], 1.0])
    if abs(vec[2]) < SCALE_EPSILON:
        raise ProjectionError(f"Point {p} maps to the line at infinity")
    return CourtPoint(x=float(vec[0] / vec[2]), y=float(vec[1] / vec[2]))


def reprojection_errors(h: Homography, correspondences: Iterable[Correspondence]) -> np.ndarray:
    """Euclidean court-plane error per correspondence."""
    errors = []
    for pixel, court in correspondences:
        q = project_point(h, pixel)
        errors.append(np.hypot(q.x - court[0], q.y - court[1]))
    return np.asarray(errors, dtype=np.float64)


def ground_point(box: BoundingBox) -> Point:
    """Midpoint of the lower edge, where the player meets the court plane."""
    return (box.x + box.w / 2, box.y + box.h)


def assign_player_slot(point: CourtPoint, court: CourtModel) -> str:
    return "bottom" if point.y < court.length / 2 else "top"


def filter_players(
    boxes: Iterable[BoundingBox],
    h: Homography,
    court: Optional[CourtModel] = None,
    singles: bool = False,
) -> list[tuple[BoundingBox, CourtPoint]]:
    """Keep boxes whose ground point projects inside the court (plus margin), in input order."""
    court = court or CourtModel()
    x_lo, x_hi, y_lo, y_hi = court.bounds(singles)
    kept = []
    for box in boxes:
        try:
            point = project_point(h, ground_point(box))
        except ProjectionError as e:
            logger.warning(f"Dropping box in frame {box.source_frame}: {e}")
            continue
        if x_lo <= point.x <= x_hi and y_lo <= point.y <= y_hi:
            kept.append((box, point))
    return kept


def enlarge_box(
    box: BoundingBox,
    factor: float = 1.5,
    frame_size: tuple[int, int] = (640, 480),
) -> BoundingBox:
    """Scale the box about its center, then clip it to the frame."""
    if factor < 1:
        raise SpecificationError(f"Enlarge factor must be >= 1, got {factor}")
    cx, cy = box.x + box.w / 2, box.y + box.h / 2
    half_w, half_h = box.w * factor / 2, box.h * factor / 2
    x0, x1 = max(cx - half_w, 0.0), min(cx + half_w, float(frame_size[0]))
    y0, y1 = max(cy - half_h, 0.0), min(cy + half_h, float(frame_size[1]))
    return BoundingBox(x=x0, y=y0, w=x1 - x0, h=y1 - y0, score=box.score, source_frame=box.source_frame)
