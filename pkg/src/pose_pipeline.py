"""MPII skeletons, box-relative features and k-means outlier QA for relabeling."""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .court_geometry import BoundingBox
from .errors import ClusteringError, FeatureError, SpecificationError

logger = logging.getLogger(__name__)

# Pre-trained MPII output minus one of its 16 joints; the list is configurable.
MPII_KEYPOINTS = (
    "head_top", "upper_neck", "thorax",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "pelvis",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee",
)
PLAYER_SLOTS = ("top", "bottom")


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    visible: bool = True


@dataclass(frozen=True)
class Skeleton:
    frame: int
    player_slot: str
    keypoints: tuple[Keypoint, ...]
    racket: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.player_slot not in PLAYER_SLOTS:
            raise SpecificationError(f"Unknown player slot '{self.player_slot}'")
        for kp in self.keypoints:
            if kp.visible and not (math.isfinite(kp.x) and math.isfinite(kp.y)):
                raise SpecificationError(f"Visible keypoint with non-finite coordinates in frame {self.frame}")

    def check_count(self, names: Sequence[str] = MPII_KEYPOINTS) -> None:
        if len(self.keypoints) != len(names):
            raise SpecificationError(
                f"Skeleton in frame {self.frame} has {len(self.keypoints)} keypoints, expected {len(names)}"
            )


@dataclass(frozen=True, eq=False)
class SkeletonFeature:
    """Keypoints relative to the player box, x by 1/w and y by 1/h, flattened (x0, y0, x1, ...)."""
    vector: np.ndarray
    frame: int
    player_slot: str


@dataclass(frozen=True, eq=False)
class ClusterReport:
    assignments: np.ndarray
    centroids: np.ndarray
    distances: np.ndarray
    outliers: np.ndarray
    threshold: float
    sources: list[tuple[int, str]]
    inertia_history: list[float] = field(default_factory=list)
    seed: int = 0
    # members of single-member clusters; flagged whatever their distance
    singleton_outliers: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.singleton_outliers is None:
            object.__setattr__(self, "singleton_outliers", np.zeros(len(self.distances), dtype=bool))

    @property
    def distance_outliers(self) -> np.ndarray:
        return self.distances > self.threshold

    @property
    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=len(self.centroids))


def _raw_normalized(s: Skeleton, box: BoundingBox) -> tuple[np.ndarray, np.ndarray]:
    if not (box.w > 0 and box.h > 0):
        raise FeatureError(f"Box for frame {s.frame} has non-positive size")
    coords = np.full((len(s.keypoints), 2), np.nan)
    visible = np.array([kp.visible for kp in s.keypoints], dtype=bool)
    if not visible.any():
        raise FeatureError(f"Skeleton in frame {s.frame} ({s.player_slot}) has no visible keypoints")
    for i, kp in enumerate(s.keypoints):
        if kp.visible:
            coords[i] = ((kp.x - box.x) / box.w, (kp.y - box.y) / box.h)
    return coords, visible


def normalize_skeleton(
    s: Skeleton,
    box: BoundingBox,
    keypoint_means: Optional[np.ndarray] = None,
) -> SkeletonFeature:
    """Box-relative feature. Invisible keypoints take ``keypoint_means`` (shape (K, 2)),
    falling back to the box center when no dataset means are supplied."""
    coords, visible = _raw_normalized(s, box)
    fill = np.full_like(coords, 0.5) if keypoint_means is None else np.asarray(keypoint_means, dtype=np.float64)
    coords[~visible] = fill[~visible]
    return SkeletonFeature(vector=coords.ravel(), frame=s.frame, player_slot=s.player_slot)


def build_features(pairs: Iterable[tuple[Skeleton, BoundingBox]]) -> list[SkeletonFeature]:
    """Normalize a whole set, imputing invisible keypoints with that keypoint's dataset mean.

    Unusable skeletons are skipped with a warning.
    """
    raw = []
    for s, box in pairs:
        try:
            raw.append((s, _raw_normalized(s, box)[0]))
        except FeatureError as e:
            logger.warning(f"Skipping skeleton: {e}")
    if not raw:
        return []
    stacked = np.stack([coords for _, coords in raw])
    seen = np.sum(~np.isnan(stacked), axis=0)
    # a keypoint invisible everywhere falls back to the box center
    means = np.where(seen > 0, np.nansum(stacked, axis=0) / np.maximum(seen, 1), 0.5)
    features = []
    for s, coords in raw:
        missing = np.isnan(coords)
        coords = np.where(missing, means, coords)
        features.append(SkeletonFeature(vector=coords.ravel(), frame=s.frame, player_slot=s.player_slot))
    return features


def _kmeans_plus_plus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    closest = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centers.append(x[idx])
        closest = np.minimum(closest, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers, dtype=np.float64)


def _assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(len(x)), labels]


def _lloyd(
    x: np.ndarray,
    centroids: np.ndarray,
    max_iter: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray, list[float]]:
    history = []
    labels, d2 = _assign(x, centroids)
    history.append(float(d2.sum()))
    for _ in range(max_iter):
        updated = centroids.copy()
        for c in range(len(centroids)):
            members = x[labels == c]
            if len(members):
                updated[c] = members.mean(axis=0)
        shift = float(np.max(np.linalg.norm(updated - centroids, axis=1)))
        centroids = updated
        labels, d2 = _assign(x, centroids)
        history.append(float(d2.sum()))
        if shift < tol:
            break
    return labels, centroids, history


def cluster_skeletons(
    features: Sequence[SkeletonFeature],
    k: int = 8,
    outlier_percentile: float = 0.95,
    seed: int = 0,
    n_init: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> ClusterReport:
    """Seeded k-means++ / Lloyd clustering with distance-percentile outliers.

    A skeleton is an outlier when its distance to its centroid exceeds the
    ``outlier_percentile`` quantile of all distances, or when it sits alone in
    a cluster. The lowest-inertia of ``n_init`` seeded restarts is kept.
    """
    if k < 1:
        raise ClusteringError(f"Cluster count must be >= 1, got {k}")
    if k > len(features):
        raise ClusteringError(f"Cluster count {k} exceeds the {len(features)} available skeletons")
    if not 0 < outlier_percentile <= 1:
        raise ClusteringError(f"Outlier percentile must be in (0, 1], got {outlier_percentile}")

    x = np.stack([f.vector for f in features]).astype(np.float64)
    if not np.all(np.isfinite(x)):
        raise ClusteringError("Skeleton features contain non-finite entries")

    rng = np.random.default_rng(seed)
    best = None
    for run in range(max(n_init, 1)):
        labels, centroids, history = _lloyd(x, _kmeans_plus_plus(x, k, rng), max_iter, tol)
        if best is None or history[-1] < best[2][-1]:
            best = (labels, centroids, history)
        logger.debug(f"k-means run {run}: inertia {history[-1]:.6g} after {len(history) - 1} iterations")
    labels, centroids, history = best

    distances = np.linalg.norm(x - centroids[labels], axis=1)
    threshold = float(np.quantile(distances, outlier_percentile))
    singletons = np.zeros(len(x), dtype=bool)
    if len(x) > k:
        sizes = np.bincount(labels, minlength=k)
        singletons = sizes[labels] == 1
    outliers = (distances > threshold) | singletons

    logger.info(
        f"Clustered {len(x)} skeletons into {k} clusters; "
        f"{int(outliers.sum())} outlier(s), {int(singletons.sum())} of them alone in a cluster, threshold {threshold:.4f}"
    )
    return ClusterReport(
        assignments=labels,
        centroids=centroids,
        distances=distances,
        outliers=outliers,
        threshold=threshold,
        sources=[(f.frame, f.player_slot) for f in features],
        inertia_history=history,
        seed=seed,
        singleton_outliers=singletons,
    )


def outlier_report(report: ClusterReport) -> list[tuple[int, str, float]]:
    """The manual-relabel worklist, farthest first."""
    rows = [
        (frame, slot, float(dist))
        for (frame, slot), dist, flagged in zip(report.sources, report.distances, report.outliers)
        if flagged
    ]
    rows.sort(key=lambda r: (-r[2], r[0], r[1]))
    return rows
