"""Rally and match statistics, chart payloads, hit times and shuttlecock speeds."""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .court_geometry import Homography, project_point
from .detection_decoder import BallDetection
from .errors import ProjectionError, SpecificationError

logger = logging.getLogger(__name__)

PLAYERS = ("top", "bottom")
DEFAULT_LOSS_REASONS = ("net", "out", "opponent_winner", "body_touch", "fault")


class BallType(str, Enum):
    CUT = "cut"
    DRIVE = "drive"
    LOB = "lob"
    LONG = "long"
    NETPLAY = "netplay"
    RUSH = "rush"
    SMASH = "smash"

    @classmethod
    def parse(cls, name: str) -> "BallType":
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise SpecificationError(f"Unknown ball type '{name}'") from None


BALL_TYPES = tuple(BallType)


def opponent(player: str) -> str:
    return "bottom" if player == "top" else "top"


@dataclass(frozen=True)
class Stroke:
    hit_frame: int
    player: str
    ball_type: BallType


@dataclass(frozen=True)
class Rally:
    rally_id: str
    start_frame: int
    end_frame: int
    strokes: tuple[Stroke, ...]
    winner: str
    loss_reason: str

    @property
    def loser(self) -> str:
        return opponent(self.winner)

    def problems(self) -> list[str]:
        """Invariant violations, empty when the rally is valid."""
        issues = []
        if self.start_frame > self.end_frame:
            issues.append(f"start_frame {self.start_frame} is after end_frame {self.end_frame}")
        if self.winner not in PLAYERS:
            issues.append(f"unknown winner '{self.winner}'")
        previous: Optional[Stroke] = None
        for stroke in self.strokes:
            if not self.start_frame <= stroke.hit_frame <= self.end_frame:
                issues.append(
                    f"stroke at frame {stroke.hit_frame} lies outside "
                    f"[{self.start_frame}, {self.end_frame}]"
                )
            if stroke.player not in PLAYERS:
                issues.append(f"unknown player '{stroke.player}' at frame {stroke.hit_frame}")
            if previous is not None:
                if stroke.hit_frame <= previous.hit_frame:
                    issues.append(f"stroke frames not strictly increasing at frame {stroke.hit_frame}")
                if stroke.player == previous.player:
                    issues.append(f"player '{stroke.player}' hits twice in a row at frame {stroke.hit_frame}")
            previous = stroke
        return issues


@dataclass(frozen=True)
class RallyCount:
    rally_id: str
    stroke_count: int
    winner: str


@dataclass(frozen=True)
class BallTypeHistogram:
    counts: dict[BallType, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def is_empty(self) -> bool:
        return self.total == 0

    @property
    def fractions(self) -> Optional[dict[BallType, float]]:
        """None when there are no strokes."""
        if self.is_empty:
            return None
        return {bt: self.counts[bt] / self.total for bt in BALL_TYPES}

    def as_list(self) -> list[int]:
        return [self.counts[bt] for bt in BALL_TYPES]


@dataclass(frozen=True)
class RadarData:
    top: list[int]
    bottom: list[int]


@dataclass(frozen=True)
class LosingStreak:
    player: str
    first_rally: str
    last_rally: str
    length: int
    reasons: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class Trajectory:
    detections: tuple[BallDetection, ...]
    fps: float

    def __post_init__(self):
        if not self.fps > 0:
            raise SpecificationError(f"fps must be > 0, got {self.fps}")
        frames = [d.frame for d in self.detections]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise SpecificationError("Trajectory frames must be strictly increasing")

    @classmethod
    def from_detections(cls, detections: Iterable[BallDetection], fps: float) -> "Trajectory":
        return cls(detections=tuple(sorted(detections, key=lambda d: d.frame)), fps=fps)

    def found(self) -> tuple[np.ndarray, np.ndarray]:
        """Frames and (N, 2) positions of the found detections."""
        hits = [d for d in self.detections if d.found]
        frames = np.array([d.frame for d in hits], dtype=np.int64)
        points = np.array([d.position for d in hits], dtype=np.float64).reshape(-1, 2)
        return frames, points


def stroke_count_per_rally(match: Sequence[Rally]) -> list[RallyCount]:
    """Every stroke counts, the serve included."""
    return [RallyCount(r.rally_id, len(r.strokes), r.winner) for r in match]


def ball_type_distribution(match: Iterable[Rally], player: Optional[str] = None) -> BallTypeHistogram:
    tally = Counter(
        s.ball_type for r in match for s in r.strokes if player is None or s.player == player
    )
    return BallTypeHistogram(counts={bt: tally.get(bt, 0) for bt in BALL_TYPES})


def loss_reason_distribution(match: Iterable[Rally]) -> dict[tuple[str, str], int]:
    """Count per (losing player, reason), keys sorted."""
    tally = Counter((r.loser, r.loss_reason) for r in match)
    return dict(sorted(tally.items()))


def rally_radar_data(rally: Rally) -> RadarData:
    vectors = {p: ball_type_distribution([rally], p).as_list() for p in PLAYERS}
    return RadarData(top=vectors["top"], bottom=vectors["bottom"])


def losing_streaks(match: Sequence[Rally], min_length: int = 3) -> list[LosingStreak]:
    """Runs of at least ``min_length`` consecutive rallies lost by the same player."""
    streaks = []
    run: list[Rally] = []
    for rally in list(match) + [None]:
        if rally is not None and run and rally.loser == run[-1].loser:
            run.append(rally)
            continue
        if len(run) >= min_length:
            streaks.append(
                LosingStreak(
                    player=run[0].loser,
                    first_rally=run[0].rally_id,
                    last_rally=run[-1].rally_id,
                    length=len(run),
                    reasons=dict(sorted(Counter(r.loss_reason for r in run).items())),
                )
            )
        run = [rally] if rally is not None else []
    for s in streaks:
        logger.info(f"{s.player} lost {s.length} rallies in a row ({s.first_rally}..{s.last_rally})")
    return streaks


def ball_type_chart(match: Sequence[Rally]) -> dict:
    return {
        "labels": [bt.value for bt in BALL_TYPES],
        "series": {p: ball_type_distribution(match, p).as_list() for p in PLAYERS},
    }


def loss_reason_chart(match: Sequence[Rally], vocabulary: Sequence[str] = DEFAULT_LOSS_REASONS) -> dict:
    tally = loss_reason_distribution(match)
    return {
        "labels": list(vocabulary),
        "series": {p: [tally.get((p, reason), 0) for reason in vocabulary] for p in PLAYERS},
    }


def radar_chart(rally: Rally) -> dict:
    radar = rally_radar_data(rally)
    return {"rally_id": rally.rally_id, "axes": [bt.value for bt in BALL_TYPES], "top": radar.top, "bottom": radar.bottom}


def rally_series(match: Sequence[Rally]) -> list[dict]:
    return [{"rally_id": c.rally_id, "count": c.stroke_count, "winner": c.winner} for c in stroke_count_per_rally(match)]


def _bridged_segments(frames: np.ndarray, points: np.ndarray, max_gap: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split at gaps longer than ``max_gap`` missing frames; fill shorter gaps linearly."""
    segments = []
    start = 0
    for i in range(1, len(frames) + 1):
        if i == len(frames) or frames[i] - frames[i - 1] - 1 > max_gap:
            seg_f, seg_p = frames[start:i], points[start:i]
            full = np.arange(seg_f[0], seg_f[-1] + 1)
            filled = np.column_stack([np.interp(full, seg_f, seg_p[:, 0]), np.interp(full, seg_f, seg_p[:, 1])])
            segments.append((full, filled))
            start = i
    return segments


def detect_hit_times(
    traj: Trajectory,
    smoothing_window: int = 3,
    angle_threshold_deg: float = 60.0,
    refractory: int = 5,
    max_gap: int = 3,
) -> list[int]:
    """Frames where the smoothed ball direction reverses vertically or turns sharply.

    A velocity-reversal baseline, not a learned stroke classifier.
    """
    frames, points = traj.found()
    if len(frames) < 3:
        logger.warning(f"Hit detection needs at least 3 found detections, got {len(frames)}")
        return []

    cos_limit = math.cos(math.radians(angle_threshold_deg))
    candidates = []
    for seg_frames, seg_points in _bridged_segments(frames, points, max_gap):
        if len(seg_frames) < 3:
            continue
        smooth = ndimage.uniform_filter1d(seg_points, size=max(smoothing_window, 1), axis=0, mode="nearest")
        velocity = np.diff(smooth, axis=0)
        speed = np.linalg.norm(velocity, axis=1)
        last_sign = 0.0
        last_dir: Optional[np.ndarray] = None
        for i, (v, s) in enumerate(zip(velocity, speed)):
            if s < 1e-9:
                continue
            sign = math.copysign(1.0, v[1]) if abs(v[1]) > 1e-9 else 0.0
            turned = last_dir is not None and float(np.dot(last_dir, v / s)) < cos_limit
            reversed_ = sign != 0.0 and last_sign != 0.0 and sign != last_sign
            if turned or reversed_:
                # velocity i runs from frame i to i + 1, so the turn is at frame i
                candidates.append(int(seg_frames[i]))
            if sign != 0.0:
                last_sign = sign
            last_dir = v / s

    hits: list[int] = []
    for frame in sorted(set(candidates)):
        if not hits or frame - hits[-1] >= refractory:
            hits.append(frame)
    return hits


def _speeds(frames: np.ndarray, points: np.ndarray, fps: float, max_gap: int) -> list[tuple[int, float]]:
    samples = []
    for i in range(len(frames)):
        prev_ok = i > 0 and frames[i] - frames[i - 1] - 1 <= max_gap
        next_ok = i + 1 < len(frames) and frames[i + 1] - frames[i] - 1 <= max_gap
        if prev_ok and next_ok:
            a, b = i - 1, i + 1
        elif next_ok:
            a, b = i, i + 1
        elif prev_ok:
            a, b = i - 1, i
        else:
            continue
        displacement = float(np.linalg.norm(points[b] - points[a]))
        samples.append((int(frames[i]), displacement / float(frames[b] - frames[a]) * fps))
    return samples


def estimate_speed(traj: Trajectory, max_gap: int = 3) -> list[tuple[int, float]]:
    """Pixel speed per found frame by central differences (one-sided at segment ends)."""
    frames, points = traj.found()
    if len(frames) < 2:
        return []
    return _speeds(frames, points, traj.fps, max_gap)


def estimate_court_speed(traj: Trajectory, h: Homography, max_gap: int = 3) -> list[tuple[int, float]]:
    """Speed in m/s after projecting through the court homography.

    Approximate: the shuttlecock is off the court plane in flight.
    """
    frames, points = traj.found()
    kept_frames, projected = [], []
    for frame, p in zip(frames, points):
        try:
            q = project_point(h, (p[0], p[1]))
        except ProjectionError:
            continue
        kept_frames.append(frame)
        projected.append((q.x, q.y))
    if len(kept_frames) < 2:
        return []
    logger.warning("Court-plane shuttlecock speeds are approximate (ball is above the plane)")
    return _speeds(np.asarray(kept_frames), np.asarray(projected), traj.fps, max_gap)
