"""Shared fixtures: synthetic matches, trajectories and a small on-disk dataset."""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the repository root to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.court_geometry import BoundingBox
from src.dataset import BallLabel, FrameLabel, MatchDataset, save_dataset
from src.heatmap_codec import HeatmapSpec, generate_heatmap, write_pgm
from src.pose_pipeline import MPII_KEYPOINTS, Keypoint, Skeleton
from src.rally_analytics import BALL_TYPES, Rally, Stroke


@pytest.fixture
def rng():
    return np.random.default_rng(20180311)


def random_match(rng: np.random.Generator, n_rallies: int, reasons=("net", "out", "fault")) -> list[Rally]:
    """Valid rallies: ordered, disjoint, alternating hitters, hits inside the range."""
    rallies = []
    frame = 0
    for i in range(n_rallies):
        n_strokes = int(rng.integers(0, 12))
        start = frame + int(rng.integers(1, 20))
        first = str(rng.choice(["top", "bottom"]))
        hit = start
        strokes = []
        for k in range(n_strokes):
            hit += int(rng.integers(1, 30))
            player = first if k % 2 == 0 else ("bottom" if first == "top" else "top")
            strokes.append(Stroke(hit_frame=hit, player=player, ball_type=BALL_TYPES[int(rng.integers(7))]))
        end = hit + int(rng.integers(0, 15))
        rallies.append(
            Rally(
                rally_id=f"r{i:03d}",
                start_frame=start,
                end_frame=end,
                strokes=tuple(strokes),
                winner=str(rng.choice(["top", "bottom"])),
                loss_reason=str(rng.choice(list(reasons))),
            )
        )
        frame = end
    return rallies


@pytest.fixture
def match_factory(rng):
    return lambda n: random_match(rng, n)


def standing_skeleton(frame: int, slot: str, box: BoundingBox, jitter: float = 0.0, rng=None) -> Skeleton:
    """A fixed upright pose laid out inside ``box``."""
    template = np.linspace(0.1, 0.9, len(MPII_KEYPOINTS))
    keypoints = []
    for i, v in enumerate(template):
        u = 0.5 + 0.25 * np.sin(i)
        if rng is not None:
            u += jitter * rng.standard_normal()
        keypoints.append(Keypoint(x=box.x + u * box.w, y=box.y + v * box.h))
    return Skeleton(frame=frame, player_slot=slot, keypoints=tuple(keypoints))


@pytest.fixture
def example_dataset(tmp_path, rng) -> Path:
    """A small labeled match on disk: calibration, boxes, skeletons, rallies and heatmaps.

    The calibration maps the working grid so that court x = px / 100 and
    court y = py / 35, which puts the whole 6.10 x 13.40 court on screen.
    """
    dataset = MatchDataset(original_resolution=(1280, 720), working_resolution=(640, 480), fps=30.0)
    dataset.calibration = [
        ((0.0, 0.0), (0.0, 0.0)),
        ((600.0, 0.0), (6.0, 0.0)),
        ((600.0, 455.0), (6.0, 13.0)),
        ((0.0, 455.0), (0.0, 13.0)),
        ((300.0, 227.5), (3.0, 6.5)),
    ]
    for frame in range(0, 40):
        label = FrameLabel(frame=frame)
        y = 100.0 + abs((frame % 20) - 10) * 8.0
        label.ball = BallLabel(visible=frame % 13 != 7, position=(100.0 + 6.0 * frame, y))
        near = BoundingBox(x=280.0, y=60.0, w=40.0, h=80.0, source_frame=frame)
        far = BoundingBox(x=300.0, y=300.0, w=30.0, h=60.0, source_frame=frame)
        label.boxes = [("bottom", near), ("top", far)]
        if frame % 2 == 0:
            label.skeletons = [
                standing_skeleton(frame, "bottom", near, 0.01, rng),
                standing_skeleton(frame, "top", far, 0.01, rng),
            ]
        dataset.frames[frame] = label
    dataset.rallies = [
        Rally("r001", 0, 15, (Stroke(2, "bottom", BALL_TYPES[0]), Stroke(9, "top", BALL_TYPES[6])), "top", "net"),
        Rally("r002", 20, 39, (Stroke(21, "top", BALL_TYPES[2]), Stroke(30, "bottom", BALL_TYPES[6])), "top", "out"),
    ]

    root = tmp_path / "match"
    save_dataset(dataset, root)
    (root / "heatmaps").mkdir()
    spec = HeatmapSpec(width=640, height=480)
    for frame in range(5):
        write_pgm(generate_heatmap((100.0 + 40 * frame, 200.0), spec), root / "heatmaps" / f"{frame}.pgm")
    return root
