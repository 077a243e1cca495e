"""Stage orchestration: decode, filter, qa, analytics, and chart export."""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .config import Config
from .court_geometry import (
    assign_player_slot,
    enlarge_box,
    estimate_homography,
    filter_players,
    reprojection_errors,
)
from .dataset import MatchDataset
from .detection_decoder import decode_frames
from .errors import CoachError
from .heatmap_codec import read_pgm
from .output_processor import OutputProcessor, fmt_coord, fmt_prob
from .pose_pipeline import build_features, cluster_skeletons, outlier_report
from .rally_analytics import (
    ball_type_chart,
    detect_hit_times,
    estimate_court_speed,
    estimate_speed,
    loss_reason_chart,
    losing_streaks,
    radar_chart,
    rally_series,
)

logger = logging.getLogger(__name__)

STAGES = ("decode", "filter", "qa", "analytics")
DEPENDS_ON = {"qa": "filter"}


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(record.getMessage())


@dataclass
class StageReport:
    name: str
    status: str = "ran"  # ran, skipped, failed
    reason: Optional[str] = None
    counts: dict[str, int | float] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    wall_time_s: Optional[float] = None

    def to_dict(self, timing: bool = True) -> dict:
        data = {"name": self.name, "status": self.status}
        if self.reason:
            data["reason"] = self.reason
        data["counts"] = self.counts
        data["outputs"] = self.outputs
        data["warnings"] = self.warnings
        if timing and self.wall_time_s is not None:
            data["wall_time_s"] = self.wall_time_s
        return data


class _Skip(Exception):
    """Raised inside a stage when an input is missing."""


def _decode(dataset: MatchDataset, config: Config, out: OutputProcessor, state: dict, report: StageReport) -> None:
    if not dataset.heatmaps:
        raise _Skip("no heatmap files in the dataset")
    heatmaps = {frame: read_pgm(path, config.heatmap.spec()) for frame, path in sorted(dataset.heatmaps.items())}
    detections = decode_frames(heatmaps, config.decoder.params())
    rows = [
        [d.frame, d.status.value, d.position[0] if d.found else None, d.position[1] if d.found else None]
        for d in detections
    ]
    path = out.write_table("detections", ("frame", "status", "x", "y"), rows, {"x": fmt_coord, "y": fmt_coord})
    found = sum(d.found for d in detections)
    report.counts.update({"heatmaps": len(heatmaps), "found": found, "absent": len(detections) - found})
    report.outputs.append(path.name)


def _filter(dataset: MatchDataset, config: Config, out: OutputProcessor, state: dict, report: StageReport) -> None:
    if len(dataset.calibration) < 4:
        raise _Skip(f"calibration needs at least 4 points, dataset has {len(dataset.calibration)}")
    boxes = dataset.boxes()
    if not boxes:
        raise _Skip("no player boxes in the dataset")
    h = estimate_homography(dataset.calibration)
    court = config.court.model()
    errors = reprojection_errors(h, dataset.calibration)
    kept = filter_players(boxes, h, court, singles=config.court.use_singles_bounds)
    state["players"] = [(box, assign_player_slot(point, court)) for box, point in kept]

    report.outputs.append(out.write_json("homography", h.to_list(), count=9).name)
    rows = [
        [box.source_frame, assign_player_slot(point, court), box.x, box.y, box.w, box.h, point.x, point.y]
        for box, point in kept
    ]
    formats = {c: fmt_coord for c in ("x", "y", "w", "h", "court_x", "court_y")}
    path = out.write_table(
        "players", ("frame", "player_slot", "x", "y", "w", "h", "court_x", "court_y"), rows, formats
    )
    report.outputs.append(path.name)
    report.counts.update(
        {
            "boxes": len(boxes),
            "kept": len(kept),
            "max_reprojection_error": float(fmt_prob(float(errors.max()))),
        }
    )


def _qa(dataset: MatchDataset, config: Config, out: OutputProcessor, state: dict, report: StageReport) -> None:
    players = {(box.source_frame, slot): box for box, slot in state["players"]}
    frame_size = dataset.working_resolution
    pairs = []
    for f in sorted(dataset.frames):
        for s in sorted(dataset.frames[f].skeletons, key=lambda s: s.player_slot):
            box = players.get((f, s.player_slot))
            if box is None:
                logger.warning(f"Skeleton in frame {f} ({s.player_slot}) has no on-court player box")
                continue
            s.check_count(config.pose.keypoint_names)
            pairs.append((s, enlarge_box(box, config.pose.enlarge_factor, frame_size)))
    features = build_features(pairs)
    if len(features) < 2:
        raise _Skip(f"need at least 2 usable skeletons, found {len(features)}")
    k = min(config.pose.clusters, len(features))
    result = cluster_skeletons(
        features,
        k=k,
        outlier_percentile=config.pose.outlier_percentile,
        seed=config.seed,
        n_init=config.pose.n_init,
    )
    rows = outlier_report(result)
    path = out.write_table("outliers", ("frame", "player_slot", "distance"), rows, {"distance": fmt_prob})
    report.outputs.append(path.name)
    report.counts.update({"skeletons": len(features), "clusters": k, "outliers": len(rows)})


def _analytics(dataset: MatchDataset, config: Config, out: OutputProcessor, state: dict, report: StageReport) -> None:
    if not dataset.rallies:
        raise _Skip("no rallies in the dataset")
    counts = export_chart_data(dataset, out, config.analytics.losing_streak_length)
    report.outputs.extend(sorted(counts))

    settings = config.analytics
    traj = dataset.trajectory()
    hits = detect_hit_times(
        traj,
        smoothing_window=settings.smoothing_window,
        angle_threshold_deg=settings.angle_threshold_deg,
        refractory=settings.refractory_frames,
        max_gap=settings.max_gap_frames,
    )
    report.outputs.append(out.write_table("hits", ("frame",), [[f] for f in hits]).name)

    speeds = estimate_speed(traj, max_gap=settings.max_gap_frames)
    court_speeds = {}
    if len(dataset.calibration) >= 4:
        court_speeds = dict(
            estimate_court_speed(traj, estimate_homography(dataset.calibration), max_gap=settings.max_gap_frames)
        )
    rows = [[frame, speed, court_speeds.get(frame)] for frame, speed in speeds]
    path = out.write_table(
        "speeds", ("frame", "speed_px_s", "speed_m_s"), rows, {"speed_px_s": fmt_prob, "speed_m_s": fmt_prob}
    )
    report.outputs.append(path.name)
    report.counts.update({"rallies": len(dataset.rallies), "hits": len(hits), "speed_samples": len(speeds)})


_RUNNERS = {"decode": _decode, "filter": _filter, "qa": _qa, "analytics": _analytics}


def run_pipeline(
    dataset: MatchDataset,
    stages: Iterable[str],
    config: Optional[Config] = None,
    out: str | Path | None = None,
    fmt: str = "csv",
) -> dict:
    """Run the requested stages in the fixed order decode, filter, qa, analytics.

    A stage whose inputs are missing is skipped with its reason, and so is
    every stage that depends on it. Wall times stay out of run_report.json, so
    two runs over the same inputs write identical files.

    Returns:
        The run report: the seed plus one entry per requested stage, with
        each stage's wall time in ``wall_time_s``.
    """
    config = config or Config.default()
    requested = set(stages)
    unknown = sorted(requested - set(STAGES))
    if unknown:
        raise CoachError(f"Unknown stage(s): {', '.join(unknown)}")
    if not requested:
        return {"seed": config.seed, "stages": []}

    processor = OutputProcessor(out or config.outputs_path, fmt)
    state: dict = {}
    finished: dict[str, str] = {}
    reports: list[StageReport] = []
    for name in STAGES:
        if name not in requested:
            continue
        stage = StageReport(name=name)
        dependency = DEPENDS_ON.get(name)
        if dependency is not None and finished.get(dependency) != "ran":
            stage.status = "skipped"
            stage.reason = f"depends on '{dependency}', which did not run"
        else:
            collector = _WarningCollector()
            root = logging.getLogger()
            root.addHandler(collector)
            started = time.perf_counter()
            try:
                _RUNNERS[name](dataset, config, processor, state, stage)
            except _Skip as e:
                stage.status, stage.reason = "skipped", str(e)
            except CoachError as e:
                stage.status, stage.reason = "failed", str(e)
            finally:
                root.removeHandler(collector)
            stage.warnings = collector.messages
            stage.wall_time_s = time.perf_counter() - started
            logger.info(f"Stage {name}: {stage.status} in {stage.wall_time_s:.3f}s")
        if stage.status != "ran":
            logger.info(f"Stage {name} {stage.status}: {stage.reason}")
        finished[name] = stage.status
        reports.append(stage)

    processor.write_json("run_report", {"seed": config.seed, "stages": [s.to_dict(timing=False) for s in reports]})
    processor.write_manifest()
    return {"seed": config.seed, "stages": [s.to_dict() for s in reports]}


def export_chart_data(
    dataset: MatchDataset,
    out: str | Path | OutputProcessor,
    streak_length: int = 3,
) -> dict[str, int]:
    """Write the chart payloads and return {file name: record count}.

    Given a directory, a ``manifest.json`` listing the files is written as well.
    """
    processor = out if isinstance(out, OutputProcessor) else OutputProcessor(out, "json")
    rallies = dataset.rallies
    streaks = losing_streaks(rallies, streak_length)
    documents = [
        ("ball_types.json", ball_type_chart(rallies), len(rallies)),
        ("loss_reasons.json", loss_reason_chart(rallies, dataset.loss_reasons), len(rallies)),
        ("radar.json", [radar_chart(r) for r in rallies], len(rallies)),
        ("rally_series.json", rally_series(rallies), len(rallies)),
        (
            "losing_streaks.json",
            [
                {
                    "player": s.player,
                    "first_rally": s.first_rally,
                    "last_rally": s.last_rally,
                    "length": s.length,
                    "reasons": s.reasons,
                }
                for s in streaks
            ],
            len(streaks),
        ),
    ]
    counts = {}
    for name, payload, count in documents:
        processor.write_json(name, payload, count=count)
        counts[name] = count
    if not isinstance(out, OutputProcessor):
        processor.write_manifest()
    return counts
