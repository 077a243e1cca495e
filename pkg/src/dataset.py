"""Match label files: schemas, loading with cross-checks, validation and saving.

A dataset directory holds ``meta.json`` (required) and, optionally,
``ball.csv``, ``boxes.csv``, ``skeletons.jsonl``, ``rallies.csv``,
``strokes.csv``, ``calibration.json`` and ``heatmaps/<frame>.pgm``.
Label coordinates are stored at the original video resolution and rescaled
per axis to the working grid on load; heatmaps are already on the working grid.
"""

import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import jsonschema
import pandas as pd

from .court_geometry import BoundingBox, Correspondence
from .detection_decoder import BallDetection
from .errors import DatasetValidationError, SchemaViolation, SpecificationError
from .heatmap_codec import rescale_point
from .output_processor import fmt_coord, fmt_prob
from .pose_pipeline import MPII_KEYPOINTS, PLAYER_SLOTS, Keypoint, Skeleton
from .rally_analytics import DEFAULT_LOSS_REASONS, BallType, Rally, Stroke, Trajectory

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

Rescale = Callable[[tuple[float, float]], tuple[float, float]]

META = "meta.json"
BALL = "ball.csv"
BOXES = "boxes.csv"
SKELETONS = "skeletons.jsonl"
RALLIES = "rallies.csv"
STROKES = "strokes.csv"
CALIBRATION = "calibration.json"
HEATMAPS = "heatmaps"

COLUMNS = {
    BALL: ("frame", "visible", "x", "y"),
    BOXES: ("frame", "player_slot", "x", "y", "w", "h", "score"),
    RALLIES: ("rally_id", "start_frame", "end_frame", "winner", "loss_reason"),
    STROKES: ("rally_id", "hit_frame", "player", "ball_type"),
}

_RESOLUTION = {
    "type": "array",
    "items": {"type": "integer", "minimum": 1},
    "minItems": 2,
    "maxItems": 2,
}
_PAIR = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

META_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "original_resolution", "working_resolution", "fps"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "original_resolution": _RESOLUTION,
        "working_resolution": _RESOLUTION,
        "fps": {"type": "number", "exclusiveMinimum": 0},
        "loss_reasons": {"type": "array", "items": {"type": "string", "minLength": 1}, "uniqueItems": True},
    },
}

CALIBRATION_SCHEMA = {
    "type": "object",
    "required": ["points"],
    "properties": {
        "points": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["px", "court"],
                "properties": {"px": _PAIR, "court": _PAIR},
            },
        }
    },
}

SKELETON_SCHEMA = {
    "type": "object",
    "required": ["frame", "player_slot", "keypoints"],
    "properties": {
        "frame": {"type": "integer", "minimum": 0},
        "player_slot": {"enum": list(PLAYER_SLOTS)},
        "keypoints": {
            "type": "array",
            "items": {
                "type": "array",
                "prefixItems": [{"type": "number"}, {"type": "number"}, {"enum": [0, 1, True, False]}],
                "minItems": 3,
                "maxItems": 3,
            },
        },
        "racket": _PAIR,
    },
}


@dataclass(frozen=True)
class BallLabel:
    visible: bool
    position: Optional[tuple[float, float]] = None


@dataclass
class FrameLabel:
    frame: int
    ball: Optional[BallLabel] = None
    boxes: list[tuple[str, BoundingBox]] = field(default_factory=list)
    skeletons: list[Skeleton] = field(default_factory=list)


@dataclass
class MatchDataset:
    """One labeled match on the working grid."""
    original_resolution: tuple[int, int] = (1280, 720)
    working_resolution: tuple[int, int] = (640, 480)
    fps: float = 30.0
    frames: dict[int, FrameLabel] = field(default_factory=dict)
    rallies: list[Rally] = field(default_factory=list)
    calibration: list[Correspondence] = field(default_factory=list)
    loss_reasons: list[str] = field(default_factory=lambda: list(DEFAULT_LOSS_REASONS))
    heatmaps: dict[int, Path] = field(default_factory=dict)
    root: Optional[Path] = None

    def frame(self, index: int) -> FrameLabel:
        if index not in self.frames:
            self.frames[index] = FrameLabel(frame=index)
        return self.frames[index]

    def to_working(self, point: tuple[float, float]) -> tuple[float, float]:
        return rescale_point(point, self.original_resolution, self.working_resolution)

    def to_original(self, point: tuple[float, float]) -> tuple[float, float]:
        return rescale_point(point, self.working_resolution, self.original_resolution)

    def boxes(self) -> list[BoundingBox]:
        return [box for f in sorted(self.frames) for _, box in self.frames[f].boxes]

    def ball_detections(self) -> list[BallDetection]:
        detections = []
        for f in sorted(self.frames):
            ball = self.frames[f].ball
            if ball is None:
                continue
            if ball.visible and ball.position is not None:
                detections.append(BallDetection.at(f, *ball.position))
            else:
                detections.append(BallDetection.absent(f))
        return detections

    def trajectory(self) -> Trajectory:
        return Trajectory.from_detections(self.ball_detections(), self.fps)

    def skeleton_pairs(self) -> list[tuple[Skeleton, BoundingBox]]:
        """Skeletons with the labeled box of the same frame and slot."""
        pairs = []
        for f in sorted(self.frames):
            label = self.frames[f]
            by_slot = {slot: box for slot, box in label.boxes}
            for s in sorted(label.skeletons, key=lambda s: s.player_slot):
                if s.player_slot in by_slot:
                    pairs.append((s, by_slot[s.player_slot]))
                else:
                    logger.warning(f"Skeleton in frame {f} ({s.player_slot}) has no matching box")
        return pairs


class _Reader:
    """Collects violations while parsing one dataset directory."""

    def __init__(self, root: Path, keypoint_names: Sequence[str]):
        self.root = root
        self.keypoint_names = tuple(keypoint_names)
        self.violations: list[SchemaViolation] = []

    def report(self, file: str, line: Optional[int], column: Optional[str], message: str) -> None:
        self.violations.append(SchemaViolation(file=file, line=line, column=column, message=message))

    def integer(self, raw: str, file: str, line: int, column: str, minimum: Optional[int] = 0) -> Optional[int]:
        try:
            value = int(raw)
        except ValueError:
            self.report(file, line, column, f"expected an integer, got '{raw}'")
            return None
        if minimum is not None and value < minimum:
            self.report(file, line, column, f"must be >= {minimum}, got {value}")
            return None
        return value

    def number(self, raw: str, file: str, line: int, column: str) -> Optional[float]:
        try:
            value = float(raw)
        except ValueError:
            self.report(file, line, column, f"expected a number, got '{raw}'")
            return None
        if value != value or value in (float("inf"), float("-inf")):
            self.report(file, line, column, f"expected a finite number, got '{raw}'")
            return None
        return value

    def table(self, name: str) -> Optional[list[tuple[int, dict[str, str]]]]:
        """Rows as (file line, record); None when the file is absent or unreadable."""
        path = self.root / name
        if not path.exists():
            return None
        try:
            frame = pd.read_csv(path, dtype=str, keep_default_na=False)
        except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
            self.report(name, None, None, f"unreadable CSV ({e})")
            return None
        expected = COLUMNS[name]
        if tuple(frame.columns) != expected:
            self.report(name, 1, None, f"header must be {','.join(expected)}, got {','.join(map(str, frame.columns))}")
            return None
        return [(idx + 2, {k: str(v).strip() for k, v in row.items()}) for idx, row in frame.iterrows()]

    def json_document(self, name: str, schema: dict) -> Optional[Any]:
        path = self.root / name
        if not path.exists():
            return None
        try:
            with open(path, "r", encoding="utf-8") as f:
                payload = json.load(f)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            self.report(name, getattr(e, "lineno", None), None, f"invalid JSON ({e})")
            return None
        if not self.schema_ok(payload, schema, name, None):
            return None
        return payload

    def schema_ok(self, payload: Any, schema: dict, file: str, line: Optional[int]) -> bool:
        errors = sorted(jsonschema.Draft202012Validator(schema).iter_errors(payload), key=lambda e: list(e.path))
        for e in errors:
            where = "/".join(str(p) for p in e.path) or None
            self.report(file, line, where, e.message)
        return not errors


def _read(
    root: Path, keypoint_names: Sequence[str], loss_reasons: Sequence[str]
) -> tuple[MatchDataset, list[SchemaViolation]]:
    reader = _Reader(root, keypoint_names)
    dataset = MatchDataset(root=root)

    if not (root / META).exists():
        reader.report(META, None, None, "missing (meta.json is required)")
        return dataset, reader.violations
    meta = reader.json_document(META, META_SCHEMA)
    if meta is None:
        return dataset, reader.violations
    dataset.original_resolution = tuple(meta["original_resolution"])
    dataset.working_resolution = tuple(meta["working_resolution"])
    dataset.fps = float(meta["fps"])
    dataset.loss_reasons = list(meta.get("loss_reasons", loss_reasons))
    to_working = dataset.to_working

    labeled_frames: set[int] = set()
    _read_ball(reader, dataset, to_working, labeled_frames)
    _read_boxes(reader, dataset, to_working, labeled_frames)
    _read_skeletons(reader, dataset, to_working, labeled_frames)
    frame_files = any((root / name).exists() for name in (BALL, BOXES, SKELETONS))
    _read_rallies(reader, dataset, labeled_frames if frame_files else None)
    _read_calibration(reader, dataset, to_working)

    heatmap_dir = root / HEATMAPS
    if heatmap_dir.is_dir():
        for path in sorted(heatmap_dir.glob("*.pgm")):
            if path.stem.isdigit():
                dataset.heatmaps[int(path.stem)] = path
            else:
                reader.report(f"{HEATMAPS}/{path.name}", None, None, "heatmap file names must be <frame>.pgm")
    return dataset, reader.violations


def _read_ball(reader: _Reader, dataset: MatchDataset, to_working: Rescale, labeled: set[int]) -> None:
    rows = reader.table(BALL)
    for line, row in rows or []:
        frame = reader.integer(row["frame"], BALL, line, "frame")
        visible = row["visible"]
        if visible not in ("0", "1"):
            reader.report(BALL, line, "visible", f"must be 0 or 1, got '{visible}'")
            continue
        position = None
        if row["x"] or row["y"]:
            x = reader.number(row["x"], BALL, line, "x")
            y = reader.number(row["y"], BALL, line, "y")
            if x is None or y is None:
                continue
            position = to_working((x, y))
        elif visible == "1":
            reader.report(BALL, line, "x", "a visible ball needs x and y")
            continue
        if frame is None:
            continue
        if frame in dataset.frames and dataset.frames[frame].ball is not None:
            reader.report(BALL, line, "frame", f"second ball label for frame {frame}")
            continue
        dataset.frame(frame).ball = BallLabel(visible=visible == "1", position=position)
        labeled.add(frame)


def _read_boxes(reader: _Reader, dataset: MatchDataset, to_working: Rescale, labeled: set[int]) -> None:
    rows = reader.table(BOXES)
    for line, row in rows or []:
        frame = reader.integer(row["frame"], BOXES, line, "frame")
        slot = row["player_slot"]
        if slot not in PLAYER_SLOTS:
            reader.report(BOXES, line, "player_slot", f"unknown player slot '{slot}'")
            continue
        values = [reader.number(row[c], BOXES, line, c) for c in ("x", "y", "w", "h")]
        score = reader.number(row["score"], BOXES, line, "score") if row["score"] else 1.0
        if frame is None or score is None or any(v is None for v in values):
            continue
        x, y, w, h = values
        if not (w > 0 and h > 0):
            reader.report(BOXES, line, "w", f"box size must be positive, got {w}x{h}")
            continue
        (x, y), (w, h) = to_working((x, y)), to_working((w, h))
        box = BoundingBox(x=x, y=y, w=w, h=h, score=score, source_frame=frame)
        dataset.frame(frame).boxes.append((slot, box))
        labeled.add(frame)


def _read_skeletons(reader: _Reader, dataset: MatchDataset, to_working: Rescale, labeled: set[int]) -> None:
    path = reader.root / SKELETONS
    if not path.exists():
        return
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    for line, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            record = json.loads(text)
        except json.JSONDecodeError as e:
            reader.report(SKELETONS, line, None, f"invalid JSON ({e.msg})")
            continue
        if not reader.schema_ok(record, SKELETON_SCHEMA, SKELETONS, line):
            continue
        if len(record["keypoints"]) != len(reader.keypoint_names):
            reader.report(
                SKELETONS, line, "keypoints",
                f"expected {len(reader.keypoint_names)} keypoints, got {len(record['keypoints'])}",
            )
            continue
        keypoints = tuple(Keypoint(*to_working((x, y)), visible=bool(v)) for x, y, v in record["keypoints"])
        racket = record.get("racket")
        try:
            skeleton = Skeleton(
                frame=record["frame"],
                player_slot=record["player_slot"],
                keypoints=keypoints,
                racket=to_working(tuple(racket)) if racket else None,
            )
        except SpecificationError as e:
            reader.report(SKELETONS, line, "keypoints", str(e))
            continue
        label = dataset.frame(skeleton.frame)
        if any(s.player_slot == skeleton.player_slot for s in label.skeletons):
            reader.report(SKELETONS, line, "player_slot", f"second {skeleton.player_slot} skeleton in frame {skeleton.frame}")
            continue
        label.skeletons.append(skeleton)
        labeled.add(skeleton.frame)


def _read_rallies(reader: _Reader, dataset: MatchDataset, labeled: Optional[set[int]]) -> None:
    headers: dict[str, tuple[int, int, int, str, str]] = {}
    order: list[str] = []
    for line, row in reader.table(RALLIES) or []:
        rally_id = row["rally_id"]
        start = reader.integer(row["start_frame"], RALLIES, line, "start_frame")
        end = reader.integer(row["end_frame"], RALLIES, line, "end_frame")
        if not rally_id:
            reader.report(RALLIES, line, "rally_id", "empty rally id")
            continue
        if rally_id in headers:
            reader.report(RALLIES, line, "rally_id", f"duplicate rally id '{rally_id}'")
            continue
        if row["winner"] not in PLAYER_SLOTS:
            reader.report(RALLIES, line, "winner", f"unknown winner '{row['winner']}'")
            continue
        if row["loss_reason"] not in dataset.loss_reasons:
            reader.report(RALLIES, line, "loss_reason", f"'{row['loss_reason']}' is not in the loss-reason vocabulary")
            continue
        if start is None or end is None:
            continue
        if start > end:
            reader.report(RALLIES, line, "end_frame", f"rally {rally_id} ends ({end}) before it starts ({start})")
            continue
        if order:
            previous = headers[order[-1]]
            if start <= previous[2]:
                reader.report(
                    RALLIES, line, "start_frame",
                    f"rally {rally_id} overlaps or precedes rally {order[-1]} (frames {previous[1]}-{previous[2]})",
                )
                continue
        headers[rally_id] = (line, start, end, row["winner"], row["loss_reason"])
        order.append(rally_id)

    strokes: dict[str, list[tuple[int, Stroke]]] = {rid: [] for rid in order}
    for line, row in reader.table(STROKES) or []:
        rally_id = row["rally_id"]
        hit = reader.integer(row["hit_frame"], STROKES, line, "hit_frame")
        if rally_id not in headers:
            reader.report(STROKES, line, "rally_id", f"unknown rally '{rally_id}'")
            continue
        if row["player"] not in PLAYER_SLOTS:
            reader.report(STROKES, line, "player", f"unknown player '{row['player']}'")
            continue
        try:
            ball_type = BallType.parse(row["ball_type"])
        except SpecificationError as e:
            reader.report(STROKES, line, "ball_type", str(e))
            continue
        if hit is None:
            continue
        _, start, end, _, _ = headers[rally_id]
        if not start <= hit <= end:
            reader.report(
                STROKES, line, "hit_frame",
                f"rally {rally_id}: hit frame {hit} outside rally range {start}-{end}",
            )
            continue
        if labeled is not None and hit not in labeled:
            reader.report(STROKES, line, "hit_frame", f"rally {rally_id}: hit frame {hit} has no frame label row")
        strokes[rally_id].append((line, Stroke(hit_frame=hit, player=row["player"], ball_type=ball_type)))

    for rally_id in order:
        _, start, end, winner, reason = headers[rally_id]
        rally = Rally(
            rally_id=rally_id,
            start_frame=start,
            end_frame=end,
            strokes=tuple(s for _, s in strokes[rally_id]),
            winner=winner,
            loss_reason=reason,
        )
        problems = rally.problems()
        if problems:
            first_line = strokes[rally_id][0][0] if strokes[rally_id] else None
            for problem in problems:
                reader.report(STROKES, first_line, None, f"rally {rally_id}: {problem}")
            continue
        dataset.rallies.append(rally)


def _read_calibration(reader: _Reader, dataset: MatchDataset, to_working: Rescale) -> None:
    payload = reader.json_document(CALIBRATION, CALIBRATION_SCHEMA)
    if payload is None:
        return
    dataset.calibration = [
        (to_working(tuple(p["px"])), (float(p["court"][0]), float(p["court"][1]))) for p in payload["points"]
    ]


def validate_dataset(
    root: str | Path,
    keypoint_names: Sequence[str] = MPII_KEYPOINTS,
    loss_reasons: Sequence[str] = DEFAULT_LOSS_REASONS,
) -> list[SchemaViolation]:
    """Every violation in the directory. Files are only read.

    ``loss_reasons`` is the vocabulary used when meta.json does not name one.
    """
    _, violations = _read(Path(root), keypoint_names, loss_reasons)
    return violations


def load_dataset(
    root: str | Path,
    keypoint_names: Sequence[str] = MPII_KEYPOINTS,
    loss_reasons: Sequence[str] = DEFAULT_LOSS_REASONS,
) -> MatchDataset:
    """Parse, cross-check and rescale a dataset directory.

    Raises:
        DatasetValidationError: one or more violations; nothing is partially accepted.
    """
    root = Path(root)
    dataset, violations = _read(root, keypoint_names, loss_reasons)
    if violations:
        raise DatasetValidationError(violations)
    logger.info(
        f"Loaded {root}: {len(dataset.frames)} labeled frame(s), {len(dataset.rallies)} rallies, "
        f"{len(dataset.calibration)} calibration point(s), {len(dataset.heatmaps)} heatmap(s)"
    )
    return dataset


def _write_csv(path: Path, columns: Sequence[str], rows: list[list[str]]) -> None:
    pd.DataFrame(rows, columns=list(columns), dtype=object).to_csv(path, index=False, lineterminator="\n")


def _write_json(path: Path, payload: Any) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def save_dataset(dataset: MatchDataset, root: str | Path) -> Path:
    """Write the dataset back at original resolution, two decimals per coordinate."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    to_original = dataset.to_original
    _write_json(
        root / META,
        {
            "schema_version": SCHEMA_VERSION,
            "original_resolution": list(dataset.original_resolution),
            "working_resolution": list(dataset.working_resolution),
            "fps": dataset.fps,
            "loss_reasons": list(dataset.loss_reasons),
        },
    )

    frames = [dataset.frames[f] for f in sorted(dataset.frames)]
    if frames:
        ball_rows = []
        for label in frames:
            if label.ball is None:
                continue
            x, y = ("", "") if label.ball.position is None else tuple(map(fmt_coord, to_original(label.ball.position)))
            ball_rows.append([str(label.frame), "1" if label.ball.visible else "0", x, y])
        _write_csv(root / BALL, COLUMNS[BALL], ball_rows)

        box_rows = [
            [
                str(label.frame), slot,
                *map(fmt_coord, to_original((b.x, b.y)) + to_original((b.w, b.h))),
                fmt_prob(b.score),
            ]
            for label in frames
            for slot, b in label.boxes
        ]
        _write_csv(root / BOXES, COLUMNS[BOXES], box_rows)

        with open(root / SKELETONS, "w", encoding="utf-8", newline="\n") as f:
            for label in frames:
                for s in label.skeletons:
                    record = {
                        "frame": s.frame,
                        "player_slot": s.player_slot,
                        "keypoints": [
                            [*(round(v, 2) for v in to_original((kp.x, kp.y))), 1 if kp.visible else 0]
                            for kp in s.keypoints
                        ],
                    }
                    if s.racket is not None:
                        record["racket"] = [round(v, 2) for v in to_original(s.racket)]
                    f.write(json.dumps(record) + "\n")

    if dataset.rallies:
        _write_csv(
            root / RALLIES,
            COLUMNS[RALLIES],
            [[r.rally_id, str(r.start_frame), str(r.end_frame), r.winner, r.loss_reason] for r in dataset.rallies],
        )
        _write_csv(
            root / STROKES,
            COLUMNS[STROKES],
            [[r.rally_id, str(s.hit_frame), s.player, s.ball_type.value] for r in dataset.rallies for s in r.strokes],
        )

    if dataset.calibration:
        _write_json(
            root / CALIBRATION,
            {
                "points": [
                    {"px": [round(v, 2) for v in to_original(px)], "court": [float(court[0]), float(court[1])]}
                    for px, court in dataset.calibration
                ]
            },
        )

    if dataset.heatmaps:
        (root / HEATMAPS).mkdir(exist_ok=True)
        for frame, source in sorted(dataset.heatmaps.items()):
            target = root / HEATMAPS / f"{frame}.pgm"
            if Path(source).resolve() != target.resolve():
                shutil.copyfile(source, target)

    logger.info(f"Saved dataset to {root}")
    return root
