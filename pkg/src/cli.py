"""Command-line surface: argument parsing, command handlers and exit codes."""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np
import pandas as pd

from .config import Config
from .court_geometry import Homography, assign_player_slot, estimate_homography, filter_players, reprojection_errors
from .dataset import CALIBRATION_SCHEMA, load_dataset, validate_dataset
from .detection_decoder import decode_frames
from .errors import (
    CoachError,
    DatasetValidationError,
    ExportError,
    SchemaViolation,
    SpecificationError,
    StreamError,
)
from .heatmap_codec import (
    ProbabilityVolume,
    cross_entropy_loss,
    divergent_pixels,
    encode_onehot,
    generate_heatmap,
    read_pgm,
    softmax_normalize,
    write_descriptor,
    write_pgm,
)
from .output_processor import FORMATS, OutputProcessor, fmt_coord, fmt_prob
from .pipeline import STAGES, export_chart_data, run_pipeline
from .pose_pipeline import build_features, cluster_skeletons, outlier_report
from .racket_imu import (
    classify_stroke,
    extract_features,
    load_model,
    read_imu_csv,
    save_model,
    segment_strokes,
    train_centroids,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_USAGE = 3


class ArgumentParser(argparse.ArgumentParser):
    """Bad arguments exit with the usage code instead of argparse's 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="coach", description="Badminton match analytics toolkit")
    parser.add_argument("--config", type=Path, help="JSON config file (see config.example.json)")
    parser.add_argument("--seed", type=int, help="override the clustering seed")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--format", choices=FORMATS, default="csv", help="table format")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    heatmap = commands.add_parser("heatmap", help="ground-truth heatmaps and the pixel-wise loss")
    heatmap_commands = heatmap.add_subparsers(dest="action", required=True)
    gen = heatmap_commands.add_parser("gen", help="write a heatmap PGM and its JSON descriptor")
    gen.add_argument("--center", type=float, nargs=2, metavar=("X", "Y"), required=True)
    gen.add_argument("--variance", type=float, help="override the configured variance")
    gen.add_argument("--name", default="heatmap", help="output file stem")
    loss = heatmap_commands.add_parser("loss", help="cross-entropy of a prediction against a truth heatmap")
    loss.add_argument("prediction", type=Path, help=".npy volume of shape (H, W, 256)")
    loss.add_argument("truth", type=Path, help="ground-truth PGM")
    loss.add_argument("--logits", action="store_true", help="apply the pixel-wise softmax first")

    decode = commands.add_parser("decode", help="heatmaps to shuttlecock detections")
    decode.add_argument("inputs", type=Path, nargs="+", help="<frame>.pgm files or directories of them")

    calibrate = commands.add_parser("calibrate", help="estimate the image-to-court homography")
    calibrate.add_argument("calibration", type=Path, help="calibration JSON with px/court pairs")

    filter_cmd = commands.add_parser("filter-players", help="keep player boxes standing on the court")
    filter_cmd.add_argument("dataset", type=Path)
    filter_cmd.add_argument("--homography", type=Path, help="9-number JSON array; default: estimate from calibration")

    qa = commands.add_parser("qa-skeletons", help="cluster skeletons and list outliers for relabeling")
    qa.add_argument("dataset", type=Path)
    qa.add_argument("--clusters", type=int, help="override the configured cluster count")

    stats = commands.add_parser("stats", help="rally statistics")
    stats_commands = stats.add_subparsers(dest="action", required=True)
    export = stats_commands.add_parser("export", help="write chart payloads")
    export.add_argument("dataset", type=Path)

    imu = commands.add_parser("imu", help="smart-racket stroke recognition")
    imu_commands = imu.add_subparsers(dest="action", required=True)
    segment = imu_commands.add_parser("segment", help="find stroke windows in an IMU log")
    segment.add_argument("stream", type=Path)
    train = imu_commands.add_parser("train", help="train the nearest-centroid stroke model")
    train.add_argument("manifest", type=Path, help="CSV with columns path,label")
    train.add_argument("--model", type=Path, required=True)
    classify = imu_commands.add_parser("classify", help="label the strokes of an IMU log")
    classify.add_argument("stream", type=Path)
    classify.add_argument("--model", type=Path, required=True)

    validate = commands.add_parser("validate", help="check a dataset directory")
    validate.add_argument("dataset", type=Path)

    run = commands.add_parser("run", help="run pipeline stages over a dataset")
    run.add_argument("dataset", type=Path)
    run.add_argument(
        "--stages",
        default=",".join(STAGES),
        help=f"comma-separated subset of {','.join(STAGES)}; empty for none",
    )
    return parser


class CoachCli:
    """Holds the resolved configuration and dispatches one command."""

    def __init__(self, config: Config, out: Path, fmt: str):
        self.config = config
        self.out = out
        self.fmt = fmt

    def output(self) -> OutputProcessor:
        return OutputProcessor(self.out, self.fmt)

    def _load(self, root: Path):
        return load_dataset(root, self.config.pose.keypoint_names, self.config.analytics.loss_reasons)

    def dispatch(self, args: argparse.Namespace) -> int:
        name = args.command.replace("-", "_")
        if getattr(args, "action", None):
            name += f"_{args.action}"
        return getattr(self, f"_cmd_{name}")(args)

    def _cmd_heatmap_gen(self, args: argparse.Namespace) -> int:
        spec = self.config.heatmap.spec()
        if args.variance is not None:
            spec = dataclasses.replace(spec, variance=args.variance)
        center = tuple(args.center)
        heatmap = generate_heatmap(center, spec)
        divergent_pixels(center, spec)
        self.out.mkdir(parents=True, exist_ok=True)
        pgm = self._write(lambda: write_pgm(heatmap, self.out / f"{args.name}.pgm"), self.out / f"{args.name}.pgm")
        self._write(lambda: write_descriptor(center, spec, self.out / f"{args.name}.json"), self.out / f"{args.name}.json")
        logger.info(f"Wrote {pgm}")
        return EXIT_OK

    def _cmd_heatmap_loss(self, args: argparse.Namespace) -> int:
        try:
            volume = np.load(args.prediction, allow_pickle=False)
        except (ValueError, EOFError) as e:
            raise SpecificationError(f"{args.prediction} is not a .npy array: {e}") from e
        pred = softmax_normalize(volume) if args.logits else ProbabilityVolume(probs=np.asarray(volume, dtype=np.float64))
        truth = encode_onehot(read_pgm(args.truth, self.config.heatmap.spec()))
        value = cross_entropy_loss(pred, truth, epsilon=self.config.loss_epsilon)
        print(fmt_prob(value))
        return EXIT_OK

    def _cmd_decode(self, args: argparse.Namespace) -> int:
        paths = []
        for item in args.inputs:
            paths.extend(sorted(item.glob("*.pgm")) if item.is_dir() else [item])
        heatmaps = {}
        for path in paths:
            if not path.stem.isdigit():
                raise SpecificationError(f"Heatmap file names must be <frame>.pgm, got {path.name}")
            heatmaps[int(path.stem)] = read_pgm(path, self.config.heatmap.spec())
        detections = decode_frames(heatmaps, self.config.decoder.params())
        rows = [[d.frame, d.status.value, *(d.position if d.found else (None, None))] for d in detections]
        self.output().write_table("detections", ("frame", "status", "x", "y"), rows, {"x": fmt_coord, "y": fmt_coord})
        return EXIT_OK

    def _cmd_calibrate(self, args: argparse.Namespace) -> int:
        with open(args.calibration, "r", encoding="utf-8") as f:
            payload = json.load(f)
        try:
            jsonschema.validate(instance=payload, schema=CALIBRATION_SCHEMA)
        except jsonschema.exceptions.ValidationError as e:
            column = "/".join(str(p) for p in e.path) or None
            raise DatasetValidationError([SchemaViolation(str(args.calibration), None, column, e.message)]) from e
        correspondences = [(tuple(p["px"]), tuple(p["court"])) for p in payload["points"]]
        h = estimate_homography(correspondences)
        errors = reprojection_errors(h, correspondences)
        logger.info(f"Homography from {len(correspondences)} points, max reprojection error {errors.max():.3g} m")
        self.output().write_json("homography", h.to_list(), count=9)
        return EXIT_OK

    def _cmd_filter_players(self, args: argparse.Namespace) -> int:
        dataset = self._load(args.dataset)
        if args.homography is not None:
            with open(args.homography, "r", encoding="utf-8") as f:
                h = Homography.from_list(json.load(f))
        else:
            h = estimate_homography(dataset.calibration)
        court = self.config.court.model()
        kept = filter_players(dataset.boxes(), h, court, singles=self.config.court.use_singles_bounds)
        rows = [
            [box.source_frame, assign_player_slot(p, court), box.x, box.y, box.w, box.h, p.x, p.y] for box, p in kept
        ]
        self.output().write_table(
            "players",
            ("frame", "player_slot", "x", "y", "w", "h", "court_x", "court_y"),
            rows,
            {c: fmt_coord for c in ("x", "y", "w", "h", "court_x", "court_y")},
        )
        return EXIT_OK

    def _cmd_qa_skeletons(self, args: argparse.Namespace) -> int:
        dataset = self._load(args.dataset)
        features = build_features(dataset.skeleton_pairs())
        k = args.clusters if args.clusters is not None else min(self.config.pose.clusters, max(len(features), 1))
        report = cluster_skeletons(
            features,
            k=k,
            outlier_percentile=self.config.pose.outlier_percentile,
            seed=self.config.seed,
            n_init=self.config.pose.n_init,
        )
        rows = outlier_report(report)
        self.output().write_table("outliers", ("frame", "player_slot", "distance"), rows, {"distance": fmt_prob})
        return EXIT_OK

    def _cmd_stats_export(self, args: argparse.Namespace) -> int:
        dataset = self._load(args.dataset)
        export_chart_data(dataset, self.out, self.config.analytics.losing_streak_length)
        return EXIT_OK

    def _segment(self, path: Path):
        settings = self.config.imu
        return segment_strokes(read_imu_csv(path), settings.threshold_g, settings.window_ms, settings.refractory_ms)

    def _cmd_imu_segment(self, args: argparse.Namespace) -> int:
        windows = self._segment(args.stream)
        rows = [[w.peak_time, w.peak_magnitude, w.t[0], w.t[-1], len(w)] for w in windows]
        self.output().write_table(
            "strokes",
            ("peak_t_ms", "peak_magnitude", "start_ms", "end_ms", "samples"),
            rows,
            {"peak_t_ms": fmt_prob, "peak_magnitude": fmt_prob, "start_ms": fmt_prob, "end_ms": fmt_prob},
        )
        return EXIT_OK

    def _cmd_imu_train(self, args: argparse.Namespace) -> int:
        manifest = pd.read_csv(args.manifest, dtype=str, keep_default_na=False)
        if list(manifest.columns) != ["path", "label"]:
            raise StreamError(f"{args.manifest}: header must be path,label")
        labeled = []
        for _, row in manifest.iterrows():
            path = Path(row["path"])
            if not path.is_absolute():
                path = args.manifest.parent / path
            for window in self._segment(path):
                labeled.append((extract_features(window), row["label"]))
        model = train_centroids(labeled)
        self._write(lambda: save_model(model, args.model), args.model)
        return EXIT_OK

    def _cmd_imu_classify(self, args: argparse.Namespace) -> int:
        model = load_model(args.model)
        rows = []
        for window in self._segment(args.stream):
            label, confidence = classify_stroke(model, extract_features(window))
            rows.append([window.peak_time, label.value, confidence])
        self.output().write_table(
            "classification",
            ("peak_t_ms", "label", "confidence"),
            rows,
            {"peak_t_ms": fmt_prob, "confidence": fmt_prob},
        )
        return EXIT_OK

    def _cmd_validate(self, args: argparse.Namespace) -> int:
        violations = validate_dataset(
            args.dataset, self.config.pose.keypoint_names, self.config.analytics.loss_reasons
        )
        for v in violations:
            print(v)
        if violations:
            logger.warning(f"{args.dataset}: {len(violations)} violation(s)")
            return EXIT_VALIDATION
        print(f"{args.dataset}: ok")
        return EXIT_OK

    def _cmd_run(self, args: argparse.Namespace) -> int:
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise SpecificationError(f"Unknown stage(s): {', '.join(unknown)}")
        dataset = self._load(args.dataset)
        report = run_pipeline(dataset, stages, self.config, self.out, self.fmt)
        for stage in report["stages"]:
            logger.info(f"{stage['name']}: {stage['status']}")
        return EXIT_OK

    @staticmethod
    def _write(write, path: Path):
        try:
            return write()
        except OSError as e:
            raise ExportError(path, str(e)) from e


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, SpecificationError):
        return EXIT_USAGE
    if isinstance(error, OSError):
        return EXIT_IO
    return EXIT_VALIDATION


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        config = Config.load(args.config) if args.config else Config.default()
        if args.seed is not None:
            config.seed = args.seed
        cli = CoachCli(config, args.out or Path(config.outputs_path), args.format)
        return cli.dispatch(args)
    except DatasetValidationError as e:
        for v in e.violations:
            print(v, file=sys.stderr)
        logger.error(str(e))
        return EXIT_VALIDATION
    except (CoachError, OSError, json.JSONDecodeError) as e:
        logger.error(str(e))
        return exit_code_for(e)
