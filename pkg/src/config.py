"""Configuration management for the badminton coaching toolkit."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional
import json

from .court_geometry import CourtModel
from .detection_decoder import DecoderConfig
from .errors import SpecificationError
from .heatmap_codec import LOSS_EPSILON, HeatmapSpec
from .pose_pipeline import MPII_KEYPOINTS
from .rally_analytics import DEFAULT_LOSS_REASONS


@dataclass
class HeatmapConfig:
    """Ground-truth heatmap grid."""
    width: int = 640
    height: int = 480
    variance: float = 10.0
    amplitude: int = 255

    def spec(self) -> HeatmapSpec:
        return HeatmapSpec(width=self.width, height=self.height, variance=self.variance, amplitude=self.amplitude)


@dataclass
class DecoderSection:
    """Binarisation and circle-search settings."""
    threshold: int = 128
    min_radius: int = 2
    max_radius: int = 10
    gradient_threshold: float = 100.0
    accumulator_threshold: int = 10
    min_center_distance: float = 10.0
    min_component_size: int = 3
    mode: str = "circle"  # circle, argmax

    def params(self) -> DecoderConfig:
        return DecoderConfig(
            threshold=self.threshold,
            min_radius=self.min_radius,
            max_radius=self.max_radius,
            gradient_threshold=self.gradient_threshold,
            accumulator_threshold=self.accumulator_threshold,
            min_center_distance=self.min_center_distance,
            min_component_size=self.min_component_size,
            mode=self.mode,
        )


@dataclass
class CourtConfig:
    """Court size in meters."""
    length: float = 13.40
    width: float = 6.10
    margin: float = 0.0
    use_singles_bounds: bool = False

    def model(self) -> CourtModel:
        return CourtModel(length=self.length, width=self.width, margin=self.margin)


@dataclass
class PoseConfig:
    """Skeleton QA settings."""
    keypoint_names: list[str] = field(default_factory=lambda: list(MPII_KEYPOINTS))
    clusters: int = 8
    outlier_percentile: float = 0.95
    enlarge_factor: float = 1.5
    n_init: int = 10


@dataclass
class AnalyticsConfig:
    """Rally statistics and trajectory settings."""
    loss_reasons: list[str] = field(default_factory=lambda: list(DEFAULT_LOSS_REASONS))
    smoothing_window: int = 3
    angle_threshold_deg: float = 60.0
    refractory_frames: int = 5
    max_gap_frames: int = 3
    losing_streak_length: int = 3


@dataclass
class ImuConfig:
    """Smart-racket stroke segmentation."""
    threshold_g: float = 3.0
    window_ms: float = 400.0
    refractory_ms: float = 300.0


SECTIONS = {
    "heatmap": HeatmapConfig,
    "decoder": DecoderSection,
    "court": CourtConfig,
    "pose": PoseConfig,
    "analytics": AnalyticsConfig,
    "imu": ImuConfig,
}


def _section(cls, data: dict):
    """Build a section from JSON, keeping defaults for absent keys."""
    defaults = cls()
    known = {name: data.get(name, getattr(defaults, name)) for name in defaults.__dataclass_fields__}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise SpecificationError(f"Unknown {cls.__name__} key(s): {', '.join(unknown)}")
    return cls(**known)


@dataclass
class Config:
    """Main configuration container."""
    heatmap: HeatmapConfig = field(default_factory=HeatmapConfig)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    court: CourtConfig = field(default_factory=CourtConfig)
    pose: PoseConfig = field(default_factory=PoseConfig)
    analytics: AnalyticsConfig = field(default_factory=AnalyticsConfig)
    imu: ImuConfig = field(default_factory=ImuConfig)
    outputs_path: str = "./outputs"
    seed: int = 0
    loss_epsilon: float = LOSS_EPSILON
    _config_path: Optional[Path] = field(default=None, repr=False)

    @classmethod
    def default(cls) -> "Config":
        return cls()

    @classmethod
    def load(cls, path: str | Path = "config.json") -> "Config":
        """Load configuration from JSON file."""
        config_path = Path(path)
        with open(config_path, "r", encoding="utf-8") as f:
            data = json.load(f)

        sections = {name: _section(section_cls, data.get(name, {})) for name, section_cls in SECTIONS.items()}
        return cls(
            **sections,
            outputs_path=data.get("outputs_path", "./outputs"),
            seed=int(data.get("seed", 0)),
            loss_epsilon=float(data.get("loss_epsilon", LOSS_EPSILON)),
            _config_path=config_path,
        )

    def to_dict(self) -> dict:
        data = {name: dict(vars(getattr(self, name))) for name in SECTIONS}
        data["outputs_path"] = self.outputs_path
        data["seed"] = self.seed
        data["loss_epsilon"] = self.loss_epsilon
        return data

    def save(self, path: str | Path | None = None) -> None:
        """Save configuration to JSON file."""
        target = Path(path) if path is not None else self._config_path
        if target is None:
            raise ValueError("No config path set")

        with open(target, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
        self._config_path = target
