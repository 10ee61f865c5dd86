"""Pipeline configuration: every tunable in one serializable place.

Defaults reproduce the standard detector; anything the underlying papers
and datasheets leave unspecified (thresholds, gates, windows) lives here so
experiments are reproducible and sweepable.  The JSON dump always carries
every field, making the file self-documenting; loading merges a (possibly
partial) user file over the defaults and rejects unknown keys.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from smokesonar.cnn import CnnConfig, TrainConfig
from smokesonar.errors import ConfigError
from smokesonar.frontend import ChirpConfig

CONFIG_VERSION = 1


@dataclass
class BandpassConfig:
    low: float = 19800.0
    high: float = 22200.0
    transition: float = 600.0


@dataclass
class SyncConfig:
    max_evaluations: int = 50
    energy_gate: float = 2.0
    scan_limit_s: float = 3.0  # exhaustive-fallback search span


@dataclass
class RangingConfig:
    # threshold calibrated for envelope values: the envelope of pure noise
    # runs hotter than the signed correlation (Rayleigh vs Gaussian), so the
    # pipeline default sits above the generic 0.3
    min_rcc: float = 0.45
    min_separation: int = 12  # lags, ~4.3 cm
    blanking: int = 8  # lags masked at zero range (LOS leakage)
    skirt_window: int = 32  # lags: skirt span where ghosts can clear min_rcc
    skirt_ratio: float = 0.7  # relative strength to survive on a skirt


@dataclass
class TrackingConfig:
    gate: float = 0.02  # m per frame
    # a hand sweeping past a stronger peak is occluded (merged) for the time
    # it spends inside the ~8.6 cm resolution cell: ~0.45 s at put-up speeds,
    # so the gap tolerance must ride that out
    max_gap: int = 40  # missed frames: rides out ~0.35 s of transit occlusion
    min_duration: float = 3.0  # s
    static_threshold: float = 0.003  # m movement range
    max_distance: float = 1.0  # m, obstacles beyond are ignored
    phase_unwrap: bool = True  # snap samples to the carrier half-wavelength branch
    min_fill: float = 0.5  # fraction of spanned frames a surviving track must hit
    stitch: bool = True  # rejoin occlusion-split fragments before pruning


@dataclass
class RespirationConfig:
    analysis_start_s: float = 120.0  # settle time before breath analysis
    window_s: float = 60.0
    retry_hop_s: float = 60.0
    amplitude_cap: float = 0.025  # m, breath candidates move less than this
    band_low: float = 0.16  # Hz
    band_high: float = 0.6
    dominance_ratio: float = 0.4
    trough_alpha: float = 0.25  # depth threshold: mean - alpha * std
    trough_spread_floor: float = 5e-4  # m; below this the depth filter is moot
    min_trough_gap_s: float = 2.0
    depth_cutoff: float = 0.014  # m; deeper than this is deep/smoking
    asym_threshold: float = 0.3  # relative inhale/exhale slope difference
    slope_window_s: float = 1.0
    baseline_peaks: int = 10
    copilot_cluster_gap: float = 0.15  # m between breath-path clusters


@dataclass
class SegmentationConfig:
    window_s: float = 5.0
    hop_s: float = 3.0
    grid_size: int = 96
    positive_threshold: float = 0.5


@dataclass
class FusionConfig:
    mode: str = "HBp3"  # Hp3 | Bp3 | HBp | HBp3
    lam: int = 3
    composite_window_s: float = 8.0
    interval_tolerance: float = 0.25
    interval_min_s: float = 10.0
    interval_max_s: float = 120.0
    episode_merge_gap_s: float = 120.0
    match_window_s: float = 30.0

    def __post_init__(self):
        if self.mode not in ("Hp3", "Bp3", "HBp", "HBp3"):
            raise ConfigError(f"unknown fusion mode {self.mode!r}")


@dataclass
class PipelineConfig:
    chirp: ChirpConfig = field(default_factory=ChirpConfig)
    bandpass: BandpassConfig = field(default_factory=BandpassConfig)
    sync: SyncConfig = field(default_factory=SyncConfig)
    ranging: RangingConfig = field(default_factory=RangingConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    respiration: RespirationConfig = field(default_factory=RespirationConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    cnn: CnnConfig = field(default_factory=CnnConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    speed_of_sound: float = 343.0

    def to_dict(self) -> dict:
        raw = dataclasses.asdict(self)
        raw["version"] = CONFIG_VERSION
        return raw

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {
    "chirp": ChirpConfig,
    "bandpass": BandpassConfig,
    "sync": SyncConfig,
    "ranging": RangingConfig,
    "tracking": TrackingConfig,
    "respiration": RespirationConfig,
    "segmentation": SegmentationConfig,
    "cnn": CnnConfig,
    "training": TrainConfig,
    "fusion": FusionConfig,
}


def config_from_dict(raw: dict) -> PipelineConfig:
    raw = dict(raw)
    version = raw.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            known = {f.name for f in dataclasses.fields(cls)}
            extra = set(value) - known
            if extra:
                raise ConfigError(f"unknown keys in config section {key!r}: {sorted(extra)}")
            defaults = dataclasses.asdict(cls())
            defaults.update(value)
            kwargs[key] = cls(**defaults)
        elif key == "speed_of_sound":
            kwargs[key] = float(value)
        else:
            raise ConfigError(f"unknown config section {key!r}")
    return PipelineConfig(**kwargs)


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(raw)


def dump_config(path, cfg: PipelineConfig | None = None) -> None:
    cfg = cfg or PipelineConfig()
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
