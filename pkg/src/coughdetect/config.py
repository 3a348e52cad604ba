"""Pipeline configuration with JSON round-tripping.

Defaults are the standard pipeline constants. Secondary choices (SVM C,
kernel constants, ReliefF neighbours, filterbank layouts) are exposed here
too.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path


@dataclass
class SignalConfig:
    sample_rate: int = 11025
    frame_length: int = 825
    hop_length: int = 617
    subframe_length: int = 275
    band_edges_hz: list = field(default_factory=lambda: [0.0, 500.0, 1000.0, 1500.0, 2000.0])
    group_size: int = 5
    group_stride: int = 4


@dataclass
class AuxConfig:
    n_fft: int = 1024
    hr_min_lag_ms: float = 2.5
    hr_max_lag_ms: float = 20.0
    mfcc_filters: int = 30
    mfcc_range_hz: list = field(default_factory=lambda: [0.0, 4000.0])
    mfcc_root: float = 0.5
    mpeg7_range_hz: list = field(default_factory=lambda: [62.5, 4000.0])
    mpeg7_bands: int = 13
    ti_exclusion_bins: int = 5
    ti_range_hz: list = field(default_factory=lambda: [62.5, 4000.0])
    chroma_ref_hz: float = 440.0
    chroma_range_hz: list = field(default_factory=lambda: [62.5, 4000.0])
    ssch_filters: int = 30
    ssch_width_bark: float = 3.0
    ssch_range_hz: list = field(default_factory=lambda: [0.0, 4000.0])
    ssch_bins: int = 38
    n_cepstra: int = 13


@dataclass
class SelectionConfig:
    fraction: float = 0.10
    n_trials: int = 5
    top_set: int = 30
    n_keep: int = 29
    min_votes: int = 3
    k_neighbors: int = 10
    mle_k_min: int = 6
    mle_k_max: int = 12


@dataclass
class RepresentationConfig:
    kind: str = "avgsd"
    k_pos: int = 16
    k_neg: int = 16
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-6


@dataclass
class SvmConfig:
    C: float = 1.0
    class_weight: str = "balanced"
    gamma: str | float = "auto"
    coef0: float = 1.0
    tol: float = 1e-3
    max_iter: int = 1_000_000


@dataclass
class EvaluationConfig:
    scheme: str = "block5"
    n_blocks: int = 5
    guard_groups: int = 0
    train_mode: str = "ensemble"


@dataclass
class PipelineConfig:
    seed: int = 0
    signal: SignalConfig = field(default_factory=SignalConfig)
    aux: AuxConfig = field(default_factory=AuxConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    representation: RepresentationConfig = field(default_factory=RepresentationConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return _build(cls, data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _build(cls, data):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory if callable(known[name].default_factory) else None
        proto = default() if default is not None else None
        if is_dataclass(proto) and isinstance(value, dict):
            kwargs[name] = _build(type(proto), value)
        else:
            kwargs[name] = value
    return cls(**kwargs)
