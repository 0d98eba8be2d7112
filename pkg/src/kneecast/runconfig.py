"""Run configuration files: a published JSON schema plus object builders.

Every CLI run that takes ``--config`` validates the file against
RUNCONFIG_SCHEMA before any work happens.
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .dataset import SCENARIOS, SplitPolicy
from .errors import ConfigError
from .models import ModelHyper
from .preprocess import PreprocessConfig, WindowSpec
from .stages import STAGE_KINDS, Stage
from .training import TrainConfig

_SPLIT_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["trial_80_20", "half_half", "leave_one_subject_out"]},
        "ordering": {"enum": ["chronological", "shuffled"]},
        "seed": {"type": "integer"},
        "holdout_subject": {"type": ["string", "null"]},
    },
    "additionalProperties": False,
}

_TRAIN_SCHEMA = {
    "type": "object",
    "properties": {
        "batch_size": {"type": "integer", "minimum": 1},
        "max_epochs": {"type": "integer", "minimum": 0},
        "patience": {"type": "integer", "minimum": 1},
        "base_lr": {"type": "number", "exclusiveMinimum": 0},
        "lr_scale": {"type": "number", "exclusiveMinimum": 0},
        "beta1": {"type": "number"},
        "beta2": {"type": "number"},
        "eps": {"type": "number"},
        "clip_norm": {"type": "number"},
        "seed": {"type": "integer"},
    },
    "additionalProperties": False,
}

_HYPER_SCHEMA = {
    "type": "object",
    "properties": {k: {"type": "integer", "minimum": 1} for k in (
        "conv1_filters", "conv1_kernel", "conv1_stride",
        "conv2_filters", "conv2_kernel", "conv2_stride",
        "lstm1_hidden", "lstm2_hidden", "kin_lstm_hidden",
        "attn_dim", "force_feature_dim", "horizon", "input_len")},
    "additionalProperties": False,
}

_STAGE_SCHEMA = {
    "type": "object",
    "required": ["name", "kind"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "kind": {"enum": list(STAGE_KINDS)},
        "scenario": {"enum": list(SCENARIOS)},
        "horizon": {"type": "integer", "minimum": 1},
        "source": {"type": ["string", "null"]},
        "data": {"type": "array", "items": {"type": "string"}},
        "split": _SPLIT_SCHEMA,
        "train": _TRAIN_SCHEMA,
        "graft_seed": {"type": "integer"},
    },
    "additionalProperties": False,
}

RUNCONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "kneecast run configuration",
    "type": "object",
    "properties": {
        "seed": {"type": "integer"},
        "scenario": {"enum": list(SCENARIOS)},
        "horizon": {"type": "integer", "minimum": 1},
        "data": {"type": "array", "items": {"type": "string"}},
        "output_dir": {"type": "string"},
        "window": {
            "type": "object",
            "properties": {k: {"type": "integer", "minimum": 1} for k in (
                "window_ms", "stride_ms", "input_rate_hz", "output_rate_hz")},
            "additionalProperties": False,
        },
        "filters": {
            "type": "object",
            "properties": {
                "emg_highpass_hz": {"type": "number"},
                "emg_lowpass_hz": {"type": "number"},
                "kin_lowpass_hz": {"type": "number"},
                "filter_order": {"type": "integer", "minimum": 1, "maximum": 8},
            },
            "additionalProperties": False,
        },
        "hyper": _HYPER_SCHEMA,
        "train": _TRAIN_SCHEMA,
        "split": _SPLIT_SCHEMA,
        "stages": {"type": "array", "items": _STAGE_SCHEMA, "minItems": 1},
    },
    "additionalProperties": False,
}


class RunConfig:
    """Validated view of a configuration file."""

    def __init__(self, raw: dict, base_dir: Path = Path(".")):
        try:
            jsonschema.validate(raw, RUNCONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"config does not match schema: {exc.message}") from None
        self.raw = raw
        self.base_dir = base_dir
        self.seed = raw.get("seed", 0)
        self.scenario = raw.get("scenario", "SIC")
        self.horizon = raw.get("horizon", 1)
        self.output_dir = (Path(self._resolve(raw["output_dir"]))
                           if "output_dir" in raw else None)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"no such config file: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls(raw, base_dir=path.parent)

    def _resolve(self, p: str) -> str:
        path = Path(p)
        return str(path if path.is_absolute() else self.base_dir / path)

    @property
    def data_paths(self) -> list[str]:
        return [self._resolve(p) for p in self.raw.get("data", [])]

    def window_spec(self) -> WindowSpec:
        return WindowSpec(**self.raw.get("window", {}))

    def preprocess_config(self) -> PreprocessConfig:
        filt = dict(self.raw.get("filters", {}))
        return PreprocessConfig(window=self.window_spec(), **filt)

    def hyper(self) -> ModelHyper:
        base = self.raw.get("hyper", {})
        merged = {"horizon": self.horizon,
                  "input_len": self.window_spec().output_samples}
        merged.update(base)
        return ModelHyper.from_dict({**ModelHyper().to_dict(), **merged})

    def train_config(self, **overrides) -> TrainConfig:
        merged = {"seed": self.seed}
        merged.update(self.raw.get("train", {}))
        merged.update(overrides)
        return TrainConfig(**merged)

    def split_policy(self) -> SplitPolicy:
        d = dict(self.raw.get("split", {}))
        d.setdefault("seed", self.seed)
        return SplitPolicy(**d)

    def stages(self) -> list[Stage]:
        out = []
        for entry in self.raw.get("stages", []):
            split = dict(entry.get("split", {}))
            split.setdefault("seed", self.seed)
            train_d = dict(entry.get("train", {}))
            train_d.setdefault("seed", self.seed)
            out.append(Stage(
                name=entry["name"],
                kind=entry["kind"],
                scenario=entry.get("scenario", "SIC"),
                horizon=entry.get("horizon", self.horizon),
                source=entry.get("source"),
                data=[self._resolve(p) for p in entry.get("data", [])],
                split=SplitPolicy(**split),
                train=TrainConfig(**train_d),
                graft_seed=entry.get("graft_seed", self.seed),
            ))
        return out

    @property
    def has_stages(self) -> bool:
        return bool(self.raw.get("stages"))


def dump_schema() -> str:
    return json.dumps(RUNCONFIG_SCHEMA, indent=2) + "\n"
