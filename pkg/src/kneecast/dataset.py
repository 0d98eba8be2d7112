"""Windowed (input, target) example construction and dataset splits."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, SplitError
from .preprocess import (
    KIND_EMG,
    KIND_FORCE,
    KIND_KINEMATIC,
    PreprocessConfig,
    PreprocessedWindow,
    preprocess_recording_channels,
)
from .recordings import Recording

SCENARIOS = ("SIC", "DIC", "SIC_F", "DIC_F")
HORIZONS = (1, 26, 50)


def scenario_uses_kinematics(scenario: str) -> bool:
    return scenario.startswith("DIC")


def scenario_uses_forces(scenario: str) -> bool:
    return scenario.endswith("_F")


def validate_scenario(scenario: str) -> str:
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}, expected one of {SCENARIOS}")
    return scenario


@dataclass
class PreprocessedExample:
    """One network-ready window plus its future knee-angle targets.

    ``target`` holds the H knee angles (degrees, raw) at the output rate
    immediately after the window; ``last_knee_deg`` is the raw angle at
    the window's final sample, which the persistence baseline repeats.
    """

    inputs: PreprocessedWindow
    target: np.ndarray
    horizon: int
    last_knee_deg: float
    subject_id: str = "unknown"
    trial_id: str = "t0"
    condition: str = "normal"

    @property
    def key(self) -> tuple:
        return (self.subject_id, self.trial_id, self.inputs.end_index, self.horizon)


def make_examples(
    recording: Recording,
    scenario: str,
    horizon: int,
    window_spec=None,
    config: Optional[PreprocessConfig] = None,
) -> list[PreprocessedExample]:
    """Build one example per window whose full target tail exists.

    Inputs are preprocessed per window; targets are raw knee angles in
    degrees taken strictly after the window's last sample (no leakage).
    """
    validate_scenario(scenario)
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    if config is None:
        config = PreprocessConfig()
    if window_spec is not None:
        config = replace(config, window=window_spec)
    spec = config.window
    if recording.sample_rate_hz != spec.input_rate_hz:
        raise DataError(
            f"recording rate {recording.sample_rate_hz} Hz != window spec "
            f"input rate {spec.input_rate_hz} Hz")
    if scenario_uses_forces(scenario) and not recording.has_forces:
        raise ConfigError(
            f"scenario {scenario} requires interaction forces, but recording "
            f"{recording.subject_id}/{recording.trial_id} has none")

    decim = spec.decimation
    channels = [(KIND_EMG, ch) for ch in recording.emg]
    channels.append((KIND_KINEMATIC, recording.knee_angle_deg))
    if recording.has_forces:
        channels.append((KIND_FORCE, recording.force_thigh_n))
        channels.append((KIND_FORCE, recording.force_shank_n))

    # Keep only windows whose last target sample exists.
    n = recording.n_samples
    max_end = n - 1 - decim * horizon
    batch = preprocess_recording_channels(channels, config)
    ends = batch["end_indices"]
    keep = ends <= max_end
    ends = ends[keep]

    knee = recording.knee_angle_deg
    if np.any(np.abs(knee) > 180.0):
        raise DataError("knee angle exceeds +-180 degrees")
    examples = []
    step_offsets = decim * np.arange(1, horizon + 1)
    for i, end in enumerate(ends):
        window = PreprocessedWindow(
            emg=batch["emg"][i],
            kinematic=batch["kinematic"][i] if batch["kinematic"] is not None else None,
            forces=batch["forces"][i] if batch["forces"] is not None else None,
            end_index=int(end),
        )
        examples.append(PreprocessedExample(
            inputs=window,
            target=knee[end + step_offsets].copy(),
            horizon=horizon,
            last_knee_deg=float(knee[end]),
            subject_id=recording.subject_id,
            trial_id=recording.trial_id,
            condition=recording.condition,
        ))
    return examples


TRIAL_80_20 = "trial_80_20"
HALF_HALF = "half_half"
LEAVE_ONE_SUBJECT_OUT = "leave_one_subject_out"
CHRONOLOGICAL = "chronological"
SHUFFLED = "shuffled"


@dataclass(frozen=True)
class SplitPolicy:
    """How to partition examples: paper-style ratios plus ordering."""

    kind: str = TRIAL_80_20
    ordering: str = CHRONOLOGICAL
    seed: int = 0
    holdout_subject: Optional[str] = None

    def __post_init__(self):
        if self.kind not in (TRIAL_80_20, HALF_HALF, LEAVE_ONE_SUBJECT_OUT):
            raise ConfigError(f"unknown split kind {self.kind!r}")
        if self.ordering not in (CHRONOLOGICAL, SHUFFLED):
            raise ConfigError(f"unknown ordering {self.ordering!r}")


def _maybe_shuffle(examples: list, policy: SplitPolicy) -> list:
    if policy.ordering == SHUFFLED:
        order = np.random.default_rng(policy.seed).permutation(len(examples))
        return [examples[i] for i in order]
    return list(examples)


def split_examples(examples: Sequence[PreprocessedExample], policy: SplitPolicy) -> dict:
    """Partition examples into a disjoint, covering split.

    trial_80_20 -> {train, validation} (80/20 within each trial);
    half_half -> {finetune, evaluation} (first half fine-tunes);
    leave_one_subject_out -> {train, evaluation}.
    """
    if len(examples) < 2:
        raise SplitError(f"need at least 2 examples to split, got {len(examples)}")

    if policy.kind == TRIAL_80_20:
        trials: dict[tuple, list] = {}
        for ex in examples:
            trials.setdefault((ex.subject_id, ex.trial_id), []).append(ex)
        train, val = [], []
        for group in trials.values():
            group = _maybe_shuffle(group, policy)
            n_train = max(1, int(np.floor(0.8 * len(group))))
            train.extend(group[:n_train])
            val.extend(group[n_train:])
        if not val:
            raise SplitError("trial_80_20 produced an empty validation set")
        return {"train": train, "validation": val}

    if policy.kind == HALF_HALF:
        ordered = _maybe_shuffle(list(examples), policy)
        n_fine = (len(ordered) + 1) // 2
        return {"finetune": ordered[:n_fine], "evaluation": ordered[n_fine:]}

    subjects = list(dict.fromkeys(ex.subject_id for ex in examples))
    holdout = policy.holdout_subject if policy.holdout_subject is not None else subjects[-1]
    if holdout not in subjects:
        raise SplitError(f"holdout subject {holdout!r} not present in examples")
    train = [ex for ex in examples if ex.subject_id != holdout]
    evaluation = [ex for ex in examples if ex.subject_id == holdout]
    if not train:
        raise SplitError("leave-one-subject-out training set is empty")
    return {"train": train, "evaluation": evaluation}


def check_disjoint(*parts: Sequence[PreprocessedExample]) -> None:
    """Raise SplitError if any example identity appears in two parts."""
    seen: dict[tuple, int] = {}
    for idx, part in enumerate(parts):
        for ex in part:
            prev = seen.get(ex.key)
            if prev is not None and prev != idx:
                raise SplitError(f"example {ex.key} leaked between split parts")
            seen[ex.key] = idx


def window_target_overlaps(
    train: Sequence[PreprocessedExample], evaluation: Sequence[PreprocessedExample],
    window_samples: int = 2000, decimation: int = 10,
) -> int:
    """Count training windows whose input span overlaps an evaluation target span.

    Chronological splits must report zero; shuffled splits may not.
    """
    count = 0
    spans: dict[tuple, list] = {}
    for ev in evaluation:
        start = ev.inputs.end_index + decimation
        spans.setdefault((ev.subject_id, ev.trial_id), []).append(
            (start, ev.inputs.end_index + decimation * ev.horizon))
    for tr in train:
        t0 = tr.inputs.end_index - window_samples + 1
        t1 = tr.inputs.end_index
        for s0, s1 in spans.get((tr.subject_id, tr.trial_id), ()):
            if t0 <= s1 and s0 <= t1:
                count += 1
                break
    return count


CACHE_FORMAT = "kneecast-cache"
CACHE_VERSION = 1


def save_example_cache(path, examples: Sequence[PreprocessedExample],
                       config: PreprocessConfig, scenario: str) -> None:
    """Write preprocessed examples as a versioned .npz cache (atomically)."""
    import io
    import json

    from .ioutil import write_bytes_atomic

    if not examples:
        raise ConfigError("refusing to cache zero examples")
    meta = {
        "format": CACHE_FORMAT,
        "version": CACHE_VERSION,
        "scenario": scenario,
        "horizon": examples[0].horizon,
        "preprocess": config.to_dict(),
    }
    arrays = {
        "meta_json": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        "emg": np.stack([ex.inputs.emg for ex in examples]),
        "kinematic": np.stack([ex.inputs.kinematic for ex in examples]),
        "target": np.stack([ex.target for ex in examples]),
        "end_index": np.array([ex.inputs.end_index for ex in examples]),
        "last_knee_deg": np.array([ex.last_knee_deg for ex in examples]),
        "subject_id": np.array([ex.subject_id for ex in examples]),
        "trial_id": np.array([ex.trial_id for ex in examples]),
        "condition": np.array([ex.condition for ex in examples]),
    }
    if examples[0].inputs.forces is not None:
        arrays["forces"] = np.stack([ex.inputs.forces for ex in examples])
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    write_bytes_atomic(path, buf.getvalue())


def load_example_cache(path) -> tuple[list[PreprocessedExample], dict]:
    """Read a cache written by save_example_cache."""
    import json

    with np.load(path, allow_pickle=False) as data:
        try:
            meta = json.loads(bytes(data["meta_json"]).decode("utf-8"))
        except (KeyError, ValueError):
            raise DataError(f"{path}: not an example cache") from None
        if meta.get("format") != CACHE_FORMAT or meta.get("version") != CACHE_VERSION:
            raise DataError(f"{path}: unsupported cache format {meta.get('format')!r} "
                            f"v{meta.get('version')!r}")
        horizon = int(meta["horizon"])
        forces = data["forces"] if "forces" in data.files else None
        examples = []
        for i in range(data["emg"].shape[0]):
            window = PreprocessedWindow(
                emg=data["emg"][i],
                kinematic=data["kinematic"][i],
                forces=forces[i] if forces is not None else None,
                end_index=int(data["end_index"][i]),
            )
            examples.append(PreprocessedExample(
                inputs=window,
                target=data["target"][i],
                horizon=horizon,
                last_knee_deg=float(data["last_knee_deg"][i]),
                subject_id=str(data["subject_id"][i]),
                trial_id=str(data["trial_id"][i]),
                condition=str(data["condition"][i]),
            ))
    return examples, meta


def batch_arrays(examples: Sequence[PreprocessedExample]) -> dict:
    """Stack a list of examples into model-ready arrays."""
    if not examples:
        raise ConfigError("cannot batch zero examples")
    out = {
        "emg": np.stack([ex.inputs.emg for ex in examples]),
        "target_deg": np.stack([ex.target for ex in examples]),
        "last_knee_deg": np.array([ex.last_knee_deg for ex in examples]),
    }
    if examples[0].inputs.kinematic is not None:
        out["kinematic"] = np.stack([ex.inputs.kinematic for ex in examples])
    if examples[0].inputs.forces is not None:
        out["forces"] = np.stack([ex.inputs.forces for ex in examples])
    return out
