"""Recording container and the CSV + JSON-sidecar ingestion format.

CSV schema (header required, UTF-8, '.' decimal separator):
    time_ms, emg_bf, emg_rf, emg_st, emg_vm, knee_angle_deg
    [, hip_angle_deg, force_thigh_n, force_shank_n]
Sidecar metadata (``<stem>.meta.json`` next to the CSV):
    {"subject_id": ..., "condition": ..., "trial_id": ..., "sample_rate_hz": ...}
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, SchemaError
from .ioutil import write_text_atomic

EMG_CHANNEL_NAMES = ("BF", "RF", "ST", "VM")
REQUIRED_COLUMNS = ("time_ms", "emg_bf", "emg_rf", "emg_st", "emg_vm", "knee_angle_deg")
OPTIONAL_COLUMNS = ("hip_angle_deg", "force_thigh_n", "force_shank_n")
CONDITIONS = ("normal", "abnormal", "exo")


@dataclass
class Recording:
    """A timestamped multichannel capture at a fixed sample rate.

    ``emg`` is (4, N) in canonical BF, RF, ST, VM order, in mV. Knee and
    hip angles are degrees; interaction forces are Newtons.
    """

    sample_rate_hz: int
    emg: np.ndarray
    knee_angle_deg: np.ndarray
    hip_angle_deg: Optional[np.ndarray] = None
    force_thigh_n: Optional[np.ndarray] = None
    force_shank_n: Optional[np.ndarray] = None
    subject_id: str = "unknown"
    condition: str = "normal"
    trial_id: str = "t0"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.emg.ndim != 2 or self.emg.shape[0] != 4:
            raise SchemaError(f"emg must be (4, N), got {self.emg.shape}")
        n = self.emg.shape[1]
        if n < 1:
            raise DataError("recording must contain at least one sample")
        for name, arr in self.channel_items():
            if arr.shape[-1] != n:
                raise DataError(f"channel {name} length {arr.shape[-1]} != {n}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite sample in channel {name}")
        if self.condition not in CONDITIONS:
            raise DataError(f"condition must be one of {CONDITIONS}, got {self.condition!r}")
        if (self.force_thigh_n is None) != (self.force_shank_n is None):
            raise SchemaError("force channels must be present together")

    def channel_items(self):
        items = [("emg", self.emg), ("knee_angle_deg", self.knee_angle_deg)]
        for name in ("hip_angle_deg", "force_thigh_n", "force_shank_n"):
            arr = getattr(self, name)
            if arr is not None:
                items.append((name, arr))
        return items

    @property
    def n_samples(self) -> int:
        return self.emg.shape[1]

    @property
    def duration_ms(self) -> float:
        return self.n_samples * 1000.0 / self.sample_rate_hz

    @property
    def has_forces(self) -> bool:
        return self.force_thigh_n is not None

    @property
    def forces(self) -> Optional[np.ndarray]:
        if not self.has_forces:
            return None
        return np.stack([self.force_thigh_n, self.force_shank_n])


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def load_recording(path, schema=REQUIRED_COLUMNS) -> Recording:
    """Parse a CSV recording, validating against the documented schema.

    The sample rate comes from the sidecar when present, otherwise it is
    inferred as round(1000 / median time step).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
    for col in schema:
        if col not in header:
            raise SchemaError(f"{path}: missing required column {col!r}")
    for col in header:
        if col not in REQUIRED_COLUMNS and col not in OPTIONAL_COLUMNS:
            raise SchemaError(f"{path}: unknown column {col!r}")

    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: unparseable cell ({exc})") from None
    if data.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    if data.shape[1] != len(header):
        raise SchemaError(
            f"{path}: {data.shape[1]} data columns but {len(header)} header names")

    cols = {name: data[:, i] for i, name in enumerate(header)}
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        row, col = bad[0]
        raise DataError(
            f"{path}: non-finite value at data row {int(row)}, column {header[int(col)]!r}")

    t = cols["time_ms"]
    dt = np.diff(t)
    if t.size > 1 and np.any(dt <= 0):
        idx = int(np.argmax(dt <= 0))
        raise DataError(f"{path}: non-monotonic time column at data row {idx + 1}")

    meta = {}
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        with open(sidecar, encoding="utf-8") as fh:
            meta = json.load(fh)
    if "sample_rate_hz" in meta:
        rate = int(meta["sample_rate_hz"])
    elif t.size > 1:
        rate = int(round(1000.0 / float(np.median(dt))))
    else:
        rate = 1000

    def opt(name):
        return cols.get(name)

    return Recording(
        sample_rate_hz=rate,
        emg=np.stack([cols["emg_bf"], cols["emg_rf"], cols["emg_st"], cols["emg_vm"]]),
        knee_angle_deg=cols["knee_angle_deg"],
        hip_angle_deg=opt("hip_angle_deg"),
        force_thigh_n=opt("force_thigh_n"),
        force_shank_n=opt("force_shank_n"),
        subject_id=str(meta.get("subject_id", path.stem)),
        condition=str(meta.get("condition", "normal")),
        trial_id=str(meta.get("trial_id", "t0")),
    )


def save_recording(recording: Recording, path) -> None:
    """Write a Recording as schema CSV plus its metadata sidecar (atomically)."""
    path = Path(path)
    header = list(REQUIRED_COLUMNS)
    columns = [
        np.arange(recording.n_samples) * (1000.0 / recording.sample_rate_hz),
        *recording.emg,
        recording.knee_angle_deg,
    ]
    for name, arr in (("hip_angle_deg", recording.hip_angle_deg),
                      ("force_thigh_n", recording.force_thigh_n),
                      ("force_shank_n", recording.force_shank_n)):
        if arr is not None:
            header.append(name)
            columns.append(arr)

    lines = [",".join(header)]
    mat = np.column_stack(columns)
    for row in mat:
        lines.append(",".join(format(v, ".10g") for v in row))
    write_text_atomic(path, "\n".join(lines) + "\n")

    meta = {
        "subject_id": recording.subject_id,
        "condition": recording.condition,
        "trial_id": recording.trial_id,
        "sample_rate_hz": recording.sample_rate_hz,
    }
    write_text_atomic(_sidecar_path(path), json.dumps(meta, indent=2) + "\n")
