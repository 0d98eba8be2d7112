"""Causal per-window preprocessing: 1000 Hz raw signals to 100 Hz network windows.

EMG channels: high-pass, rectify, low-pass, decimate, standardize.
Kinematic and force channels: low-pass, decimate, standardize (no rectification).
All filtering restarts from zero state at each window (no look-ahead); an
opt-in streaming mode filters the continuous stream once instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, InvalidSpecError, ShapeError
from .filters import FilterSpec, HIGH_PASS, LOW_PASS, apply_filter, design_butterworth

KIND_EMG = "emg"
KIND_KINEMATIC = "kinematic"
KIND_FORCE = "force"
CHANNEL_KINDS = (KIND_EMG, KIND_KINEMATIC, KIND_FORCE)


@dataclass(frozen=True)
class WindowSpec:
    """Sliding-window geometry: 2 s windows hopping every 40 ms by default."""

    window_ms: int = 2000
    stride_ms: int = 40
    input_rate_hz: int = 1000
    output_rate_hz: int = 100

    def __post_init__(self):
        if self.input_rate_hz <= 0 or self.output_rate_hz <= 0:
            raise InvalidSpecError("sample rates must be positive")
        if self.input_rate_hz % self.output_rate_hz != 0:
            raise InvalidSpecError(
                f"input rate {self.input_rate_hz} must be an integer multiple "
                f"of output rate {self.output_rate_hz}"
            )
        if self.window_ms <= 0 or self.stride_ms <= 0:
            raise InvalidSpecError("window_ms and stride_ms must be positive")
        for rate in (self.input_rate_hz, self.output_rate_hz):
            if (self.window_ms * rate) % 1000 != 0:
                raise InvalidSpecError(
                    f"window_ms={self.window_ms} is not a whole number of samples at {rate} Hz"
                )
        if (self.stride_ms * self.input_rate_hz) % 1000 != 0:
            raise InvalidSpecError(
                f"stride_ms={self.stride_ms} is not a whole number of samples "
                f"at {self.input_rate_hz} Hz"
            )

    @property
    def window_samples(self) -> int:
        return self.window_ms * self.input_rate_hz // 1000

    @property
    def stride_samples(self) -> int:
        return self.stride_ms * self.input_rate_hz // 1000

    @property
    def output_samples(self) -> int:
        return self.window_ms * self.output_rate_hz // 1000

    @property
    def decimation(self) -> int:
        return self.input_rate_hz // self.output_rate_hz


@dataclass(frozen=True)
class PreprocessConfig:
    """Filter cutoffs and the zero-variance guard for standardization."""

    emg_highpass_hz: float = 20.0
    emg_lowpass_hz: float = 5.0
    kin_lowpass_hz: float = 6.0
    filter_order: int = 2
    std_eps: float = 1e-8
    window: WindowSpec = field(default_factory=WindowSpec)

    def __post_init__(self):
        for name, cutoff in (("emg_lowpass_hz", self.emg_lowpass_hz),
                             ("kin_lowpass_hz", self.kin_lowpass_hz)):
            if not 3.0 <= cutoff <= 6.0:
                raise InvalidSpecError(f"{name} must be in [3, 6] Hz, got {cutoff}")
        if self.emg_highpass_hz <= 0:
            raise InvalidSpecError("emg_highpass_hz must be positive")

    def to_dict(self) -> dict:
        return {
            "emg_highpass_hz": self.emg_highpass_hz,
            "emg_lowpass_hz": self.emg_lowpass_hz,
            "kin_lowpass_hz": self.kin_lowpass_hz,
            "filter_order": self.filter_order,
            "std_eps": self.std_eps,
            "window": {
                "window_ms": self.window.window_ms,
                "stride_ms": self.window.stride_ms,
                "input_rate_hz": self.window.input_rate_hz,
                "output_rate_hz": self.window.output_rate_hz,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        w = d.get("window", {})
        return cls(
            emg_highpass_hz=d.get("emg_highpass_hz", 20.0),
            emg_lowpass_hz=d.get("emg_lowpass_hz", 5.0),
            kin_lowpass_hz=d.get("kin_lowpass_hz", 6.0),
            filter_order=d.get("filter_order", 2),
            std_eps=d.get("std_eps", 1e-8),
            window=WindowSpec(**w) if w else WindowSpec(),
        )


@dataclass
class PreprocessedWindow:
    """One network-ready window: standardized 100 Hz rows per channel.

    ``end_index`` is the sample index (at the input rate) of the window's
    last sample in the source recording.
    """

    emg: np.ndarray
    kinematic: Optional[np.ndarray]
    forces: Optional[np.ndarray]
    end_index: int


def segment_stream(recording_length_ms: float, spec: WindowSpec) -> np.ndarray:
    """End indices (input-rate samples) of every full window in a recording.

    Window k covers samples [k*stride, k*stride + window); recordings
    shorter than one window yield an empty list.
    """
    n_samples = int(recording_length_ms * spec.input_rate_hz / 1000)
    w, s = spec.window_samples, spec.stride_samples
    if n_samples < w:
        return np.zeros(0, dtype=np.intp)
    n_windows = (n_samples - w) // s + 1
    return np.arange(n_windows, dtype=np.intp) * s + (w - 1)


class SignalPipeline:
    """Designed filter bank plus the per-window processing recipe.

    Cascades are designed once and applied statelessly per window, so one
    pipeline instance may preprocess many windows (or recordings) and is
    safe to share across threads.

    Window filtering is referenced to the window's first sample: the
    cascade runs on (x - x[0]) from zero state and the steady-state
    response to the x[0] step is added back. This is causal, removes the
    per-window startup transient, and makes constant windows map to
    exactly constant outputs (which the zero-variance guard then zeros).
    """

    def __init__(self, config: PreprocessConfig = PreprocessConfig()):
        self.config = config
        fs = config.window.input_rate_hz
        order = config.filter_order
        self.emg_highpass = design_butterworth(
            FilterSpec(HIGH_PASS, order, config.emg_highpass_hz, fs))
        self.emg_lowpass = design_butterworth(
            FilterSpec(LOW_PASS, order, config.emg_lowpass_hz, fs))
        self.kin_lowpass = design_butterworth(
            FilterSpec(LOW_PASS, order, config.kin_lowpass_hz, fs))

    @staticmethod
    def _filter_referenced(cascade, rows: np.ndarray, dc_gain: float) -> np.ndarray:
        first = rows[..., :1]
        y = apply_filter(cascade, rows - first)
        return y + dc_gain * first if dc_gain != 0.0 else y

    def emg_envelope(self, rows: np.ndarray) -> np.ndarray:
        """Filtered, rectified, smoothed EMG at the input rate (pre-decimation)."""
        y = self._filter_referenced(self.emg_highpass, rows, 0.0)
        y = np.abs(y)
        return self._filter_referenced(self.emg_lowpass, y, 1.0)

    def _standardize(self, rows: np.ndarray) -> np.ndarray:
        mu = rows.mean(axis=-1, keepdims=True)
        sd = rows.std(axis=-1, keepdims=True)
        return (rows - mu) / np.maximum(sd, self.config.std_eps)

    def _decimate(self, rows: np.ndarray) -> np.ndarray:
        d = self.config.window.decimation
        return rows[..., d - 1 :: d]

    def process_rows(self, rows: np.ndarray, kind: str) -> np.ndarray:
        """Run one channel kind over stacked window rows (..., window_samples)."""
        if kind not in CHANNEL_KINDS:
            raise InvalidSpecError(f"unknown channel kind {kind!r}")
        if rows.shape[-1] != self.config.window.window_samples:
            raise ShapeError(
                f"window length {rows.shape[-1]} != expected "
                f"{self.config.window.window_samples}"
            )
        if not np.all(np.isfinite(rows)):
            raise DataError("non-finite sample in window")
        if kind == KIND_EMG:
            y = self.emg_envelope(rows)
        else:
            y = self._filter_referenced(self.kin_lowpass, rows, 1.0)
        return self._standardize(self._decimate(y))


def preprocess_window(
    raw: np.ndarray,
    channel_kinds: Sequence[str],
    config: PreprocessConfig = PreprocessConfig(),
    end_index: Optional[int] = None,
) -> PreprocessedWindow:
    """Preprocess one raw window of shape (window_samples, C).

    ``channel_kinds[c]`` labels column c as emg, kinematic, or force. At
    most one kinematic column and zero or two force columns are accepted.
    """
    raw = np.asarray(raw, dtype=np.float64)
    spec = config.window
    if raw.ndim != 2 or raw.shape[0] != spec.window_samples:
        raise ShapeError(
            f"raw window must be ({spec.window_samples}, C), got {raw.shape}"
        )
    if raw.shape[1] != len(channel_kinds):
        raise ShapeError(
            f"{raw.shape[1]} columns but {len(channel_kinds)} channel kinds"
        )
    pipeline = SignalPipeline(config)
    grouped = {k: [] for k in CHANNEL_KINDS}
    for c, kind in enumerate(channel_kinds):
        if kind not in CHANNEL_KINDS:
            raise InvalidSpecError(f"unknown channel kind {kind!r}")
        grouped[kind].append(raw[:, c])

    out = {}
    for kind, cols in grouped.items():
        if cols:
            out[kind] = pipeline.process_rows(np.stack(cols), kind)

    kin = out.get(KIND_KINEMATIC)
    if kin is not None:
        if kin.shape[0] != 1:
            raise ShapeError(f"expected one kinematic column, got {kin.shape[0]}")
        kin = kin[0]
    forces = out.get(KIND_FORCE)
    if forces is not None and forces.shape[0] != 2:
        raise ShapeError(f"expected two force columns, got {forces.shape[0]}")
    return PreprocessedWindow(
        emg=out.get(KIND_EMG, np.zeros((0, spec.output_samples))),
        kinematic=kin,
        forces=forces,
        end_index=spec.window_samples - 1 if end_index is None else end_index,
    )


def window_rows(signal: np.ndarray, spec: WindowSpec, n_windows: Optional[int] = None) -> np.ndarray:
    """Stack a recording-length signal into (n_windows, window_samples) rows."""
    x = np.ascontiguousarray(signal, dtype=np.float64)
    w, s = spec.window_samples, spec.stride_samples
    if x.shape[-1] < w:
        return np.zeros((0, w))
    rows = sliding_window_view(x, w, axis=-1)[..., ::s, :]
    if n_windows is not None:
        rows = rows[..., :n_windows, :]
    return rows


def preprocess_recording_channels(
    channels: Sequence[tuple[str, np.ndarray]],
    config: PreprocessConfig = PreprocessConfig(),
    n_windows: Optional[int] = None,
    streaming: bool = False,
) -> dict:
    """Window and preprocess whole channels at once (vectorized over windows).

    Returns a dict with stacked arrays: ``emg`` (n_win, n_emg, 200),
    ``kinematic`` (n_win, 200) or None, ``forces`` (n_win, 2, 200) or None,
    and ``end_indices``. With ``streaming=True`` the filters run once over
    the continuous stream (state carried across hops) before windowing;
    the default re-filters each window from zero state.
    """
    spec = config.window
    pipeline = SignalPipeline(config)
    length = channels[0][1].shape[0]
    ends = segment_stream(length * 1000.0 / spec.input_rate_hz, spec)
    if n_windows is not None:
        ends = ends[:n_windows]
    per_kind: dict[str, list[np.ndarray]] = {k: [] for k in CHANNEL_KINDS}
    for kind, x in channels:
        if x.shape[0] != length:
            raise ShapeError("all channels must have equal length")
        if not np.all(np.isfinite(x)):
            raise DataError("non-finite sample in channel")
        if streaming:
            if kind == KIND_EMG:
                filt = pipeline.emg_envelope(x)
            else:
                filt = pipeline._filter_referenced(pipeline.kin_lowpass, x, 1.0)
            rows = window_rows(filt, spec, len(ends))
            out = pipeline._standardize(pipeline._decimate(rows))
        else:
            rows = window_rows(x, spec, len(ends))
            out = pipeline.process_rows(rows, kind)
        per_kind[kind].append(out)

    def stacked(kind):
        if not per_kind[kind]:
            return None
        return np.stack(per_kind[kind], axis=1)  # (n_win, n_chan, 200)

    emg = stacked(KIND_EMG)
    kin = stacked(KIND_KINEMATIC)
    forces = stacked(KIND_FORCE)
    return {
        "emg": emg if emg is not None else np.zeros((len(ends), 0, spec.output_samples)),
        "kinematic": kin[:, 0, :] if kin is not None else None,
        "forces": forces,
        "end_indices": ends,
    }
