"""Causal Butterworth filters as cascaded biquad (second-order) sections.

Coefficients are designed from the analog Butterworth prototype via the
bilinear transform with frequency pre-warping. Application is strictly
causal: output sample i depends only on input samples 0..i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import sosfilt

from .errors import InvalidSpecError, DataError

HIGH_PASS = "high-pass"
LOW_PASS = "low-pass"

_MAX_ORDER = 8


@dataclass(frozen=True)
class FilterSpec:
    """Design request for a Butterworth filter."""

    kind: str
    order: int
    cutoff_hz: float
    sample_rate_hz: float

    def __post_init__(self):
        if self.kind not in (HIGH_PASS, LOW_PASS):
            raise InvalidSpecError(f"unknown filter kind {self.kind!r}")
        if not isinstance(self.order, int) or not 1 <= self.order <= _MAX_ORDER:
            raise InvalidSpecError(
                f"order must be an integer in 1..{_MAX_ORDER}, got {self.order!r}"
            )
        if self.sample_rate_hz <= 0:
            raise InvalidSpecError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not 0 < self.cutoff_hz < self.sample_rate_hz / 2:
            raise InvalidSpecError(
                f"cutoff {self.cutoff_hz} Hz must lie in (0, {self.sample_rate_hz / 2}) Hz"
            )


class BiquadCascade:
    """A chain of second-order sections with per-section delay state.

    ``sos`` has shape (n_sections, 6) in [b0, b1, b2, 1, a1, a2] layout.
    The two delay registers per section are the direct-form II transposed
    state. One cascade instance serves one stream at a time; use
    :meth:`copy` for concurrent streams.
    """

    def __init__(self, sos: np.ndarray):
        sos = np.asarray(sos, dtype=np.float64)
        if sos.ndim != 2 or sos.shape[1] != 6:
            raise InvalidSpecError(f"sos must have shape (n, 6), got {sos.shape}")
        if not np.allclose(sos[:, 3], 1.0):
            raise InvalidSpecError("sections must be normalized so a0 = 1")
        for a1, a2 in sos[:, 4:6]:
            roots = np.roots([1.0, a1, a2])
            if np.any(np.abs(roots) >= 1.0):
                raise InvalidSpecError(
                    f"unstable section (a1={a1}, a2={a2}): pole outside unit circle"
                )
        self.sos = sos
        self.state = np.zeros((sos.shape[0], 2))

    @property
    def n_sections(self) -> int:
        return self.sos.shape[0]

    def reset(self) -> None:
        """Zero all delay registers."""
        self.state[:] = 0.0

    def copy(self) -> "BiquadCascade":
        other = BiquadCascade(self.sos.copy())
        other.state = self.state.copy()
        return other

    def process(self, samples) -> np.ndarray:
        """Filter a 1-D chunk, carrying state across calls (streaming mode)."""
        x = np.asarray(samples, dtype=np.float64)
        if x.size == 0:
            return np.zeros(0)
        y, self.state = sosfilt(self.sos, x, zi=self.state)
        return y

    def response(self, freq_hz, sample_rate_hz: float) -> np.ndarray:
        """Complex frequency response H(e^{j 2 pi f / fs})."""
        w = 2.0 * np.pi * np.asarray(freq_hz, dtype=np.float64) / sample_rate_hz
        z1 = np.exp(-1j * w)
        z2 = z1 * z1
        h = np.ones_like(z1, dtype=np.complex128)
        for b0, b1, b2, _, a1, a2 in self.sos:
            h = h * (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2)
        return h


def design_butterworth(spec: FilterSpec) -> BiquadCascade:
    """Design a Butterworth low- or high-pass filter as a biquad cascade.

    Analog prototype poles are placed on the unit circle, scaled by the
    pre-warped cutoff 2*fs*tan(pi*fc/fs), and mapped by the bilinear
    transform. A low-pass has unit gain at DC; a high-pass has unit gain
    at Nyquist. Each section is individually normalized at the reference
    frequency.
    """
    n = spec.order
    fs = spec.sample_rate_hz
    warped = 2.0 * fs * np.tan(np.pi * spec.cutoff_hz / fs)

    k = np.arange(n)
    proto = np.exp(1j * np.pi * (2 * k + n + 1) / (2 * n))  # left half-plane
    if spec.kind == LOW_PASS:
        analog_poles = warped * proto
    else:
        analog_poles = warped / proto

    bigk = 2.0 * fs
    zpoles = (bigk + analog_poles) / (bigk - analog_poles)

    # Pair conjugate poles; real poles (odd order) become 1st-order sections.
    complex_poles = [p for p in zpoles if p.imag > 1e-12]
    real_poles = [p.real for p in zpoles if abs(p.imag) <= 1e-12]

    zsign = 1.0 if spec.kind == LOW_PASS else -1.0  # zeros at z = -zsign... b1 sign
    sections = []
    for p in complex_poles:
        a1 = -2.0 * p.real
        a2 = abs(p) ** 2
        b = np.array([1.0, 2.0 * zsign, 1.0])
        # unit gain at the reference point (z=1 for LP, z=-1 for HP)
        ref = 1.0 if spec.kind == LOW_PASS else -1.0
        num = b[0] + b[1] * (1.0 / ref) + b[2] * (1.0 / ref) ** 2
        den = 1.0 + a1 * (1.0 / ref) + a2 * (1.0 / ref) ** 2
        b = b * (den / num)
        sections.append([b[0], b[1], b[2], 1.0, a1, a2])
    for p in real_poles:
        a1 = -p
        b = np.array([1.0, zsign, 0.0])
        ref = 1.0 if spec.kind == LOW_PASS else -1.0
        num = b[0] + b[1] * (1.0 / ref)
        den = 1.0 + a1 * (1.0 / ref)
        b = b * (den / num)
        sections.append([b[0], b[1], 0.0, 1.0, a1, 0.0])

    return BiquadCascade(np.array(sections))


def apply_filter(cascade: BiquadCascade, samples) -> np.ndarray:
    """Apply the cascade with zero initial state, without mutating it.

    Accepts any array shape and filters along the last axis; every slice
    starts from zero state (the per-window reset contract). Empty input
    yields empty output.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite sample in filter input")
    return sosfilt(cascade.sos, x, axis=-1)


def _apply_filter_reference(cascade: BiquadCascade, samples) -> np.ndarray:
    """Sample-by-sample direct-form II transposed loop (test oracle)."""
    x = np.asarray(samples, dtype=np.float64)
    y = np.empty_like(x)
    state = np.zeros((cascade.n_sections, 2))
    for i, v in enumerate(x):
        acc = v
        for s, (b0, b1, b2, _, a1, a2) in enumerate(cascade.sos):
            out = b0 * acc + state[s, 0]
            state[s, 0] = b1 * acc - a1 * out + state[s, 1]
            state[s, 1] = b2 * acc - a2 * out
            acc = out
        y[i] = acc
    return y
