"""Seeded synthetic gait recordings (stand-in for restricted lab data).

The knee angle is a two-harmonic cycle with per-cycle jitter; each EMG
channel is band-limited noise amplitude-modulated by a phase-locked
activation envelope; interaction forces are smoothed knee angular
velocity. Every draw flows from one generator seeded by the spec, so the
same spec always yields a bit-identical recording. The seed also fixes a
set of subject "traits" (baseline angle, amplitude scale, EMG gains and
envelope timing) so different seeds behave like different subjects, which
is what makes cross-subject transfer learning measurable on synthetic
data; ``trait_scale=0`` disables this and recovers the pure defaults.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidSpecError
from .filters import FilterSpec, HIGH_PASS, LOW_PASS, apply_filter, design_butterworth
from .recordings import Recording

BASE_ANGLE_DEG = 30.0
HARMONIC1_DEG = 25.0
HARMONIC2_DEG = 10.0
HARMONIC2_PHASE = 0.8
ENVELOPE_CENTERS = (0.05, 0.30, 0.55, 0.80)
ENVELOPE_WIDTH = 0.10
FORCE_SCALE_N = 30.0


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic subject trial."""

    n_cycles: int
    cycle_period_s: float = 1.2
    condition: str = "normal"
    jitter: Optional[float] = None
    seed: int = 0
    include_forces: bool = False
    trait_scale: float = 1.0
    subject_id: Optional[str] = None
    trial_id: str = "t0"

    def __post_init__(self):
        if self.n_cycles < 1:
            raise InvalidSpecError("n_cycles must be >= 1")
        if not 1.0 <= self.cycle_period_s <= 1.5:
            raise InvalidSpecError("cycle_period_s must be in [1.0, 1.5]")
        if self.condition not in ("normal", "abnormal"):
            raise InvalidSpecError(f"condition must be normal|abnormal, got {self.condition!r}")
        if self.jitter is not None and not 0.0 <= self.jitter < 1.0:
            raise InvalidSpecError("jitter must be in [0, 1)")

    @property
    def resolved_jitter(self) -> float:
        if self.jitter is not None:
            return self.jitter
        return 0.3 if self.condition == "abnormal" else 0.05

    @property
    def resolved_subject_id(self) -> str:
        return self.subject_id if self.subject_id else f"synth-{self.seed}"


def _circular_distance(phase: np.ndarray, center: float) -> np.ndarray:
    d = np.abs(phase - center)
    return np.minimum(d, 1.0 - d)


def synthesize_subject(spec: SynthSpec) -> Recording:
    """Generate one reproducible gait-like Recording at 1000 Hz."""
    fs = 1000
    rng = np.random.default_rng(spec.seed)
    ts = spec.trait_scale

    base_angle = BASE_ANGLE_DEG + ts * rng.uniform(-4.0, 4.0)
    amp1 = HARMONIC1_DEG * (1.0 + ts * rng.uniform(-0.15, 0.15))
    amp2 = HARMONIC2_DEG * (1.0 + ts * rng.uniform(-0.20, 0.20))
    psi = HARMONIC2_PHASE + ts * rng.uniform(-0.25, 0.25)
    emg_gain = 1.0 + ts * rng.uniform(-0.3, 0.3, size=4)
    centers = np.asarray(ENVELOPE_CENTERS) + ts * rng.uniform(-0.04, 0.04, size=4)
    widths = ENVELOPE_WIDTH * (1.0 + ts * rng.uniform(-0.25, 0.25, size=4))

    j = spec.resolved_jitter
    cycle_jit = rng.uniform(-1.0, 1.0, size=(spec.n_cycles, 3))
    periods = spec.cycle_period_s * (1.0 + j * cycle_jit[:, 0])
    a1 = amp1 * (1.0 + j * cycle_jit[:, 1])
    a2 = amp2 * (1.0 + j * cycle_jit[:, 2])

    lengths = np.maximum(np.round(periods * fs).astype(int), 2)
    phase = np.concatenate([np.arange(n) / n for n in lengths])
    a1_per = np.repeat(a1, lengths)
    a2_per = np.repeat(a2, lengths)
    knee = base_angle + a1_per * np.sin(2 * np.pi * phase) \
        + a2_per * np.sin(4 * np.pi * phase + psi)
    n = knee.shape[0]

    highpass = design_butterworth(FilterSpec(HIGH_PASS, 2, 20.0, fs))
    lowpass250 = design_butterworth(FilterSpec(LOW_PASS, 2, 250.0, fs))
    emg = np.empty((4, n))
    for c in range(4):
        white = rng.normal(size=n)
        band = apply_filter(lowpass250, apply_filter(highpass, white))
        band /= max(band.std(), 1e-12)
        envelope = 0.08 + np.exp(-0.5 * (_circular_distance(phase, centers[c]) / widths[c]) ** 2)
        emg[c] = 0.4 * emg_gain[c] * band * envelope + 0.02 * rng.normal(size=n)

    force_thigh = force_shank = None
    if spec.include_forces:
        velocity = np.gradient(knee) * fs  # deg/s
        smooth6 = design_butterworth(FilterSpec(LOW_PASS, 2, 6.0, fs))
        smooth4 = design_butterworth(FilterSpec(LOW_PASS, 2, 4.0, fs))
        sm = apply_filter(smooth6, velocity)
        sm = sm / max(np.abs(sm).max(), 1e-12)
        sm4 = apply_filter(smooth4, velocity)
        sm4 = sm4 / max(np.abs(sm4).max(), 1e-12)
        force_thigh = FORCE_SCALE_N * sm + 0.5 * rng.normal(size=n)
        force_shank = -0.8 * FORCE_SCALE_N * sm4 + 0.5 * rng.normal(size=n)

    return Recording(
        sample_rate_hz=fs,
        emg=emg,
        knee_angle_deg=knee,
        force_thigh_n=force_thigh,
        force_shank_n=force_shank,
        subject_id=spec.resolved_subject_id,
        condition=spec.condition,
        trial_id=spec.trial_id,
    )
