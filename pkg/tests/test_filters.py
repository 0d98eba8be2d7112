import numpy as np
import pytest
from scipy import signal as sps

from kneecast.errors import InvalidSpecError
from kneecast.filters import (
    FilterSpec,
    HIGH_PASS,
    LOW_PASS,
    apply_filter,
    design_butterworth,
    _apply_filter_reference,
)


def oracle_highpass2(fc, fs):
    """Closed-form bilinear-transform biquad for a 2nd-order Butterworth HP.

    Analog prototype s^2 / (s^2 + sqrt(2) wc s + wc^2) with pre-warped
    wc = 2 fs tan(pi fc / fs), discretized by s = 2 fs (z-1)/(z+1).
    """
    wc = 2.0 * fs * np.tan(np.pi * fc / fs)
    k = 2.0 * fs
    d0 = k * k + np.sqrt(2.0) * wc * k + wc * wc
    b = np.array([k * k, -2.0 * k * k, k * k]) / d0
    a = np.array([1.0, 2.0 * (wc * wc - k * k) / d0,
                  (k * k - np.sqrt(2.0) * wc * k + wc * wc) / d0])
    return b, a


def cascade_ba(cascade):
    """Collapse a cascade into a single (b, a) polynomial pair."""
    b, a = np.array([1.0]), np.array([1.0])
    for b0, b1, b2, _, a1, a2 in cascade.sos:
        b = np.polymul(b, [b0, b1, b2])
        a = np.polymul(a, [1.0, a1, a2])
    return b, a


def test_lowpass_dc_gain_is_one():
    c = design_butterworth(FilterSpec(LOW_PASS, 2, 5.0, 1000.0))
    assert abs(c.response(0.0, 1000.0)) == pytest.approx(1.0, abs=1e-12)


def test_lowpass_cutoff_is_minus_3db():
    c = design_butterworth(FilterSpec(LOW_PASS, 2, 5.0, 1000.0))
    assert abs(c.response(5.0, 1000.0)) == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-3)


def test_highpass_nyquist_gain_is_one():
    c = design_butterworth(FilterSpec(HIGH_PASS, 2, 20.0, 1000.0))
    assert abs(c.response(500.0, 1000.0)) == pytest.approx(1.0, abs=1e-12)


def test_highpass_coefficients_match_bilinear_oracle():
    c = design_butterworth(FilterSpec(HIGH_PASS, 2, 20.0, 1000.0))
    assert c.n_sections == 1
    b_oracle, a_oracle = oracle_highpass2(20.0, 1000.0)
    b, a = cascade_ba(c)
    np.testing.assert_allclose(b, b_oracle, rtol=1e-10)
    np.testing.assert_allclose(a, a_oracle, rtol=1e-10)


@pytest.mark.parametrize("kind,btype", [(LOW_PASS, "lowpass"), (HIGH_PASS, "highpass")])
@pytest.mark.parametrize("order", [1, 2, 3, 4, 5, 8])
@pytest.mark.parametrize("fc,fs", [(5.0, 1000.0), (20.0, 1000.0), (6.0, 100.0)])
def test_response_matches_scipy(kind, btype, order, fc, fs):
    c = design_butterworth(FilterSpec(kind, order, fc, fs))
    sos = sps.butter(order, fc, btype=btype, fs=fs, output="sos")
    freqs = np.linspace(0.5, fs / 2 - 0.5, 257)
    ours = c.response(freqs, fs)
    _, theirs = sps.sosfreqz(sos, worN=2 * np.pi * freqs / fs)
    np.testing.assert_allclose(np.abs(ours), np.abs(theirs), atol=1e-8)


def test_invalid_specs_rejected():
    with pytest.raises(InvalidSpecError):
        FilterSpec(LOW_PASS, 2, 500.0, 1000.0)  # cutoff at Nyquist
    with pytest.raises(InvalidSpecError):
        FilterSpec(LOW_PASS, 0, 5.0, 1000.0)
    with pytest.raises(InvalidSpecError):
        FilterSpec("band-pass", 2, 5.0, 1000.0)
    with pytest.raises(InvalidSpecError):
        FilterSpec(LOW_PASS, 9, 5.0, 1000.0)


def test_highpass_removes_dc():
    c = design_butterworth(FilterSpec(HIGH_PASS, 2, 20.0, 1000.0))
    y = apply_filter(c, np.full(2000, 5.0))
    assert np.all(np.abs(y[1000:]) < 1e-3)


def test_zero_input_zero_output():
    c = design_butterworth(FilterSpec(LOW_PASS, 4, 5.0, 1000.0))
    y = apply_filter(c, np.zeros(500))
    assert np.all(y == 0.0)


def test_empty_input_empty_output():
    c = design_butterworth(FilterSpec(LOW_PASS, 2, 5.0, 1000.0))
    assert apply_filter(c, np.zeros(0)).shape == (0,)


def test_sine_attenuation_matches_response_oracle():
    # 50 Hz unit sine through a 5 Hz low-pass: one decade above cutoff.
    fs = 1000.0
    c = design_butterworth(FilterSpec(LOW_PASS, 2, 5.0, fs))
    t = np.arange(4000) / fs
    y = apply_filter(c, np.sin(2 * np.pi * 50.0 * t))
    steady = y[2000:]
    amp = (steady.max() - steady.min()) / 2.0
    expected = abs(c.response(50.0, fs))
    assert amp == pytest.approx(expected, rel=0.10)
    assert expected == pytest.approx(0.0099, rel=0.05)


def test_causality_perturbation():
    # Changing samples after index i never changes outputs up to i.
    rng = np.random.default_rng(7)
    c = design_butterworth(FilterSpec(HIGH_PASS, 2, 20.0, 1000.0))
    x = rng.normal(size=400)
    for i in (0, 10, 199, 398):
        x2 = x.copy()
        x2[i + 1 :] += rng.normal(size=x.size - i - 1) * 10
        y1 = apply_filter(c, x)
        y2 = apply_filter(c, x2)
        np.testing.assert_array_equal(y1[: i + 1], y2[: i + 1])


def test_apply_matches_reference_loop():
    rng = np.random.default_rng(3)
    for spec in (FilterSpec(LOW_PASS, 2, 5.0, 1000.0),
                 FilterSpec(HIGH_PASS, 3, 20.0, 1000.0),
                 FilterSpec(LOW_PASS, 5, 6.0, 100.0)):
        c = design_butterworth(spec)
        x = rng.normal(size=300)
        np.testing.assert_allclose(
            apply_filter(c, x), _apply_filter_reference(c, x), atol=1e-12)


def test_streaming_process_equals_one_shot():
    rng = np.random.default_rng(11)
    c = design_butterworth(FilterSpec(LOW_PASS, 2, 5.0, 1000.0))
    x = rng.normal(size=600)
    chunks = [c.process(x[i : i + 100]) for i in range(0, 600, 100)]
    c2 = design_butterworth(FilterSpec(LOW_PASS, 2, 5.0, 1000.0))
    np.testing.assert_allclose(np.concatenate(chunks), apply_filter(c2, x), atol=1e-12)


def test_impulse_response_decays():
    for kind, fc in ((LOW_PASS, 5.0), (HIGH_PASS, 20.0)):
        c = design_butterworth(FilterSpec(kind, 2, fc, 1000.0))
        n = int(10 * 1000.0 / fc) + 1
        impulse = np.zeros(n + 200)
        impulse[0] = 1.0
        h = apply_filter(c, impulse)
        assert np.all(np.abs(h[n:]) < 1e-6)


def test_determinism():
    c = design_butterworth(FilterSpec(LOW_PASS, 2, 5.0, 1000.0))
    x = np.random.default_rng(0).normal(size=1000)
    np.testing.assert_array_equal(apply_filter(c, x), apply_filter(c, x))
