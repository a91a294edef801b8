import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import freqz

from crouchsim import analysis as A

FS = 500.0


# ---------------------------------------------------------------------------
# filter


@pytest.mark.parametrize("cutoff,fs", [(25.0, 500.0), (45.0, 100.0)])
def test_gain_at_cutoff_is_half(cutoff, fs):
    # Oracle: frequency response of the designed half-order section, squared
    # (one forward + one backward pass multiplies the magnitudes).
    from scipy.signal import butter

    b, a = butter(2, cutoff / (fs / 2))
    _, h = freqz(b, a, worN=[cutoff], fs=fs)
    assert abs(abs(h[0]) ** 2 - 0.5) < 1e-9
    assert A.butterworth_power_gain(cutoff, cutoff, fs) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("cutoff,fs", [(25.0, 500.0), (45.0, 100.0)])
def test_filtered_sinusoid_matches_analytic_gain(cutoff, fs):
    n = int(fs * 40)
    t = np.arange(n) / fs
    x = np.sin(2 * np.pi * cutoff * t)
    y = A.lowpass_zero_phase(x, fs, cutoff)
    core = slice(n // 4, 3 * n // 4)
    gain = np.sqrt(np.mean(y[core] ** 2) / np.mean(x[core] ** 2))
    assert gain == pytest.approx(0.5, abs=0.005)


def test_passband_has_no_lag():
    fs, cutoff = 500.0, 25.0
    t = np.arange(5000) / fs
    x = np.sin(2 * np.pi * (cutoff / 5) * t) + 0.5 * np.sin(2 * np.pi * 2.0 * t)
    y = A.lowpass_zero_phase(x, fs, cutoff)
    xc = np.correlate(y - y.mean(), x - x.mean(), mode="full")
    assert int(np.argmax(xc)) - (x.size - 1) == 0


def test_filter_rejects_bad_arguments():
    with pytest.raises(A.AnalysisError):
        A.lowpass_zero_phase(np.zeros(100), 100.0, 60.0)
    with pytest.raises(A.AnalysisError):
        A.lowpass_zero_phase(np.zeros(100), 100.0, 10.0, order=3)


def test_filter_handles_short_signal():
    y = A.lowpass_zero_phase(np.ones(5), 500.0, 25.0)
    assert np.allclose(y, 1.0)


# ---------------------------------------------------------------------------
# spectrum


def test_bin_aligned_sinusoid_recovers_unit_amplitude():
    n = 5000
    k = 190
    t = np.arange(n) / FS
    x = np.sin(2 * np.pi * (k * FS / n) * t)
    s = A.amplitude_spectrum(x, FS)
    assert s.amplitudes[k] == pytest.approx(1.0, abs=1e-9)
    rest = np.delete(s.amplitudes, k)
    assert np.max(rest) <= 1e-9


def test_dc_and_nyquist_are_not_doubled():
    n = 64
    x = 0.7 + 0.3 * np.cos(np.pi * np.arange(n))
    s = A.amplitude_spectrum(x, FS)
    assert s.amplitudes[0] == pytest.approx(0.7)
    assert s.amplitudes[-1] == pytest.approx(0.3)


def test_grid_is_exact():
    s = A.amplitude_spectrum(np.zeros(5350), FS)
    assert np.array_equal(s.frequencies, np.arange(s.frequencies.size) * (FS / 5350))
    assert s.resolution == pytest.approx(FS / 5350)


def test_window_selects_expected_samples():
    x = np.arange(6000, dtype=float)
    s = A.amplitude_spectrum(x, FS, window=(0.3, 11.0))
    assert s.n_samples == 5350
    assert s.amplitudes[0] == pytest.approx(np.mean(x[150:5500]))
    with pytest.raises(A.AnalysisError):
        A.amplitude_spectrum(x, FS, window=(0.0, 20.0))


def test_hann_taper_preserves_bin_aligned_amplitude():
    n = 1000
    k = 50
    x = 2.0 * np.sin(2 * np.pi * k * np.arange(n) / n)
    s = A.amplitude_spectrum(x, FS, taper="hann")
    assert s.amplitudes[k] == pytest.approx(2.0, rel=1e-2)
    with pytest.raises(A.AnalysisError):
        A.amplitude_spectrum(x, FS, taper="kaiser")


@settings(max_examples=50, deadline=None)
@given(n=st.integers(8, 600), seed=st.integers(0, 2**32 - 1))
def test_parseval(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    s = A.amplitude_spectrum(x, FS)
    assert s.power() == pytest.approx(np.mean(x ** 2), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.1, 100.0))
def test_amplitude_is_linear_in_scale(seed, scale):
    x = np.random.default_rng(seed).normal(size=256)
    a = A.amplitude_spectrum(x, FS).amplitudes
    b = A.amplitude_spectrum(scale * x, FS).amplitudes
    assert np.allclose(b, scale * a, rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------------------
# trial statistics


def _spec(amps):
    amps = np.asarray(amps, dtype=float)
    return A.Spectrum(np.arange(amps.size) * 0.5, amps, 2 * (amps.size - 1), 1.0)


def test_aggregate_mean_and_sample_std():
    stats = A.aggregate_trials([_spec([1, 2, 3]), _spec([3, 2, 1])])
    assert np.allclose(stats.mean, [2, 2, 2])
    assert np.allclose(stats.std, [math.sqrt(2), 0, math.sqrt(2)])
    assert stats.n_trials == 2


def test_single_trial_std_is_nan():
    stats = A.aggregate_trials([_spec([1, 2])])
    assert np.all(np.isnan(stats.std))


def test_aggregate_rejects_mismatched_grids():
    other = A.Spectrum(np.arange(3) * 0.25, np.ones(3), 4, 1.0)
    with pytest.raises(A.AnalysisError):
        A.aggregate_trials([_spec([1, 2, 3]), other])
    with pytest.raises(A.AnalysisError):
        A.aggregate_trials([])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 7))
def test_aggregate_is_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    spectra = [_spec(rng.random(9)) for _ in range(n)]
    a = A.aggregate_trials(spectra)
    b = A.aggregate_trials([spectra[i] for i in rng.permutation(n)])
    assert np.allclose(a.mean, b.mean, rtol=1e-12)
    assert np.allclose(a.std, b.std, rtol=1e-12)


# ---------------------------------------------------------------------------
# peaks and classification


def _bumps(centres, heights, width=0.15, df=0.0935, fmax=30.0):
    f = np.arange(0, fmax, df)
    amps = np.full_like(f, 1e-3)
    for c, h in zip(centres, heights):
        amps = amps + h * np.exp(-0.5 * ((f - c) / width) ** 2)
    return A.TrialStats(f, amps, np.zeros_like(f), 7)


def test_single_bump_gives_one_peak():
    report = A.find_spectral_peaks(_bumps([3.8], [1.0]))
    assert len(report.peaks) == 1
    assert report.dominant_peak.frequency == pytest.approx(3.8, abs=0.1)


def test_flat_spectrum_gives_no_peaks():
    f = np.arange(0, 30, 0.1)
    report = A.find_spectral_peaks(A.TrialStats(f, np.ones_like(f), np.zeros_like(f), 1))
    assert report.peaks == ()


def test_peaks_sorted_by_amplitude_and_band_limited():
    report = A.find_spectral_peaks(_bumps([3.8, 5.5, 27.0], [1.0, 0.4, 2.0]))
    freqs = [p.frequency for p in report.peaks]
    assert len(freqs) == 2
    assert freqs[0] == pytest.approx(3.8, abs=0.1)
    assert freqs[1] == pytest.approx(5.5, abs=0.1)


def test_default_prominence_is_three_band_medians():
    stats = _bumps([3.8], [1.0])
    inside = (stats.frequencies >= 1) & (stats.frequencies <= 25)
    assert A.default_prominence(stats, (1, 25)) == pytest.approx(3 * np.median(stats.mean[inside]))


def _legs(n_with_prey, prey_freq=5.5):
    return [_bumps([3.8, prey_freq], [1.0, 0.3]) if i < n_with_prey else _bumps([3.8], [1.0]) for i in range(8)]


def test_all_single_peaked_is_absent():
    d = A.classify_prey(_legs(0))
    assert not d.present
    assert d.label == "absent"


def test_six_legs_with_prey_peak_is_present():
    d = A.classify_prey(_legs(6))
    assert d.present
    assert d.n_detected == 6
    assert d.legs[0].prey.frequency == pytest.approx(5.5, abs=0.1)


def test_two_legs_is_absent_under_default_rule():
    assert not A.classify_prey(_legs(2)).present


def test_classify_needs_eight_legs():
    with pytest.raises(A.AnalysisError):
        A.classify_prey(_legs(8)[:7])


def test_prey_peak_too_close_to_dominant_is_ignored():
    legs = [_bumps([4.9, 5.0], [1.0, 0.5], width=0.05, df=0.1) for _ in range(8)]
    d = A.classify_prey(legs)
    assert d.n_detected == 0


@settings(max_examples=40, deadline=None)
@given(mask=st.lists(st.booleans(), min_size=8, max_size=8), extra=st.integers(0, 7))
def test_classification_is_monotone(mask, extra):
    base = [_bumps([3.8, 5.5], [1.0, 0.3]) if m else _bumps([3.8], [1.0]) for m in mask]
    before = A.classify_prey(base)
    mask2 = list(mask)
    mask2[extra] = True
    after = A.classify_prey([_bumps([3.8, 5.5], [1.0, 0.3]) if m else _bumps([3.8], [1.0]) for m in mask2])
    assert after.n_detected >= before.n_detected
    assert not (before.present and not after.present)


# ---------------------------------------------------------------------------
# crouch window and decay


def _crouch_trace(fs=500.0, duration=6.0, onset=1.0, noise=0.0, seed=0):
    t = np.arange(int(duration * fs)) / fs
    x = np.zeros_like(t)
    on = t >= onset
    tau = t[on] - onset
    x[on] = -3.0 * np.exp(-tau / 0.4) * np.cos(2 * np.pi * 3.8 * tau)
    return x + np.random.default_rng(seed).normal(0, noise, t.size)


def test_crouch_window_finds_onset():
    t_on, t_off = A.detect_crouch_window(_crouch_trace(noise=0.01), FS)
    assert t_on == pytest.approx(1.0, abs=0.05)
    assert t_off > t_on


def test_flat_trace_has_no_transient():
    with pytest.raises(A.NoTransient):
        A.detect_crouch_window(np.zeros(2000), FS)
    with pytest.raises(A.NoTransient):
        A.detect_crouch_window(np.random.default_rng(1).normal(0, 1, 2000) * 0 + np.linspace(0, 1, 2000), FS)


def test_decay_time_of_exponential_envelope():
    # The envelope of exp(-t/tau) falls to 10% after tau*ln(10) (window effects aside).
    tau = 0.8
    t = np.arange(int(10 * FS)) / FS
    x = np.exp(-t / tau) * np.sin(2 * np.pi * 4.0 * t)
    d = A.decay_time(x, FS, 0.0, 0.1, window=0.25, cutoff=None)
    assert d == pytest.approx(tau * math.log(10), rel=0.08)


def test_decay_time_is_inf_without_decay():
    t = np.arange(2000) / FS
    assert A.decay_time(np.sin(2 * np.pi * 4 * t), FS, 0.0) == math.inf


# ---------------------------------------------------------------------------
# pose pipeline


FRONT = (3.1, 2.83, 2.5, 1.0)


def _landmarks(ratios=FRONT, unit=100.0, frames=200, noise=0.0, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    angles = np.array([0.3, -0.4, 0.9, -0.2])
    pos = np.zeros((frames, 5, 2))
    for f in range(frames):
        wobble = 0.05 * math.sin(2 * math.pi * f / 50)
        p = np.array([200.0, 300.0])
        pos[f, 0] = p
        for s in range(4):
            a = angles[s] + wobble
            p = p + ratios[s] * unit * np.array([math.cos(a), math.sin(a)])
            pos[f, s + 1] = p
    pos = pos + rng.normal(0, noise, pos.shape)
    return A.LandmarkTrace(scale * pos, np.ones((frames, 5)))


def test_clean_landmarks_reproduce_front_ratios():
    r = A.pose_segment_ratios(_landmarks())
    assert r == pytest.approx(FRONT, abs=1e-9)


def test_noisy_landmarks_within_two_percent():
    for seed in range(100):
        r = A.pose_segment_ratios(_landmarks(noise=1.0, seed=seed))
        assert np.all(np.abs(np.array(r) / np.array(FRONT) - 1) < 0.02)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.05, 50.0))
def test_pose_ratios_scale_invariant(scale):
    a = A.pose_segment_ratios(_landmarks(noise=0.5, seed=3))
    b = A.pose_segment_ratios(_landmarks(noise=0.5, seed=3, scale=scale))
    assert np.allclose(a, b, rtol=1e-9)


def test_low_likelihood_frames_are_dropped_and_bridged():
    tr = _landmarks()
    lik = tr.likelihoods.copy()
    lik[50:53, 2] = 0.1  # short gap, bridged
    pos = tr.positions.copy()
    pos[50:53, 2] = 1e6  # garbage behind the low likelihood
    r = A.pose_segment_ratios(A.LandmarkTrace(pos, lik))
    assert r == pytest.approx(FRONT, rel=1e-6)


def test_insufficient_reliable_frames():
    tr = _landmarks(frames=40)
    lik = tr.likelihoods.copy()
    lik[:, 4] = 0.2
    with pytest.raises(A.InsufficientData):
        A.pose_segment_ratios(A.LandmarkTrace(tr.positions, lik))


def test_cutoff_above_nyquist_is_clamped(caplog):
    r = A.pose_segment_ratios(_landmarks(), filter_cutoff=60.0)
    assert "cutoff" in caplog.text
    assert r == pytest.approx(FRONT, abs=1e-9)


def test_landmark_trace_validation():
    with pytest.raises(A.AnalysisError):
        A.LandmarkTrace(np.zeros((3, 4, 2)), np.ones((3, 4)))
    with pytest.raises(A.AnalysisError):
        A.LandmarkTrace(np.zeros((3, 5, 2)), np.full((3, 5), 2.0))


def test_read_landmark_csv_roundtrip(tmp_path):
    tr = _landmarks(frames=30)
    lines = ["leg,frame,landmark,x_px,y_px,likelihood"]
    for f in range(30):
        for j, name in enumerate(A.LANDMARKS):
            x, y = tr.positions[f, j]
            lines.append(f"L1,{f},{name},{float(x)!r},{float(y)!r},0.99")
    path = tmp_path / "lm.csv"
    path.write_text("\n".join(lines) + "\n")
    traces = A.read_landmark_csv(path)
    assert list(traces) == ["L1"]
    assert A.pose_segment_ratios(traces)["L1"] == pytest.approx(FRONT, abs=1e-9)


def test_read_landmark_csv_rejects_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("frame,x_px\n0,1\n")
    with pytest.raises(A.AnalysisError):
        A.read_landmark_csv(path)
