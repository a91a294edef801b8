"""Signal processing for the leg accelerometers and for tracked leg landmarks.

Conventions
-----------
* Zero-phase low-pass filtering runs a Butterworth of half the requested
  order forward and then backward (``scipy.signal.filtfilt`` with odd
  reflection padding), so an "order 4" filter is a 2nd-order design applied
  twice and its amplitude gain at the cutoff is exactly 1/2.
* Amplitude spectra are single-sided with ``A_0 = |X_0|/N`` and
  ``A_k = 2|X_k|/N``; for even ``N`` the Nyquist bin is not doubled (it has no
  mirror image), which keeps Parseval's identity exact.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import butter, filtfilt, find_peaks

logger = logging.getLogger(__name__)

LANDMARKS = ("coxa", "femur", "tibia", "metatarsus", "tarsus")
SEGMENTS = ("femur", "tibia", "metatarsus", "tarsus")


class AnalysisError(ValueError):
    """Bad analysis parameters or inputs."""


class NoTransient(AnalysisError):
    """No crouch-like excursion was found in a trace."""


class InsufficientData(AnalysisError):
    """Too few reliable landmark frames to measure a segment."""


# ---------------------------------------------------------------------------
# filtering


def lowpass_zero_phase(samples, sample_rate: float, cutoff: float, order: int = 4, axis: int = -1) -> np.ndarray:
    """Zero-phase Butterworth low-pass.

    Parameters
    ----------
    samples : array_like
        Signal(s); filtered along ``axis``.
    sample_rate : float
        Sampling rate in Hz.
    cutoff : float
        -3 dB frequency of each pass, in Hz (the combined response is -6 dB here).
    order : int
        Total (even) order of the forward-backward filter.

    Returns
    -------
    numpy.ndarray
        Filtered copy of ``samples``.
    """
    x = np.asarray(samples, dtype=float)
    nyquist = 0.5 * sample_rate
    if not 0.0 < cutoff < nyquist:
        raise AnalysisError(f"cutoff must lie in (0, {nyquist}) Hz, got {cutoff}")
    if order < 2 or order % 2:
        raise AnalysisError(f"order must be a positive even integer, got {order}")
    b, a = butter(order // 2, cutoff / nyquist)
    padlen = 3 * max(len(a), len(b))
    n = x.shape[axis]
    if n <= padlen:
        padlen = max(n - 1, 0)
    return filtfilt(b, a, x, axis=axis, padtype="odd", padlen=padlen)


def butterworth_power_gain(freq, cutoff: float, sample_rate: float, order: int = 4) -> np.ndarray:
    """Analytic |H(f)|^2 of one pass of the digital half-order design (the forward-backward amplitude gain)."""
    f = np.asarray(freq, dtype=float)
    n = order // 2
    warp = np.tan(np.pi * f / sample_rate) / np.tan(np.pi * cutoff / sample_rate)
    return 1.0 / (1.0 + warp ** (2 * n))


# ---------------------------------------------------------------------------
# spectra


@dataclass(frozen=True, eq=False)
class Spectrum:
    frequencies: np.ndarray
    amplitudes: np.ndarray
    n_samples: int
    sample_rate: float

    @property
    def resolution(self) -> float:
        return self.sample_rate / self.n_samples

    def power(self) -> float:
        """Mean square of the analysed segment implied by the amplitudes."""
        a = self.amplitudes
        total = a[0] ** 2 + 0.5 * np.sum(a[1:] ** 2)
        if self.n_samples % 2 == 0 and a.size > 1:
            total += 0.5 * a[-1] ** 2
        return float(total)


def _window_indices(n: int, sample_rate: float, window) -> tuple[int, int]:
    if window is None:
        return 0, n
    t_start, t_end = window
    i0 = int(round(t_start * sample_rate))
    i1 = int(round(t_end * sample_rate))
    if i0 < 0 or i1 > n or i1 - i0 < 2:
        raise AnalysisError(f"window {window} s selects samples [{i0}, {i1}) of a {n}-sample trace")
    return i0, i1


def amplitude_spectrum(samples, sample_rate: float, window=None, taper: str = "none") -> Spectrum:
    """Single-sided amplitude spectrum of ``samples[window]``.

    ``window`` is ``(t_start, t_end)`` in seconds from the first sample
    (end exclusive); ``None`` uses the whole trace. ``taper="hann"`` applies
    a Hann window with coherent-gain correction.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1:
        raise AnalysisError("amplitude_spectrum expects a 1-D signal")
    i0, i1 = _window_indices(x.size, sample_rate, window)
    seg = x[i0:i1]
    n = seg.size
    if taper == "hann":
        w = np.hanning(n)
        spectrum = np.fft.rfft(seg * w)
        norm = w.sum()
    elif taper == "none":
        spectrum = np.fft.rfft(seg)
        norm = float(n)
    else:
        raise AnalysisError(f"unknown taper {taper!r}")
    amps = np.abs(spectrum) / norm
    last = amps.size if n % 2 else amps.size - 1
    amps[1:last] *= 2.0
    freqs = np.arange(amps.size) * (sample_rate / n)
    return Spectrum(freqs, amps, n, float(sample_rate))


@dataclass(frozen=True, eq=False)
class TrialStats:
    frequencies: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_trials: int

    @property
    def resolution(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0]) if self.frequencies.size > 1 else math.nan


def aggregate_trials(spectra: Sequence[Spectrum]) -> TrialStats:
    """Per-bin mean and sample (n - 1) standard deviation; std is NaN for a single trial."""
    spectra = list(spectra)
    if not spectra:
        raise AnalysisError("need at least one spectrum")
    grid = spectra[0].frequencies
    for s in spectra[1:]:
        if s.frequencies.shape != grid.shape or not np.array_equal(s.frequencies, grid):
            raise AnalysisError("spectra are on different frequency grids")
    stack = np.stack([s.amplitudes for s in spectra])
    mean = stack.mean(axis=0)
    if len(spectra) > 1:
        std = stack.std(axis=0, ddof=1)
    else:
        std = np.full_like(mean, np.nan)
    return TrialStats(grid.copy(), mean, std, len(spectra))


# ---------------------------------------------------------------------------
# peaks and prey classification


@dataclass(frozen=True)
class Peak:
    frequency: float
    amplitude: float
    prominence: float
    index: int


@dataclass(frozen=True)
class PeakReport:
    peaks: tuple[Peak, ...]
    threshold: float

    @property
    def dominant(self) -> int | None:
        return 0 if self.peaks else None

    @property
    def dominant_peak(self) -> Peak | None:
        return self.peaks[0] if self.peaks else None


def _curve(stats) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(stats, TrialStats):
        return stats.frequencies, stats.mean
    if isinstance(stats, Spectrum):
        return stats.frequencies, stats.amplitudes
    freqs, amps = stats
    return np.asarray(freqs, dtype=float), np.asarray(amps, dtype=float)


def default_prominence(stats, band) -> float:
    """Three times the median amplitude inside ``band``."""
    freqs, amps = _curve(stats)
    inside = (freqs >= band[0]) & (freqs <= band[1])
    if not inside.any():
        raise AnalysisError(f"band {band} Hz contains no frequency bins")
    return 3.0 * float(np.median(amps[inside]))


def find_spectral_peaks(stats, min_prominence: float | None = None, band=(1.0, 25.0)) -> PeakReport:
    """Local maxima of the mean spectrum inside ``band`` with prominence >= ``min_prominence``.

    Prominence is measured on the whole spectrum, so a peak near a band edge
    is judged by the same topography as one in the middle. ``None`` selects
    :func:`default_prominence`. Peaks come back sorted by descending amplitude.
    """
    freqs, amps = _curve(stats)
    if band[0] >= band[1]:
        raise AnalysisError(f"empty band {band}")
    threshold = default_prominence((freqs, amps), band) if min_prominence is None else float(min_prominence)
    idx, props = find_peaks(amps, prominence=(threshold, None))
    peaks = [
        Peak(float(freqs[i]), float(amps[i]), float(p), int(i))
        for i, p in zip(idx, props["prominences"])
        if band[0] <= freqs[i] <= band[1] and p > 0
    ]
    peaks.sort(key=lambda p: (-p.amplitude, p.index))
    return PeakReport(tuple(peaks), threshold)


@dataclass(frozen=True)
class LegDetection:
    leg_id: int
    baseline: Peak | None
    prey: Peak | None

    @property
    def detected(self) -> bool:
        return self.prey is not None


@dataclass(frozen=True)
class PreyDecision:
    present: bool
    legs: tuple[LegDetection, ...]
    min_legs: int

    @property
    def n_detected(self) -> int:
        return sum(d.detected for d in self.legs)

    @property
    def label(self) -> str:
        return "present" if self.present else "absent"


def detect_leg(stats, leg_id: int, baseline_band=(3.0, 5.0), prey_band=(5.0, 6.0), peak_band=(1.0, 25.0),
               min_prominence: float | None = None, min_separation_bins: int = 2) -> LegDetection:
    """Dominant peak of one leg and its strongest prey-band peak at least ``min_separation_bins`` away."""
    report = find_spectral_peaks(stats, min_prominence, peak_band)
    dominant = report.dominant_peak
    baseline = dominant if dominant is not None and baseline_band[0] <= dominant.frequency <= baseline_band[1] else None
    prey = None
    for p in report.peaks:
        if not prey_band[0] <= p.frequency <= prey_band[1]:
            continue
        if dominant is not None and abs(p.index - dominant.index) < min_separation_bins:
            continue
        prey = p
        break
    return LegDetection(leg_id, baseline, prey)


def classify_prey(per_leg_stats: Sequence, baseline_band=(3.0, 5.0), prey_band=(5.0, 6.0), min_legs: int = 5,
                  peak_band=(1.0, 25.0), min_prominence: float | None = None, n_legs: int = 8) -> PreyDecision:
    """Prey is present when at least ``min_legs`` legs carry a prey-band peak distinct from their dominant peak."""
    per_leg_stats = list(per_leg_stats)
    if len(per_leg_stats) != n_legs:
        raise AnalysisError(f"expected {n_legs} legs, got {len(per_leg_stats)}")
    legs = tuple(
        detect_leg(s, i + 1, baseline_band, prey_band, peak_band, min_prominence)
        for i, s in enumerate(per_leg_stats)
    )
    return decide(legs, min_legs)


def decide(legs: Iterable[LegDetection], min_legs: int) -> PreyDecision:
    legs = tuple(legs)
    return PreyDecision(sum(d.detected for d in legs) >= min_legs, legs, min_legs)


# ---------------------------------------------------------------------------
# crouch window


def detect_crouch_window(samples, sample_rate: float, threshold_sigma: float = 5.0, baseline_duration: float = 0.25,
                         envelope_window: float = 0.25, cutoff: float = 25.0, noise_floor: float = 0.01,
                         t0: float = 0.0) -> tuple[float, float]:
    """Locate the crouch transient: (onset, end) in seconds.

    The onset is the first sample where the low-passed signal falls more
    than ``threshold_sigma`` noise levels below the baseline mean; the
    baseline statistics come from the first ``baseline_duration`` seconds.
    The noise level is floored at ``noise_floor`` times the largest
    excursion so that noise-free (simulated) traces behave sensibly. The end
    is the first time after the onset where a running RMS envelope of
    ``envelope_window`` seconds is back within the threshold, or the end of
    the trace. When several transients occur the window opens at the first.

    ``samples`` may also be an :class:`~crouchsim.dynamics.AccelTrace`, in
    which case its rate and start time are used.
    """
    if hasattr(samples, "samples"):
        sample_rate, t0, samples = samples.sample_rate, samples.t0, samples.samples
    x = np.asarray(samples, dtype=float)
    if x.size < 4:
        raise AnalysisError("trace too short")
    nyquist = 0.5 * sample_rate
    y = lowpass_zero_phase(x, sample_rate, min(cutoff, 0.45 * 2 * nyquist)) if x.size > 12 else x
    nb = max(2, int(round(baseline_duration * sample_rate)))
    if nb >= x.size:
        raise AnalysisError("baseline_duration covers the whole trace")
    mu = float(np.mean(y[:nb]))
    dev = y - mu
    peak_excursion = float(np.max(np.abs(dev)))
    if peak_excursion == 0.0:
        raise NoTransient("signal is flat")
    sigma = max(float(np.std(y[:nb], ddof=1)), noise_floor * peak_excursion)
    level = threshold_sigma * sigma
    below = np.flatnonzero(dev < -level)
    if below.size == 0:
        raise NoTransient(f"no downward excursion beyond {threshold_sigma} sigma")
    i_on = int(below[0])
    nw = max(1, int(round(envelope_window * sample_rate)))
    env = np.sqrt(np.convolve(dev ** 2, np.ones(nw) / nw, mode="full")[nw - 1:])  # trailing-window RMS, aligned left
    quiet = np.flatnonzero(env[i_on + nw:] <= level)
    i_off = x.size - 1 if quiet.size == 0 else i_on + nw + int(quiet[0])
    return t0 + i_on / sample_rate, t0 + i_off / sample_rate


# ---------------------------------------------------------------------------
# decay of post-crouch oscillations


def rms_envelope(samples, sample_rate: float, window: float = 0.2) -> np.ndarray:
    """Centered running RMS over ``window`` seconds."""
    x = np.asarray(samples, dtype=float)
    n = max(1, int(round(window * sample_rate)))
    return np.sqrt(np.convolve(x ** 2, np.ones(n) / n, mode="same"))


def decay_time(samples, sample_rate: float, start: float, fraction: float = 0.1, window: float = 0.2,
               cutoff: float | None = 25.0) -> float:
    """Seconds after ``start`` until the RMS envelope first drops below ``fraction`` of its post-``start`` peak.

    Returns ``inf`` when it never does.
    """
    x = np.asarray(samples, dtype=float)
    if cutoff is not None:
        x = lowpass_zero_phase(x, sample_rate, cutoff)
    env = rms_envelope(x, sample_rate, window)
    i0 = int(round(start * sample_rate))
    tail = env[i0:]
    if tail.size == 0:
        raise AnalysisError("start lies beyond the trace")
    ip = int(np.argmax(tail))
    below = np.flatnonzero(tail[ip:] < fraction * tail[ip])
    if below.size == 0:
        return math.inf
    return (ip + int(below[0])) / sample_rate


# ---------------------------------------------------------------------------
# pose pipeline


@dataclass(frozen=True, eq=False)
class LandmarkTrace:
    """Tracked 2-D landmarks of one leg.

    ``positions`` has shape (frames, 5, 2) in pixels, ordered as
    :data:`LANDMARKS`; ``likelihoods`` has shape (frames, 5).
    """

    positions: np.ndarray
    likelihoods: np.ndarray
    frame_rate: float = 100.0
    name: str = ""

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        lik = np.asarray(self.likelihoods, dtype=float)
        if pos.ndim != 3 or pos.shape[1:] != (len(LANDMARKS), 2):
            raise AnalysisError(f"positions must have shape (frames, {len(LANDMARKS)}, 2), got {pos.shape}")
        if lik.shape != pos.shape[:2]:
            raise AnalysisError("likelihoods must have shape (frames, landmarks)")
        if np.any((lik < 0) | (lik > 1)):
            raise AnalysisError("likelihoods must lie in [0, 1]")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "likelihoods", lik)


def _fill_gaps(values: np.ndarray, max_gap: int) -> np.ndarray:
    """Linearly interpolate interior NaN runs no longer than ``max_gap`` samples."""
    out = values.copy()
    bad = np.isnan(out)
    if not bad.any() or bad.all():
        return out
    good = np.flatnonzero(~bad)
    i = 0
    n = out.size
    while i < n:
        if not bad[i]:
            i += 1
            continue
        j = i
        while j < n and bad[j]:
            j += 1
        if i > 0 and j < n and j - i <= max_gap:
            out[i:j] = np.interp(np.arange(i, j), good, values[good])
        i = j
    return out


def _filter_runs(values: np.ndarray, frame_rate: float, cutoff: float, order: int) -> np.ndarray:
    """Low-pass every contiguous finite run; runs too short to pad are left as they are."""
    out = values.copy()
    finite = np.isfinite(values)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], finite.astype(int), [0]])))
    for start, stop in zip(edges[::2], edges[1::2]):
        if stop - start > 3 * (order // 2 + 1):
            out[start:stop] = lowpass_zero_phase(values[start:stop], frame_rate, cutoff, order)
    return out


def clean_landmarks(trace: LandmarkTrace, likelihood_min: float = 0.95, filter_cutoff: float = 60.0,
                    max_gap: int = 5, filter_order: int = 4) -> np.ndarray:
    """Steps 1-3 of the pose pipeline: drop unreliable points, bridge short gaps, low-pass."""
    if not 0.0 < likelihood_min < 1.0:
        raise AnalysisError(f"likelihood_min must lie in (0, 1), got {likelihood_min}")
    limit = 0.45 * trace.frame_rate
    cutoff = filter_cutoff
    if cutoff >= limit:
        logger.warning("pose filter cutoff %.3g Hz is not below Nyquist for %.3g frame/s; using %.3g Hz",
                       filter_cutoff, trace.frame_rate, limit)
        cutoff = limit
    pos = trace.positions.copy()
    pos[trace.likelihoods < likelihood_min] = np.nan
    for lm in range(pos.shape[1]):
        for c in range(2):
            col = _fill_gaps(pos[:, lm, c], max_gap)
            pos[:, lm, c] = _filter_runs(col, trace.frame_rate, cutoff, filter_order)
    return pos


def segment_lengths(trace: LandmarkTrace, likelihood_min: float = 0.95, filter_cutoff: float = 60.0,
                    max_gap: int = 5, min_valid_frames: int = 10, filter_order: int = 4) -> np.ndarray:
    """Median length (px) of femur, tibia, metatarsus and tarsus across frames."""
    pos = clean_landmarks(trace, likelihood_min, filter_cutoff, max_gap, filter_order)
    lengths = np.linalg.norm(np.diff(pos, axis=1), axis=2)  # (frames, 4)
    medians = np.empty(len(SEGMENTS))
    for s, name in enumerate(SEGMENTS):
        valid = lengths[np.isfinite(lengths[:, s]), s]
        if valid.size < min_valid_frames:
            raise InsufficientData(f"{trace.name or 'leg'}: only {valid.size} reliable frames for the {name} "
                                   f"(need {min_valid_frames})")
        medians[s] = np.median(valid)
    return medians


def pose_segment_ratios(traces, likelihood_min: float = 0.95, filter_cutoff: float = 60.0, max_gap: int = 5,
                        min_valid_frames: int = 10, filter_order: int = 4):
    """Segment/tarsus length ratios (C1, C2, C3, 1) for each landmark trace.

    Accepts a single :class:`LandmarkTrace` (returns one 4-tuple), a sequence
    (returns a list) or a mapping name -> trace (returns a dict).
    """
    def one(trace):
        med = segment_lengths(trace, likelihood_min, filter_cutoff, max_gap, min_valid_frames, filter_order)
        if not med[-1] > 0:
            raise InsufficientData("tarsus length is zero")
        return tuple(float(v) for v in med / med[-1])

    if isinstance(traces, LandmarkTrace):
        return one(traces)
    if isinstance(traces, dict):
        return {k: one(v) for k, v in traces.items()}
    return [one(t) for t in traces]


def read_landmark_csv(path, frame_rate: float = 100.0) -> dict[str, LandmarkTrace]:
    """Read ``frame, landmark, x_px, y_px, likelihood`` rows (optional ``leg`` column) into traces.

    Frames missing for a landmark are treated as likelihood 0.
    """
    rows = defaultdict(dict)
    frames = defaultdict(set)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"frame", "landmark", "x_px", "y_px", "likelihood"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise AnalysisError(f"landmark CSV needs columns {sorted(required)}, got {reader.fieldnames}")
        for row in reader:
            leg = row.get("leg") or "leg"
            lm = row["landmark"].strip().lower()
            if lm not in LANDMARKS:
                raise AnalysisError(f"unknown landmark {row['landmark']!r}")
            f = int(row["frame"])
            rows[leg][(f, lm)] = (float(row["x_px"]), float(row["y_px"]), float(row["likelihood"]))
            frames[leg].add(f)
    out = {}
    for leg in sorted(rows):
        fr = sorted(frames[leg])
        pos = np.full((len(fr), len(LANDMARKS), 2), np.nan)
        lik = np.zeros((len(fr), len(LANDMARKS)))
        for i, f in enumerate(fr):
            for j, lm in enumerate(LANDMARKS):
                if (f, lm) in rows[leg]:
                    x, y, p = rows[leg][(f, lm)]
                    pos[i, j] = (x, y)
                    lik[i, j] = p
        pos = np.nan_to_num(pos)
        out[leg] = LandmarkTrace(pos, lik, frame_rate, leg)
    return out
