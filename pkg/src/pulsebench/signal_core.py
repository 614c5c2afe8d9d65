"""Core time-series types and band-limited spectral heart-rate estimation.

All estimators in the toolkit share these primitives: a moving-average
detrender, a linear-phase FIR band-pass, and an FFT peak readout with
parabolic interpolation. Everything here is a pure function over immutable
inputs and safe to call from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import firwin

# Default search band in bpm, slightly wider than typical resting-to-exercise
# heart rates so band edges do not clamp valid estimates.
DEFAULT_BAND_LO_BPM = 42.0
DEFAULT_BAND_HI_BPM = 240.0

FIR_NUM_TAPS = 127  # odd length, symmetric taps, exact integer group delay


class SignalError(ValueError):
    """Rejected input (non-finite samples, degenerate traces)."""


class BandError(ValueError):
    """Invalid band configuration (e.g. above Nyquist, empty band)."""


@dataclass(frozen=True)
class BandConfig:
    """Heart-rate search band in beats per minute."""

    band_lo_bpm: float = DEFAULT_BAND_LO_BPM
    band_hi_bpm: float = DEFAULT_BAND_HI_BPM

    def __post_init__(self):
        if not (0 < self.band_lo_bpm < self.band_hi_bpm):
            raise BandError(
                f"need 0 < lo < hi, got ({self.band_lo_bpm}, {self.band_hi_bpm})"
            )

    @property
    def lo_hz(self) -> float:
        return self.band_lo_bpm / 60.0

    @property
    def hi_hz(self) -> float:
        return self.band_hi_bpm / 60.0


@dataclass(frozen=True)
class PulseTrace:
    """A 1-D pulse signal (BVP ground truth or extracted rPPG trace)."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size < 2:
            raise SignalError("trace needs at least 2 samples")
        if not np.isfinite(self.sample_rate_hz) or self.sample_rate_hz <= 0:
            raise SignalError("sample rate must be finite and positive")
        if not np.all(np.isfinite(samples)):
            raise SignalError("trace contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_sec(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class HrEstimate:
    """A single heart-rate readout, in bpm, tied to its source clip."""

    bpm: float
    clip_index: int = 0
    window_start_frame: int = 0


def detrend(trace: PulseTrace, window_sec: float = 1.0) -> PulseTrace:
    """Subtract a centered moving average of width round(window_sec * fs).

    Edge windows are truncated, so a constant input maps to exactly zero
    everywhere, including the boundaries.
    """
    if window_sec <= 0:
        raise SignalError("window_sec must be positive")
    width = int(round(window_sec * trace.sample_rate_hz))
    if width < 1:
        raise SignalError("window shorter than one sample")
    # removing the grand mean first keeps constant inputs at exactly zero
    x = trace.samples - trace.samples.mean()
    n = x.size
    half = width // 2
    # truncated-window moving average via prefix sums
    csum = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(n)
    lo = np.clip(idx - half, 0, n)
    hi = np.clip(idx - half + width, 0, n)
    ma = (csum[hi] - csum[lo]) / (hi - lo)
    return PulseTrace(x - ma, trace.sample_rate_hz)


def bandpass_taps(band: BandConfig, fs: float, num_taps: int = FIR_NUM_TAPS) -> np.ndarray:
    """Windowed-sinc (Hamming) band-pass taps for the given band and rate."""
    nyq = fs / 2.0
    if band.hi_hz >= nyq:
        raise BandError(f"band top {band.hi_hz} Hz is at/above Nyquist {nyq} Hz")
    return firwin(num_taps, [band.lo_hz, band.hi_hz], pass_zero=False,
                  window="hamming", fs=fs)


def bandpass(trace: PulseTrace, band: BandConfig) -> PulseTrace:
    """Linear-phase FIR band-pass with group-delay compensation.

    The trace is zero-padded at the edges; output length equals input length.
    """
    taps = bandpass_taps(band, trace.sample_rate_hz)
    delay = (taps.size - 1) // 2
    full = np.convolve(trace.samples, taps, mode="full")
    out = full[delay:delay + trace.samples.size]
    return PulseTrace(out, trace.sample_rate_hz)


def _padded_spectrum(x: np.ndarray, fs: float):
    """Hann-windowed, mean-removed, zero-padded magnitude spectrum."""
    n = x.size
    x = x - x.mean()
    # normalize scale up front so estimates are invariant to amplitude
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x / peak
    x = x * np.hanning(n)
    nfft = 1
    while nfft < max(4096, 8 * n):
        nfft *= 2
    mag = np.abs(np.fft.rfft(x, n=nfft))
    freqs = np.arange(mag.size) * (fs / nfft)
    return mag, freqs


def spectral_hr(trace: PulseTrace, band: BandConfig,
                clip_index: int = 0, window_start_frame: int = 0) -> HrEstimate:
    """Band-limited spectral peak readout, in bpm.

    Takes the argmax of the zero-padded magnitude spectrum inside the band
    and refines it with 3-point parabolic interpolation of the log magnitude.
    The result is clamped to the band by construction.
    """
    fs = trace.sample_rate_hz
    if trace.samples.size < 2 * fs:
        raise SignalError("need at least 2 seconds of samples")
    lo_hz = band.lo_hz
    hi_hz = min(band.hi_hz, fs / 2.0)
    if lo_hz >= hi_hz:
        raise BandError("band is empty after Nyquist clipping")

    mag, freqs = _padded_spectrum(trace.samples, fs)
    in_band = np.flatnonzero((freqs >= lo_hz) & (freqs <= hi_hz))
    if in_band.size == 0:
        raise BandError("no FFT bins inside the band")
    k = in_band[np.argmax(mag[in_band])]

    f_peak = freqs[k]
    if 0 < k < mag.size - 1 and mag[k - 1] > 0 and mag[k] > 0 and mag[k + 1] > 0:
        la, lb, lc = np.log(mag[k - 1]), np.log(mag[k]), np.log(mag[k + 1])
        denom = la - 2.0 * lb + lc
        if denom < 0:  # genuine local maximum
            shift = 0.5 * (la - lc) / denom
            if abs(shift) <= 1.0:
                f_peak = (k + shift) * freqs[1]
    bpm = 60.0 * min(max(f_peak, lo_hz), hi_hz)
    bpm = min(max(bpm, band.band_lo_bpm), band.band_hi_bpm)
    return HrEstimate(bpm=bpm, clip_index=clip_index,
                      window_start_frame=window_start_frame)
