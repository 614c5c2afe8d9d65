"""Classical rPPG pulse extraction: GREEN, CHROM, and POS.

All three operate on spatially averaged skin-pixel RGB traces and share the
spectral peak readout from signal_core.

References:
    GREEN: Verkruysse, Svaasand & Nelson, Optics Express 2008.
    CHROM: de Haan & Jeanne, IEEE TBME 2013.
    POS:   Wang, den Brinker, Stuijk & de Haan, IEEE TBME 2017.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal_core import (BandConfig, HrEstimate, PulseTrace, SignalError,
                          bandpass, detrend, spectral_hr)
from .stmap import FrameSequence, LandmarkTrack, build_stmap

# Fixed plane-orthogonal-to-skin projection (Wang 2017).
POS_PROJECTION = np.array([[0.0, 1.0, -1.0], [-2.0, 1.0, 1.0]])

_DEGENERATE_STD = 1e-12


@dataclass(frozen=True)
class RgbTrace:
    """Per-frame skin-mean R, G, B values."""

    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        for name in ("r", "g", "b"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
        if not (self.r.shape == self.g.shape == self.b.shape) or self.r.ndim != 1:
            raise SignalError("r, g, b must be equal-length 1-D arrays")
        if not all(np.all(np.isfinite(ch)) for ch in (self.r, self.g, self.b)):
            raise SignalError("trace contains non-finite values")

    def __len__(self) -> int:
        return self.r.size

    def stacked(self) -> np.ndarray:
        """(T, 3) channel matrix."""
        return np.stack([self.r, self.g, self.b], axis=1)


def extract_rgb_trace(seq: FrameSequence, track: LandmarkTrack) -> RgbTrace:
    """Whole-ROI skin-pixel channel means, one value per frame.

    This is the 1x1-grid spatial-temporal map before normalization. Frames
    where landmarks failed are filled by linear interpolation from the
    nearest processed frames. GRAY sequences replicate their single channel.
    """
    stmap = build_stmap(seq, track, grid=(1, 1), color="raw", normalize=False)
    vals = stmap.values[0]  # (T, C)
    masked = stmap.mask
    if masked.any():
        t_all = np.arange(vals.shape[0])
        t_ok = t_all[~masked]
        for c in range(vals.shape[1]):
            vals[:, c] = np.interp(t_all, t_ok, vals[t_ok, c])
    if vals.shape[1] == 1:
        ch = vals[:, 0]
        return RgbTrace(ch, ch.copy(), ch.copy(), seq.frame_rate_hz)
    return RgbTrace(vals[:, 0], vals[:, 1], vals[:, 2], seq.frame_rate_hz)


def green_hr(trace: RgbTrace, band: BandConfig = BandConfig(),
             clip_index: int = 0, window_start_frame: int = 0) -> HrEstimate:
    """Green-channel method: detrend, band-pass, spectral peak."""
    mu = trace.g.mean()
    if mu <= 0:
        raise SignalError("green channel mean must be positive")
    g = PulseTrace(trace.g / mu, trace.sample_rate_hz)
    filtered = bandpass(detrend(g), band)
    return spectral_hr(filtered, band, clip_index, window_start_frame)


def chrom_pulse(trace: RgbTrace, band: BandConfig = BandConfig()) -> PulseTrace:
    """CHROM chrominance pulse signal (before spectral readout)."""
    fs = trace.sample_rate_hz
    mu = trace.stacked().mean(axis=0)
    if np.any(mu <= 0):
        raise SignalError("CHROM requires positive channel means")
    rn, gn, bn = trace.r / mu[0], trace.g / mu[1], trace.b / mu[2]
    xc = 3.0 * rn - 2.0 * gn
    yc = 1.5 * rn + gn - 1.5 * bn
    xf = bandpass(PulseTrace(xc, fs), band).samples
    yf = bandpass(PulseTrace(yc, fs), band).samples
    sy = yf.std()
    if sy < _DEGENERATE_STD:
        raise SignalError("degenerate chrominance: sigma(Yc) is zero")
    s = xf - (xf.std() / sy) * yf
    if s.std() < _DEGENERATE_STD:
        raise SignalError("degenerate chrominance: combined signal is constant")
    return PulseTrace(s, fs)


def chrom_hr(trace: RgbTrace, band: BandConfig = BandConfig(),
             clip_index: int = 0, window_start_frame: int = 0) -> HrEstimate:
    """CHROM method of de Haan 2013 with std-ratio alpha combination."""
    return spectral_hr(chrom_pulse(trace, band), band,
                       clip_index, window_start_frame)


def pos_pulse(trace: RgbTrace, window_sec: float = 1.6) -> PulseTrace:
    """POS pulse via overlap-added plane-orthogonal-to-skin projections.

    Each sliding window is temporally normalized by its channel means,
    projected with the fixed POS matrix, combined as s1 + alpha*s2 with
    alpha = std(s1)/std(s2) (alpha = 0 when std(s2) vanishes), mean-removed
    and accumulated.
    """
    fs = trace.sample_rate_hz
    rgb = trace.stacked()  # (T, 3)
    t_total = rgb.shape[0]
    win = int(round(window_sec * fs))
    if win < 2 or win > t_total:
        raise SignalError("POS window must fit inside the trace")
    out = np.zeros(t_total)
    for start in range(t_total - win + 1):
        seg = rgb[start:start + win]
        mu = seg.mean(axis=0)
        if np.any(mu <= 0):
            raise SignalError("POS requires positive channel means per window")
        cn = seg / mu
        s = cn @ POS_PROJECTION.T  # (win, 2)
        s1, s2 = s[:, 0], s[:, 1]
        sd2 = s2.std()
        alpha = s1.std() / sd2 if sd2 >= _DEGENERATE_STD else 0.0
        h = s1 + alpha * s2
        out[start:start + win] += h - h.mean()
    if out.std() < _DEGENERATE_STD:
        raise SignalError("degenerate POS output")
    return PulseTrace(out, fs)


def pos_hr(trace: RgbTrace, band: BandConfig = BandConfig(),
           window_sec: float = 1.6, clip_index: int = 0,
           window_start_frame: int = 0) -> HrEstimate:
    """POS method of Wang 2017."""
    return spectral_hr(pos_pulse(trace, window_sec), band,
                       clip_index, window_start_frame)


ESTIMATORS = {
    "green": green_hr,
    "chrom": chrom_hr,
    "pos": pos_hr,
}
