"""Synthetic ground-truth generators and video degradation operators.

Provides pulse waveforms, pulsatile face videos with matching landmark
tracks, directly synthesized spatial-temporal maps for pretraining, and
deterministic codec-proxy degradation operators (area resize, block-DCT
quantization, frame drops) for compression-impact studies.

Every generator is exactly reproducible from its config and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.fft import dctn, idctn

from .classic import ESTIMATORS, extract_rgb_trace
from .signal_core import BandConfig, PulseTrace
from .stmap import (N_LANDMARKS, IDX_CHEEK_L, IDX_CHEEK_R, IDX_CHIN,
                    IDX_EYE_L, IDX_EYE_R, FrameSequence, LandmarkTrack,
                    MapConfigError, SpatialTemporalMap, normalize_map)

# Relative pulsatile amplitude (AC/DC ratio) of the rendered skin signal.
PULSE_AC_RATIO = 0.02

# Skin chroma: per-channel multipliers on the base intensity. Chosen so the
# rendered tone passes the pipeline's chroma rule across the intensity range.
SKIN_CHROMA = np.array([1.25, 1.0, 0.85])
BACKGROUND_RGB = np.array([30.0, 30.0, 30.0])

JPEG_LUMA_QTABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of one synthetic recording."""

    hr_bpm: float = 72.0
    duration_sec: float = 20.0
    fps: float = 30.0
    pulse_strength: tuple[float, float, float] = (0.7, 1.0, 0.5)
    base_intensity: float = 150.0
    motion_amp_px: float = 0.0
    illum_drift: tuple[float, float] = (0.2, 0.0)  # (freq_hz, rel_amp)
    noise_sigma: float = 0.0
    seed: int = 0
    width: int = 80
    height: int = 104
    gray: bool = False

    def __post_init__(self):
        if self.fps <= 2.0 * self.hr_bpm / 60.0:
            raise ValueError("fps must exceed twice the heart-rate frequency")
        if self.duration_sec <= 0 or self.hr_bpm <= 0:
            raise ValueError("duration and heart rate must be positive")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_sec * self.fps))


@dataclass(frozen=True)
class DegradeOp:
    """One degradation operator: resize, quantize, frame_drop, or identity."""

    kind: str
    scale: float = 1.0          # resize
    quality: int = 100          # quantize, JPEG-style 1..100
    p: float = 0.0              # frame_drop probability
    seed: int = 0               # frame_drop randomness

    def __post_init__(self):
        if self.kind not in ("resize", "quantize", "frame_drop", "identity"):
            raise MapConfigError(f"unknown degradation kind {self.kind!r}")
        if not (0.0 < self.scale <= 1.0):
            raise MapConfigError("scale must be in (0, 1]")
        if not (1 <= self.quality <= 100):
            raise MapConfigError("quality must be in [1, 100]")
        if not (0.0 <= self.p <= 1.0):
            raise MapConfigError("drop probability must be in [0, 1]")

    @property
    def label(self) -> str:
        if self.kind == "resize":
            return f"resize_{self.scale:g}"
        if self.kind == "quantize":
            return f"quantize_q{self.quality}"
        if self.kind == "frame_drop":
            return f"framedrop_p{self.p:g}"
        return "identity"


def _stream(seed: int, role: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), role]))


def gen_bvp(cfg: SynthConfig) -> PulseTrace:
    """Pulse waveform: fundamental plus a 0.3-amplitude second harmonic.

    The harmonic phase is drawn from the seed; the trace is normalized to
    unit standard deviation.
    """
    rng = _stream(cfg.seed, 0)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    t = np.arange(cfg.n_frames) / cfg.fps
    f = cfg.hr_bpm / 60.0
    p = np.sin(2 * math.pi * f * t) + 0.3 * np.sin(4 * math.pi * f * t + phi)
    return PulseTrace(p / p.std(), cfg.fps)


def face_template(width: int, height: int) -> np.ndarray:
    """Canonical 81-landmark layout for the rendered face ellipse."""
    cx, cy = width / 2.0, height / 2.0
    pts = np.zeros((N_LANDMARKS, 2))
    pts[IDX_EYE_L] = (cx - 0.17 * width, cy - 0.12 * height)
    pts[IDX_EYE_R] = (cx + 0.17 * width, cy - 0.12 * height)
    pts[IDX_CHEEK_L] = (cx - 0.30 * width, cy + 0.05 * height)
    pts[IDX_CHEEK_R] = (cx + 0.30 * width, cy + 0.05 * height)
    pts[IDX_CHIN] = (cx, cy + 0.34 * height)
    ang = np.linspace(0, 2 * math.pi, N_LANDMARKS - 5, endpoint=False)
    pts[5:, 0] = cx + 0.34 * width * np.cos(ang)
    pts[5:, 1] = cy + 0.34 * height * np.sin(ang)
    return pts


def _face_axes(width: int, height: int) -> tuple[float, float]:
    return 0.38 * width, 0.38 * height


def gen_video(cfg: SynthConfig, illum_fn=None):
    """Render a pulsatile flat-skin face video with a matching landmark track.

    Skin pixels follow base_c * (1 + strength_c * a * p(t)) * (1 + drift(t))
    plus Gaussian noise; rigid translation/rotation jitter of amplitude
    motion_amp_px moves pixels and landmarks together. illum_fn overrides the
    sinusoidal drift with a custom multiplier of t (in seconds).

    Returns (FrameSequence, LandmarkTrack, ground-truth PulseTrace).
    """
    bvp = gen_bvp(cfg)
    p = bvp.samples
    n, w, h = cfg.n_frames, cfg.width, cfg.height
    t_sec = np.arange(n) / cfg.fps

    drift_f, drift_a = cfg.illum_drift
    if illum_fn is not None:
        drift = np.asarray([illum_fn(float(tv)) for tv in t_sec])
    else:
        drift = drift_a * np.sin(2 * math.pi * drift_f * t_sec)

    motion_rng = _stream(cfg.seed, 1)
    phases = motion_rng.uniform(0, 2 * math.pi, size=3)
    freqs = motion_rng.uniform(0.15, 0.4, size=3)
    amp = cfg.motion_amp_px
    tx = amp * np.sin(2 * math.pi * freqs[0] * t_sec + phases[0])
    ty = amp * np.sin(2 * math.pi * freqs[1] * t_sec + phases[1])
    rot = np.deg2rad(amp) * np.sin(2 * math.pi * freqs[2] * t_sec + phases[2])

    noise_rng = _stream(cfg.seed, 2)
    template = face_template(w, h)
    ax, ay = _face_axes(w, h)
    cx, cy = w / 2.0, h / 2.0
    n_ch = 1 if cfg.gray else 3
    if cfg.gray:
        base = np.array([cfg.base_intensity])
        strength = np.array([cfg.pulse_strength[1]])
        background = np.array([BACKGROUND_RGB[0]])
    else:
        base = cfg.base_intensity * SKIN_CHROMA
        strength = np.asarray(cfg.pulse_strength)
        background = BACKGROUND_RGB

    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    gx, gy = np.meshgrid(xs, ys)

    frames = np.empty((n, h, w, n_ch), dtype=np.float64)
    points = np.empty((n, N_LANDMARKS, 2))
    for t in range(n):
        c, s = math.cos(rot[t]), math.sin(rot[t])
        fcx, fcy = cx + tx[t], cy + ty[t]
        # rotate the pixel grid into the face frame to test ellipse membership
        dx, dy = gx - fcx, gy - fcy
        u = (c * dx + s * dy) / ax
        v = (-s * dx + c * dy) / ay
        inside = (u * u + v * v) <= 1.0

        skin = base * (1.0 + strength * PULSE_AC_RATIO * p[t]) * (1.0 + drift[t])
        bg = background * (1.0 + drift[t])
        frame = np.where(inside[..., None], skin, bg)
        if cfg.noise_sigma > 0:
            frame = frame + noise_rng.normal(0.0, cfg.noise_sigma, size=frame.shape)
        frames[t] = frame

        rel = template - (cx, cy)
        points[t, :, 0] = c * rel[:, 0] - s * rel[:, 1] + fcx
        points[t, :, 1] = s * rel[:, 0] + c * rel[:, 1] + fcy

    seq = FrameSequence(frames, cfg.fps, "GRAY" if cfg.gray else "RGB")
    track = LandmarkTrack(points, np.ones(n, dtype=bool))
    return seq, track, bvp


def gen_synth_map(cfg: SynthConfig, grid: tuple[int, int] = (5, 5)):
    """Directly synthesize a normalized spatial-temporal map with known HR.

    Each block carries the pulse waveform scaled by a per-block gain drawn
    from U[0.8, 1.2], plus Gaussian noise, then the standard per-channel
    min-max normalization. Returns (SpatialTemporalMap, hr_bpm).
    """
    bvp = gen_bvp(cfg)
    p = bvp.samples
    n_blocks = grid[0] * grid[1]
    n_ch = 1 if cfg.gray else 3
    rng = _stream(cfg.seed, 3)
    gains = rng.uniform(0.8, 1.2, size=n_blocks)
    strength = np.asarray([cfg.pulse_strength[1]] if cfg.gray
                          else cfg.pulse_strength)
    strength = strength / strength.max()
    values = (0.5
              + 0.1 * gains[:, None, None] * strength[None, None, :]
              * p[None, :, None])
    if cfg.noise_sigma > 0:
        # noise_sigma is in 8-bit intensity units; maps live in [0, 1]
        values = values + rng.normal(0.0, cfg.noise_sigma / 255.0,
                                     size=values.shape)
    masked = np.zeros(cfg.n_frames, dtype=bool)
    values = normalize_map(values, masked)
    return SpatialTemporalMap(values, cfg.fps, masked), cfg.hr_bpm


def gen_synth_dataset(count: int, seed: int, grid: tuple[int, int] = (5, 5),
                      hr_range: tuple[float, float] = (47.0, 146.0),
                      duration_sec: float = 10.0, fps: float = 30.0,
                      noise_sigma: float = 0.0, gray: bool = False):
    """A list of (map, hr_bpm, fps) triples with HR drawn uniformly."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 10]))
    out = []
    for i in range(count):
        hr = float(rng.uniform(*hr_range))
        cfg = SynthConfig(hr_bpm=hr, duration_sec=duration_sec, fps=fps,
                          noise_sigma=noise_sigma, seed=seed * 100003 + i,
                          gray=gray)
        stmap, _ = gen_synth_map(cfg, grid)
        out.append((stmap, hr, fps))
    return out


def _quant_table(quality: int) -> np.ndarray:
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    tbl = np.floor((JPEG_LUMA_QTABLE * scale + 50.0) / 100.0)
    return np.clip(tbl, 1.0, 255.0)


def _quantize_frames(frames: np.ndarray, quality: int) -> np.ndarray:
    """8x8 block-DCT quantization of every frame/channel (intra only)."""
    t_total, h, w, n_ch = frames.shape
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    x = np.pad(frames, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    hp, wp = x.shape[1], x.shape[2]
    x = x - 128.0
    blocks = x.reshape(t_total, hp // 8, 8, wp // 8, 8, n_ch)
    coef = dctn(blocks, type=2, axes=(2, 4), norm="ortho")
    q = _quant_table(quality)[None, None, :, None, :, None]
    coef = np.round(coef / q) * q
    rec = idctn(coef, type=2, axes=(2, 4), norm="ortho")
    rec = rec.reshape(t_total, hp, wp, n_ch) + 128.0
    return rec[:, :h, :w, :]


def degrade(seq: FrameSequence, op: DegradeOp) -> FrameSequence:
    """Apply one degradation operator; frame count and rate never change."""
    if op.kind == "identity":
        return seq
    if op.kind == "resize":
        if op.scale == 1.0:
            return seq
        h, w = seq.frames.shape[1:3]
        nw, nh = max(1, round(w * op.scale)), max(1, round(h * op.scale))
        out = np.empty((len(seq), nh, nw, seq.frames.shape[3]))
        for t in range(len(seq)):
            src = seq.frames[t].astype(np.float32)
            if src.shape[2] == 1:
                res = cv2.resize(src[..., 0], (nw, nh),
                                 interpolation=cv2.INTER_AREA)[..., None]
            else:
                res = cv2.resize(src, (nw, nh), interpolation=cv2.INTER_AREA)
            out[t] = res
        return FrameSequence(out, seq.frame_rate_hz, seq.color_space)
    if op.kind == "quantize":
        out = _quantize_frames(seq.frames.astype(np.float64), op.quality)
        return FrameSequence(out, seq.frame_rate_hz, seq.color_space)
    # frame_drop: Bernoulli replacement by the previous kept frame
    rng = np.random.default_rng(np.random.SeedSequence([int(op.seed), 20]))
    out = seq.frames.copy()
    for t in range(1, len(seq)):
        if rng.random() < op.p:
            out[t] = out[t - 1]
    return FrameSequence(out, seq.frame_rate_hz, seq.color_space)


def default_suite(n_videos: int = 6, seed: int = 0,
                  duration_sec: float = 20.0) -> list[SynthConfig]:
    """Fixed mixed-HR suite used by the compression study."""
    hrs = np.linspace(55.0, 130.0, n_videos)
    return [SynthConfig(hr_bpm=float(hr), duration_sec=duration_sec,
                        noise_sigma=1.0, seed=seed * 1000 + i)
            for i, hr in enumerate(hrs)]


def compression_study(suite: list[SynthConfig], ops: list[DegradeOp],
                      method: str = "chrom",
                      band: BandConfig = BandConfig()):
    """RMSE of one estimator over the suite, per degradation operator.

    Returns rows [(label, rmse_bpm)] starting with the undegraded "source"
    baseline, mirroring side-by-side codec comparisons.
    """
    if not suite:
        raise ValueError("suite must be nonempty")
    estimator = ESTIMATORS[method]
    videos = [gen_video(cfg) for cfg in suite]
    truths = np.array([cfg.hr_bpm for cfg in suite])

    def run(transform):
        errs = []
        for (seq, track, _), truth in zip(videos, truths):
            est = estimator(extract_rgb_trace(transform(seq), track), band)
            errs.append(est.bpm - truth)
        return float(np.sqrt(np.mean(np.square(errs))))

    rows = [("source", run(lambda s: s))]
    for op in ops:
        rows.append((op.label, run(lambda s, op=op: degrade(s, op))))
    return rows
