"""Face-video -> spatial-temporal map pipeline.

A video plus an 81-point landmark track becomes an n x T x C array of
block-mean values: landmarks are smoothed, each frame is roll-aligned using
the eye centers, a cheek+forehead box is cropped, skin pixels are selected by
a fixed chroma rule, pixels are converted to YUV, and the box is partitioned
into a grid of blocks whose per-channel means form one column of the map.

Landmark convention (81 points per frame): the pipeline only assigns meaning
to five indices; everything else is free-form detector output.

    index 0  left eye center
    index 1  right eye center
    index 2  left outer cheek border
    index 3  right outer cheek border
    index 4  chin tip
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np

N_LANDMARKS = 81
IDX_EYE_L, IDX_EYE_R, IDX_CHEEK_L, IDX_CHEEK_R, IDX_CHIN = 0, 1, 2, 3, 4

# Chroma thresholds for skin selection, in the same YUV space the maps use.
SKIN_Y_RANGE = (40.0, 250.0)
SKIN_U_RANGE = (90.0, 135.0)
SKIN_V_RANGE = (135.0, 180.0)

YUV_MATRIX = np.array([
    [0.299, 0.587, 0.114],
    [-0.169, -0.331, 0.5],
    [0.5, -0.419, -0.081],
], dtype=np.float64)
YUV_OFFSET = np.array([0.0, 128.0, 128.0], dtype=np.float64)


class TrackError(ValueError):
    """Rejected landmark/frame input."""


class MapConfigError(ValueError):
    """Invalid map or augmentation configuration."""


@dataclass(frozen=True)
class FrameSequence:
    """Ordered raster frames plus frame rate. frames: (T, H, W, C) array."""

    frames: np.ndarray
    frame_rate_hz: float
    color_space: str = "RGB"  # "RGB" or "GRAY"

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim == 3:
            frames = frames[..., np.newaxis]
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 4 or frames.shape[3] not in (1, 3):
            raise TrackError(f"expected (T,H,W,C) with C in {{1,3}}, got {frames.shape}")
        if self.color_space not in ("RGB", "GRAY"):
            raise TrackError(f"unknown color space {self.color_space!r}")
        if self.color_space == "GRAY" and frames.shape[3] != 1:
            raise TrackError("GRAY sequences must have a single channel")
        if self.frame_rate_hz <= 0:
            raise TrackError("frame rate must be positive")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class LandmarkTrack:
    """Per-frame 81 (x, y) points plus a per-frame validity flag."""

    points: np.ndarray  # (T, 81, 2) float
    validity: np.ndarray  # (T,) bool

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        val = np.asarray(self.validity, dtype=bool)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "validity", val)
        if pts.ndim != 3 or pts.shape[1] != N_LANDMARKS or pts.shape[2] != 2:
            raise TrackError(f"expected (T,{N_LANDMARKS},2) points, got {pts.shape}")
        if val.shape != (pts.shape[0],):
            raise TrackError("validity length must match frame count")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class RoiBox:
    """Aligned cheek+forehead box: width w, content height h, box height 1.5h."""

    w: float
    h: float
    origin: tuple[float, float]  # (x, y) top-left in the rotated frame
    rotation_deg: float

    @property
    def box_height(self) -> float:
        return 1.5 * self.h


@dataclass
class SpatialTemporalMap:
    """n x T x C block-mean map with per-column mask flags.

    Masked columns (detector failure or augmentation) are exactly zero.
    """

    values: np.ndarray  # (n, T, C)
    frame_rate_hz: float
    mask: np.ndarray = field(default=None)  # (T,) bool, True = zeroed column

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise MapConfigError(f"map must be (n,T,C), got {self.values.shape}")
        if self.mask is None:
            self.mask = np.zeros(self.values.shape[1], dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (self.values.shape[1],):
            raise MapConfigError("mask length must equal T")

    @property
    def n_blocks(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def n_channels(self) -> int:
        return self.values.shape[2]

    def copy(self) -> "SpatialTemporalMap":
        return SpatialTemporalMap(self.values.copy(), self.frame_rate_hz,
                                  self.mask.copy())


def rgb_to_yuv(rgb: np.ndarray) -> np.ndarray:
    """Affine RGB -> YUV map. Accepts (..., 3) arrays; no clamping.

    The chroma rows are evaluated in difference form (coefficients of U sum
    to zero, likewise V) so achromatic inputs land on U = V = 128 exactly
    instead of picking up rounding residue from the raw matrix product.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = -0.169 * (r - b) - 0.331 * (g - b) + 128.0
    v = 0.5 * (r - g) - 0.081 * (b - g) + 128.0
    return np.stack([y, u, v], axis=-1)


def smooth_landmarks(track: LandmarkTrack, window_frames: int = 5) -> LandmarkTrack:
    """Temporal moving average of landmark coordinates.

    Invalid frames are first filled by linear interpolation from the nearest
    valid neighbors (edge frames hold the closest valid value); they stay
    flagged invalid in the output. The average uses truncated edge windows.
    """
    if window_frames < 1 or window_frames % 2 == 0:
        raise TrackError("window_frames must be odd and >= 1")
    valid = track.validity
    if not valid.any():
        raise TrackError("no valid landmark frames")
    t_all = np.arange(len(track))
    t_valid = t_all[valid]
    pts = track.points.copy()
    if not valid.all():
        flat = pts.reshape(len(track), -1)
        for j in range(flat.shape[1]):
            flat[:, j] = np.interp(t_all, t_valid, flat[t_valid, j])
        pts = flat.reshape(pts.shape)

    half = window_frames // 2
    csum = np.concatenate([np.zeros((1,) + pts.shape[1:]), np.cumsum(pts, axis=0)])
    lo = np.clip(t_all - half, 0, len(track))
    hi = np.clip(t_all + half + 1, 0, len(track))
    counts = (hi - lo).astype(np.float64)
    smoothed = (csum[hi] - csum[lo]) / counts[:, None, None]
    return LandmarkTrack(smoothed, valid.copy())


def compute_roi(points: np.ndarray) -> RoiBox:
    """ROI geometry from one frame of landmarks.

    Roll is the angle of the eye-center line; w and h are measured after
    rotating the points so the eyes are level. The box top edge sits half a
    face-height above the eye midpoint so the forehead is covered, the bottom
    edge at the chin.
    """
    points = np.asarray(points, dtype=np.float64)
    eye_l, eye_r = points[IDX_EYE_L], points[IDX_EYE_R]
    d = eye_r - eye_l
    if np.hypot(d[0], d[1]) < 1e-9:
        raise TrackError("coincident eye centers")
    theta = math.atan2(d[1], d[0])
    eye_mid = 0.5 * (eye_l + eye_r)

    # rotate points by -theta about the eye midpoint to level the eyes
    c, s = math.cos(-theta), math.sin(-theta)
    rot = np.array([[c, -s], [s, c]])
    aligned = (points - eye_mid) @ rot.T + eye_mid

    cheek_l, cheek_r = aligned[IDX_CHEEK_L], aligned[IDX_CHEEK_R]
    chin = aligned[IDX_CHIN]
    w = abs(cheek_r[0] - cheek_l[0])
    h = abs(chin[1] - eye_mid[1])
    if w < 1e-9 or h < 1e-9:
        raise TrackError("degenerate ROI geometry")
    x0 = min(cheek_l[0], cheek_r[0])
    y0 = eye_mid[1] - 0.5 * h
    return RoiBox(w=w, h=h, origin=(x0, y0), rotation_deg=math.degrees(theta))


def _skin_mask_patch(patch: np.ndarray, is_gray: bool) -> np.ndarray:
    """Chroma-rule skin mask for an (h, w, C) patch. GRAY bypasses the rule."""
    if is_gray or patch.shape[-1] == 1:
        return np.ones(patch.shape[:2], dtype=bool)
    yuv = rgb_to_yuv(patch)
    y, u, v = yuv[..., 0], yuv[..., 1], yuv[..., 2]
    return ((y >= SKIN_Y_RANGE[0]) & (y <= SKIN_Y_RANGE[1])
            & (u >= SKIN_U_RANGE[0]) & (u <= SKIN_U_RANGE[1])
            & (v >= SKIN_V_RANGE[0]) & (v <= SKIN_V_RANGE[1]))


def skin_mask(frame: np.ndarray, roi: RoiBox) -> np.ndarray:
    """Full-frame boolean skin mask; False outside the (aligned) ROI box."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = frame[..., np.newaxis]
    h_img, w_img = frame.shape[:2]
    x0, y0, x1, y1 = _box_bounds(roi, w_img, h_img)
    out = np.zeros((h_img, w_img), dtype=bool)
    if x1 > x0 and y1 > y0:
        out[y0:y1, x0:x1] = _skin_mask_patch(frame[y0:y1, x0:x1],
                                             frame.shape[2] == 1)
    return out


def _box_bounds(roi: RoiBox, w_img: int, h_img: int):
    x0 = int(round(roi.origin[0]))
    y0 = int(round(roi.origin[1]))
    x1 = int(round(roi.origin[0] + roi.w))
    y1 = int(round(roi.origin[1] + roi.box_height))
    return (max(x0, 0), max(y0, 0), min(x1, w_img), min(y1, h_img))


def _align_frame(frame: np.ndarray, points: np.ndarray, roi: RoiBox) -> np.ndarray:
    """Rotate the frame about the eye midpoint so the eyes are level."""
    if abs(roi.rotation_deg) < 1e-9:
        return np.asarray(frame, dtype=np.float64)
    eye_mid = 0.5 * (points[IDX_EYE_L] + points[IDX_EYE_R])
    # getRotationMatrix2D rotates point coordinates by -angle in y-down
    # image coordinates, which levels an eye line at +rotation_deg
    m = cv2.getRotationMatrix2D((float(eye_mid[0]), float(eye_mid[1])),
                                roi.rotation_deg, 1.0)
    src = np.asarray(frame, dtype=np.float64)
    squeeze = src.ndim == 3 and src.shape[2] == 1
    if squeeze:
        src = src[..., 0]
    warped = cv2.warpAffine(src, m, (src.shape[1], src.shape[0]),
                            flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT,
                            borderValue=0)
    if squeeze:
        warped = warped[..., np.newaxis]
    return warped


def _block_means(seq: FrameSequence, track: LandmarkTrack,
                 grid: tuple[int, int], color: str):
    """Raw (unnormalized) block means and the per-column invalid mask.

    color: "yuv" applies the YUV transform to RGB frames, "raw" keeps the
    native channels. GRAY sequences are always raw single-channel.
    """
    if len(seq) != len(track):
        raise TrackError("landmark track length must match frame count")
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise MapConfigError("grid must be at least 1x1")
    n_blocks = rows * cols
    is_gray = seq.color_space == "GRAY"
    n_ch = 1 if is_gray else 3
    t_total = len(seq)
    values = np.zeros((n_blocks, t_total, n_ch), dtype=np.float64)
    masked = np.zeros(t_total, dtype=bool)

    for t in range(t_total):
        if not track.validity[t]:
            masked[t] = True
            continue
        points = track.points[t]
        try:
            roi = compute_roi(points)
        except TrackError:
            masked[t] = True
            continue
        frame = _align_frame(seq.frames[t], points, roi)
        x0, y0, x1, y1 = _box_bounds(roi, frame.shape[1], frame.shape[0])
        if x1 - x0 < cols or y1 - y0 < rows:
            masked[t] = True
            continue
        patch = frame[y0:y1, x0:x1]
        skin = _skin_mask_patch(patch, is_gray)
        if not skin.any():
            masked[t] = True
            continue
        if color == "yuv" and not is_gray:
            patch = rgb_to_yuv(patch)

        ph, pw = patch.shape[:2]
        r_edges = np.linspace(0, ph, rows + 1).round().astype(int)
        c_edges = np.linspace(0, pw, cols + 1).round().astype(int)
        for bi in range(rows):
            for bj in range(cols):
                blk = patch[r_edges[bi]:r_edges[bi + 1], c_edges[bj]:c_edges[bj + 1]]
                bm = skin[r_edges[bi]:r_edges[bi + 1], c_edges[bj]:c_edges[bj + 1]]
                if bm.any():
                    mean = blk[bm].mean(axis=0)
                else:
                    # no skin in this block: fall back to the full block mean
                    mean = blk.reshape(-1, blk.shape[-1]).mean(axis=0)
                values[bi * cols + bj, t] = mean

    if masked.all():
        raise TrackError("every frame failed landmark/ROI processing")
    values[:, masked, :] = 0.0
    return values, masked


def normalize_map(values: np.ndarray, masked: np.ndarray) -> np.ndarray:
    """Per-channel min-max normalization over unmasked columns.

    Degenerate channels (min == max) normalize to 0.5. Masked columns stay 0.
    """
    out = np.zeros_like(values)
    keep = ~masked
    for c in range(values.shape[2]):
        sub = values[:, keep, c]
        vmin, vmax = sub.min(), sub.max()
        if vmax - vmin < 1e-12:
            out[:, keep, c] = 0.5
        else:
            out[:, keep, c] = (sub - vmin) / (vmax - vmin)
    return out


def build_stmap(seq: FrameSequence, track: LandmarkTrack,
                grid: tuple[int, int] = (5, 5), color: str = "yuv",
                normalize: bool = True) -> SpatialTemporalMap:
    """Full map construction: align, crop, skin-mask, transform, block-average.

    Rows of the map are grid blocks in row-major order. Frames that fail
    (invalid landmarks, degenerate geometry, empty skin mask) become zero
    columns with the mask flag set.
    """
    values, masked = _block_means(seq, track, grid, color)
    if normalize:
        values = normalize_map(values, masked)
    return SpatialTemporalMap(values, seq.frame_rate_hz, masked)


def sliding_clips(seq_len: int, window: int = 300, stride: int = 150):
    """(start, end) index pairs of fixed-length windows covering a sequence."""
    if stride < 1:
        raise MapConfigError("stride must be >= 1")
    if window > seq_len:
        raise MapConfigError(f"sequence too short: {seq_len} < window {window}")
    clips = []
    start = 0
    while start + window <= seq_len:
        clips.append((start, start + window))
        start += stride
    return clips


def mask_augment(stmap: SpatialTemporalMap, rng_seed: int, p_mask: float = 0.5,
                 len_range: tuple[int, int] = (10, 30)) -> SpatialTemporalMap:
    """Temporal masking augmentation: maybe zero one contiguous column run.

    With probability p_mask, a run length is drawn uniformly from len_range
    and a start position uniformly over valid offsets; those columns are
    zeroed and flagged. Deterministic for a fixed seed.
    """
    lo, hi = len_range
    t_total = stmap.n_frames
    if not (1 <= lo <= hi):
        raise MapConfigError("invalid mask length range")
    if hi >= t_total:
        raise MapConfigError(f"mask length {hi} must be < map length {t_total}")
    rng = np.random.default_rng(rng_seed)
    out = stmap.copy()
    if rng.random() < p_mask:
        run = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, t_total - run + 1))
        out.values[:, start:start + run, :] = 0.0
        out.mask[start:start + run] = True
    return out
