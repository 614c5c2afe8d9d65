"""Bit-exact interchange formats tying the pipeline stages together.

All binary formats are little-endian and start with 4 magic bytes that
identify both the format and its layout version; readers reject anything
else with FormatError.

    PTRC  pulse trace:  "PTRC", u32 sample count, f64 sample rate, f64 samples
    FSEQ  raw video:    "FSEQ", u32 W, u32 H, u32 C, f64 fps,
                        u8 pixels frame-major (frame count from file size)
    STMP  map:          "STMP", u32 n, u32 T, u32 C, f64 fps, u8 mask[T],
                        f32 values block-major (n, T, C)

Text formats: pulse-trace CSV with header "t_sec,value"; landmark CSV rows
"frame_idx,valid,x0,y0,...,x80,y80"; RGB-trace CSV "frame,r,g,b".

Writes go to a temp file in the destination directory and are renamed into
place, so readers never observe partial output.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .classic import RgbTrace
from .signal_core import PulseTrace
from .stmap import N_LANDMARKS, FrameSequence, LandmarkTrack, SpatialTemporalMap

PTRC_MAGIC = b"PTRC"
FSEQ_MAGIC = b"FSEQ"
STMP_MAGIC = b"STMP"


class FormatError(ValueError):
    """File does not match the expected magic/layout."""


def _atomic_write(path: str, data: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _atomic_write_text(path: str, text: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# -- PTRC -------------------------------------------------------------------

def write_ptrc(trace: PulseTrace, path: str):
    blob = PTRC_MAGIC
    blob += np.array(len(trace), "<u4").tobytes()
    blob += np.array(trace.sample_rate_hz, "<f8").tobytes()
    blob += trace.samples.astype("<f8").tobytes()
    _atomic_write(path, blob)


def read_ptrc(path: str) -> PulseTrace:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PTRC_MAGIC:
        raise FormatError(f"{path}: not a PTRC file")
    count = int(np.frombuffer(blob, "<u4", 1, 4)[0])
    rate = float(np.frombuffer(blob, "<f8", 1, 8)[0])
    samples = np.frombuffer(blob, "<f8", count, 16)
    if samples.size != count:
        raise FormatError(f"{path}: truncated PTRC payload")
    return PulseTrace(samples.copy(), rate)


def write_trace_csv(trace: PulseTrace, path: str):
    lines = ["t_sec,value"]
    for i, v in enumerate(trace.samples):
        lines.append(f"{i / trace.sample_rate_hz:.9f},{float(v)!r}")
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_trace_csv(path: str) -> PulseTrace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["t_sec", "value"]:
        raise FormatError(f"{path}: expected 't_sec,value' header")
    t = np.array([float(r[0]) for r in rows[1:]])
    v = np.array([float(r[1]) for r in rows[1:]])
    if t.size < 2:
        raise FormatError(f"{path}: need at least two samples")
    dt = np.diff(t).mean()
    return PulseTrace(v, 1.0 / dt)


# -- FSEQ -------------------------------------------------------------------

def write_fseq(seq: FrameSequence, path: str):
    t, h, w, c = seq.frames.shape
    blob = FSEQ_MAGIC
    blob += np.array([w, h, c], "<u4").tobytes()
    blob += np.array(seq.frame_rate_hz, "<f8").tobytes()
    pixels = np.clip(np.rint(seq.frames), 0, 255).astype(np.uint8)
    blob += pixels.tobytes()
    _atomic_write(path, blob)


def read_fseq(path: str) -> FrameSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FSEQ_MAGIC:
        raise FormatError(f"{path}: not an FSEQ file")
    w, h, c = (int(v) for v in np.frombuffer(blob, "<u4", 3, 4))
    fps = float(np.frombuffer(blob, "<f8", 1, 16)[0])
    payload = np.frombuffer(blob, np.uint8, offset=24)
    frame_px = h * w * c
    if frame_px == 0 or payload.size % frame_px:
        raise FormatError(f"{path}: FSEQ payload is not a whole frame count")
    frames = payload.reshape(-1, h, w, c).astype(np.float64)
    return FrameSequence(frames, fps, "GRAY" if c == 1 else "RGB")


# -- STMP -------------------------------------------------------------------

def write_stmp(stmap: SpatialTemporalMap, path: str):
    n, t, c = stmap.values.shape
    blob = STMP_MAGIC
    blob += np.array([n, t, c], "<u4").tobytes()
    blob += np.array(stmap.frame_rate_hz, "<f8").tobytes()
    blob += stmap.mask.astype(np.uint8).tobytes()
    blob += np.ascontiguousarray(stmap.values, "<f4").tobytes()
    _atomic_write(path, blob)


def read_stmp(path: str) -> SpatialTemporalMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != STMP_MAGIC:
        raise FormatError(f"{path}: not an STMP file")
    n, t, c = (int(v) for v in np.frombuffer(blob, "<u4", 3, 4))
    fps = float(np.frombuffer(blob, "<f8", 1, 16)[0])
    mask = np.frombuffer(blob, np.uint8, t, 24).astype(bool)
    values = np.frombuffer(blob, "<f4", n * t * c, 24 + t)
    if values.size != n * t * c:
        raise FormatError(f"{path}: truncated STMP payload")
    return SpatialTemporalMap(values.reshape(n, t, c).astype(np.float64),
                              fps, mask.copy())


# -- landmark CSV -----------------------------------------------------------

def write_landmarks_csv(track: LandmarkTrack, path: str):
    lines = []
    header = ["frame_idx", "valid"]
    for i in range(N_LANDMARKS):
        header += [f"x{i}", f"y{i}"]
    lines.append(",".join(header))
    for t in range(len(track)):
        row = [str(t), str(int(track.validity[t]))]
        row += [f"{float(v)!r}" for v in track.points[t].reshape(-1)]
        lines.append(",".join(row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_landmarks_csv(path: str) -> LandmarkTrack:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "frame_idx":
        raise FormatError(f"{path}: expected a landmark CSV header")
    body = rows[1:]
    points = np.zeros((len(body), N_LANDMARKS, 2))
    valid = np.zeros(len(body), dtype=bool)
    for r in body:
        if len(r) != 2 + 2 * N_LANDMARKS:
            raise FormatError(f"{path}: row has {len(r)} fields, "
                              f"expected {2 + 2 * N_LANDMARKS}")
        t = int(r[0])
        valid[t] = bool(int(r[1]))
        points[t] = np.array([float(v) for v in r[2:]]).reshape(N_LANDMARKS, 2)
    return LandmarkTrack(points, valid)


# -- RGB trace CSV ----------------------------------------------------------

def write_rgb_trace_csv(trace: RgbTrace, path: str):
    lines = ["frame,r,g,b"]
    for i in range(len(trace)):
        lines.append(f"{i},{float(trace.r[i])!r},{float(trace.g[i])!r},"
                     f"{float(trace.b[i])!r}")
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_rgb_trace_csv(path: str, sample_rate_hz: float) -> RgbTrace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["frame", "r", "g", "b"]:
        raise FormatError(f"{path}: expected 'frame,r,g,b' header")
    data = np.array([[float(v) for v in r[1:4]] for r in rows[1:]])
    return RgbTrace(data[:, 0], data[:, 1], data[:, 2], sample_rate_hz)


# -- frame directories ------------------------------------------------------

def write_frames_dir(seq: FrameSequence, out_dir: str):
    """Zero-padded numbered PNGs (or PGMs for single-channel sequences)."""
    import cv2
    os.makedirs(out_dir, exist_ok=True)
    ext = "pgm" if seq.frames.shape[3] == 1 else "png"
    for t in range(len(seq)):
        frame = np.clip(np.rint(seq.frames[t]), 0, 255).astype(np.uint8)
        if frame.shape[2] == 3:
            frame = frame[:, :, ::-1]  # RGB -> BGR for OpenCV
        else:
            frame = frame[:, :, 0]
        cv2.imwrite(os.path.join(out_dir, f"frame_{t:06d}.{ext}"), frame)


def read_frames_dir(path: str, fps: float) -> FrameSequence:
    import cv2
    names = sorted(n for n in os.listdir(path)
                   if n.lower().endswith((".png", ".pgm")))
    if not names:
        raise FormatError(f"{path}: no PNG/PGM frames found")
    frames = []
    for name in names:
        img = cv2.imread(os.path.join(path, name), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise FormatError(f"{path}/{name}: unreadable image")
        if img.ndim == 3:
            img = img[:, :, ::-1]  # BGR -> RGB
        else:
            img = img[:, :, None]
        frames.append(img.astype(np.float64))
    stack = np.stack(frames)
    color = "GRAY" if stack.shape[3] == 1 else "RGB"
    return FrameSequence(stack, fps, color)
