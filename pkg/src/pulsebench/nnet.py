"""Compact learned HR regressor over spatial-temporal maps.

A small CNN implemented directly in numpy: 3x3 convolutions, ReLU, 2x2 max
pooling, global average pooling and a final linear layer, trained with L1
loss and Adam. A map of shape (n, T, C) is viewed as a C-channel n x T
image. Backpropagation is hand-written and verified by a central
finite-difference gradient check.

The network regresses the frame-rate-normalized heart rate divided by a
fixed internal scale, which keeps targets O(1); predictions are mapped back
to bpm on the way out. No batch-dependent layers are used, so outputs are
independent of batch composition and bit-deterministic under a seed.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .stmap import SpatialTemporalMap, mask_augment

CHECKPOINT_MAGIC = b"RNET"


class ModelConfigError(ValueError):
    pass


def normalize_target(hr_bpm: float, fs: float, fs_ref: float = 30.0) -> float:
    """Frame-rate normalization of the regression target."""
    if fs <= 0 or fs_ref <= 0:
        raise ModelConfigError("frame rates must be positive")
    return hr_bpm * fs_ref / fs


def denormalize_target(y: float, fs: float, fs_ref: float = 30.0) -> float:
    return y * fs / fs_ref


def l1_loss(pred, target) -> float:
    """Mean absolute difference."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.size < 1:
        raise ModelConfigError("pred/target shape mismatch")
    return float(np.abs(pred - target).mean())


# ---------------------------------------------------------------------------
# Layers. Each layer is stateless: parameters live in Model.params.
# forward returns (out, cache); backward returns (dx, [dparam,...]).
# ---------------------------------------------------------------------------

class Conv3x3:
    """3x3 convolution, stride 1, zero padding 1."""

    def __init__(self, c_in: int, c_out: int):
        self.c_in, self.c_out = c_in, c_out

    def spec(self):
        return ("conv", self.c_in, self.c_out)

    def init_params(self, rng, dtype):
        w = rng.standard_normal((self.c_out, self.c_in * 9))
        w *= np.sqrt(2.0 / (self.c_in * 9))
        return [w.astype(dtype), np.zeros(self.c_out, dtype=dtype)]

    def forward(self, x, params):
        w, b = params
        bsz, _, h, wd = x.shape
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz, h * wd, -1)
        out = cols @ w.T + b
        out = out.transpose(0, 2, 1).reshape(bsz, self.c_out, h, wd)
        return out, (cols, x.shape)

    def backward(self, dout, cache, params):
        w, _ = params
        cols, xshape = cache
        bsz, _, h, wd = xshape
        dmat = dout.reshape(bsz, self.c_out, h * wd).transpose(0, 2, 1)
        dw = np.tensordot(dmat, cols, axes=([0, 1], [0, 1]))
        db = dout.sum(axis=(0, 2, 3))
        dcols = dmat @ w  # (B, H*W, C_in*9)
        dcols = dcols.reshape(bsz, h, wd, self.c_in, 3, 3)
        dxp = np.zeros((bsz, self.c_in, h + 2, wd + 2), dtype=dout.dtype)
        for ki in range(3):
            for kj in range(3):
                dxp[:, :, ki:ki + h, kj:kj + wd] += \
                    dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
        return dxp[:, :, 1:1 + h, 1:1 + wd], [dw, db]


class ReLU:
    def spec(self):
        return ("relu",)

    def init_params(self, rng, dtype):
        return []

    def forward(self, x, params):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, cache, params):
        return dout * cache, []


class MaxPool2:
    """2x2 max pooling, stride 2; trailing odd rows/columns are dropped."""

    def spec(self):
        return ("pool", 2)

    def init_params(self, rng, dtype):
        return []

    def forward(self, x, params):
        bsz, ch, h, w = x.shape
        h2, w2 = h // 2, w // 2
        if h2 < 1 or w2 < 1:
            raise ModelConfigError("input too small for 2x2 pooling")
        xr = x[:, :, :h2 * 2, :w2 * 2]
        xr = xr.reshape(bsz, ch, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
        xr = xr.reshape(bsz, ch, h2, w2, 4)
        idx = xr.argmax(axis=-1)
        out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
        return out, (idx, x.shape)

    def backward(self, dout, cache, params):
        idx, xshape = cache
        bsz, ch, h, w = xshape
        h2, w2 = h // 2, w // 2
        dxr = np.zeros((bsz, ch, h2, w2, 4), dtype=dout.dtype)
        np.put_along_axis(dxr, idx[..., None], dout[..., None], axis=-1)
        dxr = dxr.reshape(bsz, ch, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(xshape, dtype=dout.dtype)
        dx[:, :, :h2 * 2, :w2 * 2] = dxr.reshape(bsz, ch, h2 * 2, w2 * 2)
        return dx, []


class GlobalAvgPool:
    def spec(self):
        return ("gap",)

    def init_params(self, rng, dtype):
        return []

    def forward(self, x, params):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, dout, cache, params):
        bsz, ch, h, w = cache
        return np.broadcast_to(dout[:, :, None, None] / (h * w), cache).copy(), []


class Linear:
    def __init__(self, c_in: int, c_out: int, bias_init: float = 0.0):
        self.c_in, self.c_out = c_in, c_out
        self.bias_init = bias_init

    def spec(self):
        return ("fc", self.c_in, self.c_out)

    def init_params(self, rng, dtype):
        w = rng.standard_normal((self.c_out, self.c_in))
        w *= np.sqrt(2.0 / self.c_in)
        b = np.full(self.c_out, self.bias_init)
        return [w.astype(dtype), b.astype(dtype)]

    def forward(self, x, params):
        w, b = params
        return x @ w.T + b, x

    def backward(self, dout, cache, params):
        w, _ = params
        return dout @ w, [dout.T @ cache, dout.sum(axis=0)]


_LAYER_TYPES = {"conv": Conv3x3, "relu": ReLU, "pool": MaxPool2,
                "gap": GlobalAvgPool, "fc": Linear}


def default_architecture(c_in: int) -> list[tuple]:
    return [("conv", c_in, 16), ("relu",), ("pool", 2),
            ("conv", 16, 32), ("relu",), ("pool", 2),
            ("gap",), ("fc", 32, 1)]


@dataclass
class RegressorConfig:
    """Training hyperparameters. architecture=None picks the compact default."""

    architecture: list | None = None
    lr: float = 0.001
    epochs: int = 50
    batch: int = 8
    seed: int = 0
    fs_ref: float = 30.0
    target_scale: float = 60.0   # internal output scale, keeps targets O(1)
    output_bias_bpm: float = 96.0  # prior initializing the final bias
    dtype: str = "float32"
    aug_p_mask: float = 0.5
    aug_len_range: tuple[int, int] = (10, 30)

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.batch < 1:
            raise ModelConfigError("invalid training hyperparameters")


@dataclass
class StageSpec:
    dataset: str               # key into the providers mapping
    epochs: int
    freeze: tuple = ()         # indices of layers whose params stay fixed


@dataclass
class TrainStagePlan:
    stages: list

    def __post_init__(self):
        if not self.stages:
            raise ModelConfigError("training plan needs at least one stage")


class Model:
    """Layer stack plus parameters and prediction metadata."""

    def __init__(self, arch: list[tuple], cfg: RegressorConfig):
        self.arch = [tuple(a) for a in arch]
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        self.layers = []
        for i, spec in enumerate(self.arch):
            kind, args = spec[0], spec[1:]
            if kind not in _LAYER_TYPES:
                raise ModelConfigError(f"unknown layer kind {kind!r}")
            if kind == "conv":
                layer = Conv3x3(*map(int, args))
            elif kind == "fc":
                is_last_fc = all(s[0] != "fc" for s in self.arch[i + 1:])
                bias = cfg.output_bias_bpm / cfg.target_scale if is_last_fc else 0.0
                layer = Linear(int(args[0]), int(args[1]), bias_init=bias)
            elif kind == "pool":
                layer = MaxPool2()
            elif kind == "relu":
                layer = ReLU()
            else:
                layer = GlobalAvgPool()
            self.layers.append(layer)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))
        self.params = [layer.init_params(rng, dtype) for layer in self.layers]

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def astype(self, dtype) -> "Model":
        import copy
        out = copy.deepcopy(self)
        out.cfg.dtype = np.dtype(dtype).name
        out.params = [[p.astype(dtype) for p in lp] for lp in out.params]
        return out

    def forward_full(self, x):
        """Run the stack; returns (scaled outputs (B,), per-layer caches)."""
        caches = []
        for layer, params in zip(self.layers, self.params):
            x, cache = layer.forward(x, params)
            caches.append(cache)
        if x.ndim != 2 or x.shape[1] != 1:
            raise ModelConfigError("model must end in a single output unit")
        return x[:, 0], caches

    def backward_full(self, dpred, caches):
        """Gradients of all parameters given d(loss)/d(output)."""
        grads = [None] * len(self.layers)
        dx = dpred[:, None].astype(self.dtype)
        for i in range(len(self.layers) - 1, -1, -1):
            dx, grads[i] = self.layers[i].backward(dx, caches[i], self.params[i])
        return grads

    def kink_signature(self, caches, pred, target):
        """Hashable record of every nondifferentiable branch taken."""
        parts = [np.sign(pred - target).tobytes()]
        for layer, cache in zip(self.layers, caches):
            if isinstance(layer, ReLU):
                parts.append(np.packbits(cache).tobytes())
            elif isinstance(layer, MaxPool2):
                parts.append(cache[0].tobytes())
        return b"".join(parts)


def map_to_input(stmap: SpatialTemporalMap, dtype=np.float32) -> np.ndarray:
    """(n, T, C) map -> (C, n, T) image."""
    return np.ascontiguousarray(stmap.values.transpose(2, 0, 1), dtype=dtype)


def forward(stmap: SpatialTemporalMap, model: Model) -> float:
    """Normalized HR prediction for one map (deterministic scalar)."""
    x = map_to_input(stmap, model.dtype)[None]
    if x.shape[1] != model.arch[0][1]:
        raise ModelConfigError(
            f"map has {x.shape[1]} channels, model expects {model.arch[0][1]}")
    pred, _ = model.forward_full(x)
    return float(pred[0]) * model.cfg.target_scale


def predict_video(maps: list[SpatialTemporalMap], model: Model, fs: float):
    """Per-clip HRs plus their arithmetic mean as the video HR."""
    if not maps:
        raise ModelConfigError("no maps to predict")
    clip_hrs = [denormalize_target(forward(m, model), fs, model.cfg.fs_ref)
                for m in maps]
    return clip_hrs, float(np.mean(clip_hrs))


class AdamState:
    """Standard Adam with bias correction, one (m, v) pair per parameter."""

    def __init__(self, params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [[np.zeros_like(p, dtype=np.float64) for p in lp] for lp in params]
        self.v = [[np.zeros_like(p, dtype=np.float64) for p in lp] for lp in params]

    def step(self, params, grads, freeze=()):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, (lp, lg) in enumerate(zip(params, grads)):
            if i in freeze or not lg:
                continue
            for j, g in enumerate(lg):
                g = g.astype(np.float64)
                self.m[i][j] = self.beta1 * self.m[i][j] + (1 - self.beta1) * g
                self.v[i][j] = self.beta2 * self.v[i][j] + (1 - self.beta2) * g * g
                update = self.lr * (self.m[i][j] / b1c) / \
                    (np.sqrt(self.v[i][j] / b2c) + self.eps)
                lp[j] -= update.astype(lp[j].dtype)


def adam_step(params, grads, state: AdamState):
    """Single functional-style Adam update (advances state in place)."""
    state.step(params, grads)
    return params


def _epoch_batches(n_items: int, batch: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n_items)
    return [order[i:i + batch] for i in range(0, n_items, batch)]


def train(plan: TrainStagePlan, providers: dict, cfg: RegressorConfig,
          val_data: list | None = None):
    """Run the staged training schedule.

    providers maps dataset names (e.g. "synthetic", "real") to lists of
    (SpatialTemporalMap, hr_bpm, fs) triples. Temporal-mask augmentation is
    applied online with cfg.aug_p_mask unless a map is too short. Returns
    (model, history) where history rows carry denormalized L1 in bpm.
    """
    first = None
    for stage in plan.stages:
        data = providers.get(stage.dataset)
        if not data:
            raise ModelConfigError(f"empty data provider {stage.dataset!r}")
        if first is None:
            first = data[0][0]
    arch = cfg.architecture or default_architecture(first.n_channels)
    model = Model(arch, cfg)
    opt = AdamState(model.params, cfg.lr)
    aug_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 99]))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 98]))
    history = []

    for stage_idx, stage in enumerate(plan.stages):
        data = providers[stage.dataset]
        freeze = set(stage.freeze)
        for epoch in range(stage.epochs):
            abs_err_sum, count = 0.0, 0
            for batch_idx in _epoch_batches(len(data), cfg.batch, shuffle_rng):
                xs, ys, fss = [], [], []
                for i in batch_idx:
                    stmap, hr, fs = data[i]
                    if cfg.aug_p_mask > 0 and stmap.n_frames > cfg.aug_len_range[1]:
                        seed = int(aug_rng.integers(0, 2 ** 31))
                        stmap = mask_augment(stmap, seed, cfg.aug_p_mask,
                                             cfg.aug_len_range)
                    xs.append(map_to_input(stmap, model.dtype))
                    ys.append(normalize_target(hr, fs, cfg.fs_ref)
                              / cfg.target_scale)
                    fss.append(fs)
                x = np.stack(xs)
                y = np.asarray(ys, dtype=np.float64)
                pred, caches = model.forward_full(x)
                dpred = np.sign(pred.astype(np.float64) - y) / y.size
                grads = model.backward_full(dpred, caches)
                opt.step(model.params, grads, freeze)
                err_bpm = np.abs((pred.astype(np.float64) - y)) * cfg.target_scale
                err_bpm *= np.asarray(fss) / cfg.fs_ref
                abs_err_sum += err_bpm.sum()
                count += y.size
            row = {"stage": stage_idx, "dataset": stage.dataset, "epoch": epoch,
                   "train_mae_bpm": abs_err_sum / count}
            if val_data:
                row["val_mae_bpm"] = evaluate_mae(model, val_data)
            history.append(row)
    return model, history


def evaluate_mae(model: Model, data: list) -> float:
    """Mean absolute error in bpm over (map, hr, fs) triples."""
    errs = [abs(denormalize_target(forward(m, model), fs, model.cfg.fs_ref) - hr)
            for m, hr, fs in data]
    return float(np.mean(errs))


def gradient_check(model: Model, stmap: SpatialTemporalMap, target: float,
                   delta: float = 1e-4, max_per_layer: int = 10_000,
                   sample_seed: int = 0) -> float:
    """Max relative error of analytic vs central finite-difference gradients.

    Runs in 64-bit regardless of the model's training dtype. Parameters whose
    perturbation flips a ReLU mask, pooling argmax, or the L1 sign are
    excluded: the loss is not differentiable across those kinks, so a
    finite-difference comparison there is meaningless.
    """
    m64 = model.astype(np.float64)
    x = map_to_input(stmap, np.float64)[None]
    y = np.array([float(target)])

    def loss_and_sig():
        pred, caches = m64.forward_full(x)
        return (float(np.abs(pred - y).mean()),
                m64.kink_signature(caches, pred, y), pred, caches)

    _, base_sig, pred, caches = loss_and_sig()
    dpred = np.sign(pred - y) / y.size
    grads = m64.backward_full(dpred, caches)

    rng = np.random.default_rng(sample_seed)
    max_rel = 0.0
    for li, lparams in enumerate(m64.params):
        for pj, p in enumerate(lparams):
            flat = p.reshape(-1)
            gflat = grads[li][pj].reshape(-1)
            if flat.size > max_per_layer:
                idxs = rng.choice(flat.size, size=max(1, flat.size // 100),
                                  replace=False)
            else:
                idxs = np.arange(flat.size)
            for k in idxs:
                orig = flat[k]
                flat[k] = orig + delta
                lp, sig_p, _, _ = loss_and_sig()
                flat[k] = orig - delta
                lm, sig_m, _, _ = loss_and_sig()
                flat[k] = orig
                if sig_p != base_sig or sig_m != base_sig:
                    continue  # crossed a kink; excluded by design
                gn = (lp - lm) / (2.0 * delta)
                ga = float(gflat[k])
                rel = abs(ga - gn) / max(abs(ga), abs(gn), 1e-8)
                max_rel = max(max_rel, rel)
    return max_rel


# ---------------------------------------------------------------------------
# Checkpoint format: magic "RNET", little-endian, f32 weights, plus a JSON
# metadata sidecar (<path>.json) recording seed, stages and normalization.
# ---------------------------------------------------------------------------

def save_checkpoint(model: Model, path: str, metadata: dict | None = None):
    payload = bytearray()
    payload += CHECKPOINT_MAGIC
    payload += struct.pack("<I", len(model.arch))
    for spec, lparams in zip(model.arch, model.params):
        spec_str = " ".join(str(s) for s in spec).encode()
        payload += struct.pack("<H", len(spec_str)) + spec_str
        payload += struct.pack("<I", len(lparams))
        for p in lparams:
            payload += struct.pack("<B", p.ndim)
            payload += struct.pack(f"<{p.ndim}I", *p.shape)
            payload += np.ascontiguousarray(p, dtype="<f4").tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(payload))
    os.replace(tmp, path)

    meta = {"fs_ref": model.cfg.fs_ref, "target_scale": model.cfg.target_scale,
            "seed": model.cfg.seed, "dtype": "float32"}
    meta.update(metadata or {})
    tmp = path + ".json.tmp"
    with open(tmp, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path + ".json")


def load_checkpoint(path: str) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ModelConfigError("not a model checkpoint (bad magic)")
    off = 4
    (n_layers,) = struct.unpack_from("<I", blob, off)
    off += 4
    arch, all_params = [], []
    for _ in range(n_layers):
        (slen,) = struct.unpack_from("<H", blob, off)
        off += 2
        parts = blob[off:off + slen].decode().split()
        off += slen
        arch.append(tuple([parts[0]] + [int(v) for v in parts[1:]]))
        (n_params,) = struct.unpack_from("<I", blob, off)
        off += 4
        lparams = []
        for _ in range(n_params):
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            count = int(np.prod(shape))
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            off += 4 * count
            lparams.append(arr.reshape(shape).astype(np.float32))
        all_params.append(lparams)

    cfg = RegressorConfig(architecture=arch, dtype="float32")
    meta_path = path + ".json"
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
        cfg.fs_ref = float(meta.get("fs_ref", cfg.fs_ref))
        cfg.target_scale = float(meta.get("target_scale", cfg.target_scale))
        cfg.seed = int(meta.get("seed", cfg.seed))
    model = Model(arch, cfg)
    model.params = all_params
    return model
