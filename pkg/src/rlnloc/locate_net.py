"""Dual-path patch regressor that refines a landmark candidate.

A 64x64 global patch and a 24x24 local patch, both centered on the
candidate, go through one shared stack of three conv blocks.  The global
path pools after every block (64 -> 8); the local path pools after the first
two only (24 -> 6) so that both can be adaptively pooled to 4x4.  The pooled
maps are concatenated, passed through two more conv blocks and a
512-64-2 fully connected head that outputs the pixel offset to the landmark.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .imaging import clamp_point, crop_patch
from .nn import layers as L
from .nn.losses import regression_loss
from .nn.optim import AdamState, adam_step

GLOBAL_PATCH = 64
LOCAL_PATCH = 24
MODES = ("dual", "local_only", "global_only")
MODE_ALIASES = {"dual": "dual", "local": "local_only", "global": "global_only",
                "local_only": "local_only", "global_only": "global_only"}


class PatchSizeError(ValueError):
    pass


@dataclass(frozen=True)
class LocateNetConfig:
    block_channels: tuple = (32, 64, 128)
    fc_units: tuple = (512, 64, 2)
    global_patch: int = GLOBAL_PATCH
    local_patch: int = LOCAL_PATCH
    pool_grid: int = 4
    # pool each path at grids 1, 2 and 4 and stack the upsampled maps
    pyramid: bool = False

    def __post_init__(self):
        if len(self.block_channels) != 3:
            raise ValueError("block_channels needs three entries")
        if tuple(self.fc_units)[-1] != 2:
            raise ValueError("the last fully connected layer must have 2 units")
        if self.global_patch != GLOBAL_PATCH or self.local_patch != LOCAL_PATCH:
            raise ValueError("patch sizes are fixed at 64 (global) and 24 (local)")

    @property
    def pooled_channels(self):
        c = self.block_channels[-1]
        return 3 * c if self.pyramid else c


@dataclass(frozen=True)
class RefineTrainConfig:
    lr: float = 1e-3
    batch: int = 16
    epochs: int = 60
    jitter_radius: float = 10.0
    seed: int = 0
    # draw new candidate jitter every epoch (False: one fixed draw per sample)
    resample_jitter: bool = True
    max_steps: int = 0
    beta: float = 1.0
    standard_smooth_l1: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


def init_params(cfg: LocateNetConfig, seed: int = 0, dtype=np.float32) -> dict:
    rng = np.random.default_rng(seed)
    p = {}
    cin = 1
    for i, c in enumerate(cfg.block_channels):
        p[f"stack.b{i}.w1"] = L.kaiming(rng, (c, cin, 3, 3), cin * 9, dtype)
        p[f"stack.b{i}.w2"] = L.kaiming(rng, (c, c, 3, 3), c * 9, dtype)
        cin = c
    cf = cfg.block_channels[-1]
    cin = 2 * cfg.pooled_channels
    for i in range(2):
        p[f"fuse.b{i}.w1"] = L.kaiming(rng, (cf, cin, 3, 3), cin * 9, dtype)
        p[f"fuse.b{i}.w2"] = L.kaiming(rng, (cf, cf, 3, 3), cf * 9, dtype)
        cin = cf
    width = cf * cfg.pool_grid * cfg.pool_grid
    units = list(cfg.fc_units)
    for i, u in enumerate(units):
        if i == len(units) - 1:
            # zero head: an untrained network leaves the candidate unchanged
            p[f"fc{i + 1}.w"] = np.zeros((u, width), dtype=dtype)
        else:
            p[f"fc{i + 1}.w"] = L.kaiming(rng, (u, width), width, dtype)
        p[f"fc{i + 1}.b"] = np.zeros(u, dtype=dtype)
        width = u
    return p


def config_from_params(params: dict) -> LocateNetConfig:
    """Recover the architecture a parameter dict (e.g. a loaded checkpoint) was built with."""
    try:
        blocks = tuple(int(params[f"stack.b{i}.w1"].shape[0]) for i in range(3))
        fuse_in = int(params["fuse.b0.w1"].shape[1])
        units = []
        i = 1
        while f"fc{i}.w" in params:
            units.append(int(params[f"fc{i}.w"].shape[0]))
            i += 1
        grid2 = int(params["fc1.w"].shape[1]) // blocks[-1]
    except KeyError as exc:
        raise ValueError(f"not a refiner parameter set: missing {exc}") from None
    grid = int(round(math.sqrt(grid2)))
    return LocateNetConfig(block_channels=blocks, fc_units=tuple(units), pool_grid=grid,
                           pyramid=fuse_in == 6 * blocks[-1])


class LocateNet:
    def __init__(self, cfg: LocateNetConfig = LocateNetConfig(), params: dict | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    # -- building blocks ------------------------------------------------------

    def _path(self, x, n_pools):
        caches = []
        for i in range(3):
            x, cb = L.conv_block_forward(x, self.params[f"stack.b{i}.w1"], self.params[f"stack.b{i}.w2"])
            cp = None
            if i < n_pools:
                x, cp = L.max_pool2_forward(x)
            caches.append((cb, cp))
        g = self.cfg.pool_grid
        if self.cfg.pyramid:
            pooled, pcache = [], []
            for level in (1, 2, g):
                y, ca = L.adaptive_max_pool_forward(x, level)
                y, f = L.upsample_nearest_forward(y, g)
                pooled.append(y)
                pcache.append((ca, f))
            return np.concatenate(pooled, axis=1), (caches, pcache)
        y, ca = L.adaptive_max_pool_forward(x, g)
        return y, (caches, ca)

    def _path_backward(self, dy, cache, grads):
        caches, pcache = cache
        if self.cfg.pyramid:
            c = dy.shape[1] // 3
            dx = None
            for k, (ca, f) in enumerate(pcache):
                d = L.upsample_nearest_backward(dy[:, k * c:(k + 1) * c], f)
                d = L.adaptive_max_pool_backward(d, ca)
                dx = d if dx is None else dx + d
        else:
            dx = L.adaptive_max_pool_backward(dy, pcache)
        for i in reversed(range(3)):
            cb, cp = caches[i]
            if cp is not None:
                dx = L.max_pool2_backward(dx, cp)
            dx, dw1, dw2 = L.conv_block_backward(dx, cb)
            for key, g in ((f"stack.b{i}.w1", dw1), (f"stack.b{i}.w2", dw2)):
                grads[key] = grads[key] + g if key in grads else g
        return dx

    # -- network ----------------------------------------------------------------

    def forward(self, global_patch, local_patch, mode="dual"):
        """Offsets (N, 2) for batches of global (N,1,64,64) and local (N,1,24,24) patches."""
        mode = MODE_ALIASES.get(mode, mode)
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        gp = np.asarray(global_patch)
        lp = np.asarray(local_patch)
        if gp.shape[1:] != (1, GLOBAL_PATCH, GLOBAL_PATCH) or lp.shape[1:] != (1, LOCAL_PATCH, LOCAL_PATCH):
            raise PatchSizeError(f"patches must be (N,1,64,64) and (N,1,24,24), got {gp.shape} and {lp.shape}")
        dtype = self.params["fc1.w"].dtype
        gp = gp.astype(dtype, copy=False)
        lp = lp.astype(dtype, copy=False)
        n = gp.shape[0]
        g = self.cfg.pool_grid
        zeros = np.zeros((n, self.cfg.pooled_channels, g, g), dtype=dtype)
        # single-path modes drop the other path's pooled features
        if mode == "local_only":
            fg, cg = zeros, None
        else:
            fg, cg = self._path(gp, 3)
        if mode == "global_only":
            fl, cl = zeros, None
        else:
            fl, cl = self._path(lp, 2)
        x = np.concatenate([fg, fl], axis=1)
        fuse = []
        for i in range(2):
            x, c = L.conv_block_forward(x, self.params[f"fuse.b{i}.w1"], self.params[f"fuse.b{i}.w2"])
            fuse.append(c)
        flat_shape = x.shape
        h = x.reshape(n, -1)
        fcs = []
        n_fc = len(self.cfg.fc_units)
        for i in range(1, n_fc + 1):
            h, c = L.linear_forward(h, self.params[f"fc{i}.w"], self.params[f"fc{i}.b"])
            r = None
            if i < n_fc:
                h, r = L.relu_forward(h)
            fcs.append((c, r))
        return h, (cg, cl, fuse, flat_shape, fcs, fg.shape[1])

    def backward(self, dout, cache):
        cg, cl, fuse, flat_shape, fcs, cpool = cache
        grads = {}
        d = dout
        for i in reversed(range(1, len(fcs) + 1)):
            c, r = fcs[i - 1]
            if r is not None:
                d = L.relu_backward(d, r)
            d, dw, db = L.linear_backward(d, c, self.params[f"fc{i}.w"])
            grads[f"fc{i}.w"] = dw
            grads[f"fc{i}.b"] = db
        d = d.reshape(flat_shape)
        for i in reversed(range(2)):
            d, dw1, dw2 = L.conv_block_backward(d, fuse[i])
            grads[f"fuse.b{i}.w1"] = dw1
            grads[f"fuse.b{i}.w2"] = dw2
        dg, dl = d[:, :cpool], d[:, cpool:]
        if cg is not None:
            self._path_backward(dg, cg, grads)
        if cl is not None:
            self._path_backward(dl, cl, grads)
        for k, v in self.params.items():
            if k not in grads:
                grads[k] = np.zeros_like(v)
        return grads

    def predict(self, global_patch, local_patch, mode="dual"):
        return self.forward(global_patch, local_patch, mode)[0]


def crop_pair(image, center):
    return crop_patch(image, center, GLOBAL_PATCH), crop_patch(image, center, LOCAL_PATCH)


def forward(global_patch, local_patch, params, cfg: LocateNetConfig = LocateNetConfig(), mode="dual"):
    """Offset ``(dx, dy)`` for a single pair of 2D patches."""
    gp = np.asarray(global_patch)
    lp = np.asarray(local_patch)
    if gp.shape != (GLOBAL_PATCH, GLOBAL_PATCH) or lp.shape != (LOCAL_PATCH, LOCAL_PATCH):
        raise PatchSizeError(f"expected 64x64 and 24x24 patches, got {gp.shape} and {lp.shape}")
    out = LocateNet(cfg, params).predict(gp[None, None], lp[None, None], mode)
    return float(out[0, 0]), float(out[0, 1])


def refine(image, candidate, params, cfg: LocateNetConfig = LocateNetConfig(), mode="dual"):
    """Candidate moved by the predicted offset, clamped to the image."""
    gp, lp = crop_pair(image, candidate)
    dx, dy = forward(gp, lp, params, cfg, mode)
    return clamp_point((candidate[0] + dx, candidate[1] + dy), np.shape(image))


def refine_batch(net: LocateNet, images, candidates, mode="dual", batch=32):
    out = []
    for s in range(0, len(images), batch):
        chunk = list(zip(images[s:s + batch], candidates[s:s + batch]))
        gps = np.stack([crop_patch(im, c, GLOBAL_PATCH) for im, c in chunk])[:, None]
        lps = np.stack([crop_patch(im, c, LOCAL_PATCH) for im, c in chunk])[:, None]
        off = net.predict(gps, lps, mode)
        for (im, c), o in zip(chunk, off):
            out.append(clamp_point((c[0] + float(o[0]), c[1] + float(o[1])), np.shape(im)))
    return out


def _jitter(rng, n, radius):
    r = radius * np.sqrt(rng.uniform(size=n))
    phi = rng.uniform(0.0, 2 * math.pi, size=n)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)
    mode: str = "dual"


def train(dataset, cfg: RefineTrainConfig = RefineTrainConfig(), mode="dual",
          net_cfg: LocateNetConfig = LocateNetConfig()) -> TrainResult:
    """Fit the refiner on ``(image, true_landmark)`` pairs.

    Candidates are the true landmarks displaced uniformly within a disk of
    ``jitter_radius``; the target is the displacement back to the truth.
    An entry may carry a third element, a fixed candidate, which is then
    used every epoch instead of a jittered one.  ``history`` holds the mean
    per-sample loss of every epoch.
    """
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not dataset:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    net = LocateNet(net_cfg, seed=int(rng.integers(2 ** 31)))
    state = AdamState(lr=cfg.lr)
    images = [np.asarray(item[0], dtype=np.float32) for item in dataset]
    truths = np.array([item[1] for item in dataset], dtype=np.float64)
    pinned = np.array([item[2] if len(item) > 2 else (np.nan, np.nan) for item in dataset], dtype=np.float64)
    n = len(dataset)
    fixed = _jitter(rng, n, cfg.jitter_radius)
    history = []
    steps = 0
    epoch = 0
    while True:
        if cfg.max_steps:
            if steps >= cfg.max_steps:
                break
        elif epoch >= cfg.epochs:
            break
        jit = _jitter(rng, n, cfg.jitter_radius) if cfg.resample_jitter else fixed
        order = rng.permutation(n)
        total = 0.0
        seen = 0
        for s in range(0, n, cfg.batch):
            idx = order[s:s + cfg.batch]
            cands = np.where(np.isnan(pinned[idx]), truths[idx] + jit[idx], pinned[idx])
            gps = np.stack([crop_patch(images[i], c, GLOBAL_PATCH) for i, c in zip(idx, cands)])[:, None]
            lps = np.stack([crop_patch(images[i], c, LOCAL_PATCH) for i, c in zip(idx, cands)])[:, None]
            target = truths[idx] - cands
            pred, cache = net.forward(gps, lps, mode)
            loss, dpred = regression_loss(pred, target, cfg.beta, cfg.standard_smooth_l1)
            grads = net.backward(dpred, cache)
            adam_step(net.params, grads, state)
            total += loss
            seen += len(idx)
            steps += 1
            if cfg.max_steps and steps >= cfg.max_steps:
                break
        history.append(total / seen)
        epoch += 1
    return TrainResult(net.params, history, mode)
