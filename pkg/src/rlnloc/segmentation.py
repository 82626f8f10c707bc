"""Query segmentations for shape alignment.

Two providers: an oracle that degrades the ground-truth mask (small random
pose change plus boundary label noise), and a trained encoder-decoder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import AffineTransform2D, as_mask, center_of_mass, resample_mask
from .nn import layers as L
from .nn.losses import seg_loss
from .nn.optim import AdamState, adam_step


@dataclass(frozen=True)
class ProviderConfig:
    mode: str = "oracle_perturb"
    perturb_magnitude: float = 3.0
    dropout_rate: float = 0.05
    max_rotation_deg: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("oracle_perturb", "toy_unet"):
            raise ValueError(f"unknown provider mode {self.mode!r}")
        if self.perturb_magnitude < 0:
            raise ValueError("perturb_magnitude must be >= 0")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")


def _boundary_pixels(mask):
    """Pixels whose 4-neighbourhood holds a different label, with one such label each."""
    h, w = mask.shape
    padded = np.pad(mask, 1, mode="edge")
    center = padded[1:-1, 1:-1]
    neighbours = [padded[:-2, 1:-1], padded[2:, 1:-1], padded[1:-1, :-2], padded[1:-1, 2:]]
    other = np.full(mask.shape, 255, dtype=np.uint16)
    for nb in neighbours:
        pick = (nb != center) & (other == 255)
        other[pick] = nb[pick]
    rows, cols = np.nonzero(other != 255)
    return rows, cols, other[rows, cols].astype(np.uint8)


def perturb(mask, cfg: ProviderConfig) -> np.ndarray:
    mask = as_mask(mask)
    rng = np.random.default_rng(cfg.seed)
    out = mask
    if cfg.perturb_magnitude > 0 or cfg.max_rotation_deg > 0:
        r = cfg.perturb_magnitude * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2 * math.pi)
        ang = math.radians(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg))
        if mask.any() and (r > 0 or ang != 0):
            c = np.array(center_of_mass(mask))
            lin = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
            t = AffineTransform2D(lin, c - lin @ c + r * np.array([math.cos(phi), math.sin(phi)]))
            out = resample_mask(mask, t)
    if cfg.dropout_rate > 0:
        rows, cols, labels = _boundary_pixels(out)
        if rows.size:
            flip = rng.uniform(size=rows.size) < cfg.dropout_rate
            out = out.copy()
            out[rows[flip], cols[flip]] = labels[flip]
    return out if out is not mask else mask.copy()


def provide(ground_truth, cfg: ProviderConfig = ProviderConfig(), image=None, unet=None) -> np.ndarray:
    """Query mask for one record.

    ``oracle_perturb`` degrades ``ground_truth``; ``toy_unet`` segments
    ``image`` with the trained network ``unet`` (a :class:`ToyUNet`).
    """
    if cfg.mode == "oracle_perturb":
        return perturb(ground_truth, cfg)
    if unet is None or image is None:
        raise ValueError("toy_unet mode needs an image and trained network")
    return unet.predict(image)


# -- trainable encoder-decoder ------------------------------------------------

@dataclass(frozen=True)
class ToyUNetConfig:
    encoder_channels: tuple = (8, 16, 32, 64, 128)
    n_classes: int = 4

    def __post_init__(self):
        if len(self.encoder_channels) != 5:
            raise ValueError("the encoder has exactly 5 stages")


def init_unet_params(cfg: ToyUNetConfig, seed: int = 0, dtype=np.float32) -> dict:
    rng = np.random.default_rng(seed)
    ch = list(cfg.encoder_channels)
    p = {}
    cin = 1
    for i, c in enumerate(ch):
        p[f"enc{i}.w1"] = L.kaiming(rng, (c, cin, 3, 3), cin * 9, dtype)
        p[f"enc{i}.w2"] = L.kaiming(rng, (c, c, 3, 3), c * 9, dtype)
        cin = c
    # decoder stage i sees the upsampled deeper map concatenated with skip i
    for i in reversed(range(4)):
        c = ch[i]
        cin = ch[i + 1] + c
        p[f"dec{i}.w1"] = L.kaiming(rng, (c, cin, 3, 3), cin * 9, dtype)
        p[f"dec{i}.w2"] = L.kaiming(rng, (c, c, 3, 3), c * 9, dtype)
    p["head.w"] = L.kaiming(rng, (cfg.n_classes, ch[0], 3, 3), ch[0] * 9, dtype)
    p["head.b"] = np.zeros(cfg.n_classes, dtype=dtype)
    return p


class ToyUNet:
    """Five-stage U-Net: conv blocks, 2x max-pool down, nearest 2x up, skip concat."""

    def __init__(self, cfg: ToyUNetConfig = ToyUNetConfig(), params: dict | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_unet_params(cfg, seed)

    def forward(self, x):
        x = np.asarray(x, dtype=self.params["head.w"].dtype)
        # four poolings must leave at least a 2 x 2 bottleneck
        if x.shape[2] % 16 or x.shape[3] % 16 or min(x.shape[2:]) < 32:
            raise ValueError(f"input sides must be multiples of 16 and at least 32, got {x.shape[2:]}")
        p = self.params
        skips, enc = [], []
        h = x
        for i in range(5):
            h, cb = L.conv_block_forward(h, p[f"enc{i}.w1"], p[f"enc{i}.w2"])
            cp = None
            if i < 4:
                skips.append(h)
                h, cp = L.max_pool2_forward(h)
            enc.append((cb, cp))
        dec = []
        for i in reversed(range(4)):
            up, f = L.upsample_nearest_forward(h, skips[i].shape[2])
            cat = np.concatenate([up, skips[i]], axis=1)
            h, cb = L.conv_block_forward(cat, p[f"dec{i}.w1"], p[f"dec{i}.w2"])
            dec.append((f, up.shape[1], cb))
        logits, ch = L.conv2d_forward(h, p["head.w"], p["head.b"])
        return logits, (enc, dec, ch)

    def backward(self, dlogits, cache):
        enc, dec, ch = cache
        grads = {}
        d, grads["head.w"], grads["head.b"] = L.conv2d_backward(dlogits, ch)
        dskips = {}
        # the decoder ran stages 3..0, so unwind 0..3
        for i in range(4):
            f, cup, cb = dec[3 - i]
            d, grads[f"dec{i}.w1"], grads[f"dec{i}.w2"] = L.conv_block_backward(d, cb)
            dskips[i] = d[:, cup:]
            d = L.upsample_nearest_backward(d[:, :cup], f)
        for i in reversed(range(5)):
            cb, cp = enc[i]
            if cp is not None:
                d = L.max_pool2_backward(d, cp) + dskips[i]
            d, grads[f"enc{i}.w1"], grads[f"enc{i}.w2"] = L.conv_block_backward(d, cb)
        return grads

    def predict(self, image) -> np.ndarray:
        img = np.asarray(image, dtype=np.float32)
        logits, _ = self.forward(img[None, None])
        return logits[0].argmax(axis=0).astype(np.uint8)


@dataclass
class SegTrainResult:
    params: dict
    history: list


def train_toy_unet(dataset, cfg: ToyUNetConfig = ToyUNetConfig(), lr=3e-4, batch=16, epochs=100,
                   decay=0.9, seed=0, max_steps=0) -> SegTrainResult:
    """Fit the U-Net on ``(image, mask)`` pairs with cross-entropy + soft Dice.

    The learning rate is multiplied by ``decay`` after every epoch.  With
    ``max_steps`` set, training stops after that many optimizer steps
    instead of after ``epochs``.  ``history`` holds one mean loss per epoch.
    """
    if not dataset:
        raise ValueError("training set is empty")
    if epochs > 100:
        raise ValueError("epochs is capped at 100")
    rng = np.random.default_rng(seed)
    net = ToyUNet(cfg, seed=int(rng.integers(2 ** 31)))
    state = AdamState(lr=lr)
    images = np.stack([np.asarray(im, dtype=np.float32) for im, _ in dataset])[:, None]
    masks = np.stack([as_mask(m) for _, m in dataset])
    n = len(dataset)
    history = []
    steps = 0
    epoch = 0
    while (steps < max_steps) if max_steps else (epoch < epochs):
        order = rng.permutation(n)
        losses = []
        for s in range(0, n, batch):
            idx = order[s:s + batch]
            logits, cache = net.forward(images[idx])
            loss, dlogits = seg_loss(logits, masks[idx])
            adam_step(net.params, net.backward(dlogits, cache), state)
            losses.append(loss)
            steps += 1
            if max_steps and steps >= max_steps:
                break
        history.append(float(np.mean(losses)))
        epoch += 1
        state.lr *= decay
    return SegTrainResult(net.params, history)
