"""Synthetic neck-ultrasound phantoms with a fixed anatomical layout.

Each phantom places the trachea, a thyroid lobe with its isthmus, and the
common carotid artery in a canonical arrangement, jitters them per subject,
and rotates the whole scene by the probe angle about the image center.  The
landmark sits in the groove between trachea and thyroid at a fixed offset
from the trachea center (scaled with the subject), plus small noise.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import pgm
from .config import derive_seed

SIZE = 256
BACKGROUND, CCA, THYROID, TRACHEA = 0, 1, 2, 3

# canonical left-side layout; offsets are relative to the trachea center
TRACHEA_CENTER = (70.0, 118.0)
TRACHEA_AXES = (26.0, 22.0)
LOBE_OFFSET = (62.0, 4.0)
LOBE_AXES = (40.0, 24.0)
ISTHMUS_OFFSET = (12.0, -25.0)
ISTHMUS_AXES = (30.0, 9.0)
CCA_OFFSET = (126.0, 10.0)
CCA_RADIUS = 16.0
RLN_OFFSET = (30.0, 35.0)
# whole layout shrunk about the image center to leave room for pose jitter
ANATOMY_SCALE = 0.8

BASE_INTENSITY = {BACKGROUND: 0.42, CCA: 0.06, THYROID: 0.64, TRACHEA: 0.16}
RLN_INTENSITY = 0.12
MANIFEST_HEADER = ["id", "split", "side", "angle_deg", "centroid_x", "centroid_y"]


class GeometryError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhantomParams:
    side: str = "left"
    angle_theta: float = 0.0
    # global shift of the whole anatomy before rotation (px)
    shift: tuple = (0.0, 0.0)
    scale: float = 1.0
    trachea_jitter: tuple = (0.0, 0.0)
    trachea_axes: tuple = TRACHEA_AXES
    lobe_jitter: tuple = (0.0, 0.0)
    lobe_axes: tuple = LOBE_AXES
    lobe_tilt_deg: float = 0.0
    cca_jitter: tuple = (0.0, 0.0)
    cca_radius: float = CCA_RADIUS
    rln_offset: tuple = RLN_OFFSET
    rln_noise: float = 2.0
    speckle: float = 1.0
    distractors: int = 4
    # nerve look-alikes (dot + rim) placed close to the true landmark
    mimics: int = 2
    size: int = SIZE

    def shrunk(self, factor: float) -> "PhantomParams":
        """Same subject with every positional jitter scaled by ``factor``."""
        def s(v):
            return tuple(factor * x for x in v)
        return replace(
            self,
            shift=s(self.shift),
            trachea_jitter=s(self.trachea_jitter),
            lobe_jitter=s(self.lobe_jitter),
            cca_jitter=s(self.cca_jitter),
            angle_theta=self.angle_theta * factor,
        )


@dataclass(frozen=True)
class CohortConfig:
    angle_range: float = 15.0
    shift_range: tuple = (50.0, 70.0)
    organ_jitter: float = 4.0
    scale_range: float = 0.2
    rln_noise: float = 2.0
    distractors: int = 4
    mimics: int = 2
    size: int = SIZE


def sample_params(rng: np.random.Generator, side: str, cfg: CohortConfig = CohortConfig()) -> PhantomParams:
    j = cfg.organ_jitter

    def jit(scale=1.0):
        return tuple(float(v) for v in rng.normal(0.0, j * scale, size=2))

    scale = float(rng.uniform(1.0 - cfg.scale_range, 1.0 + cfg.scale_range))
    return PhantomParams(
        side=side,
        angle_theta=float(rng.uniform(-cfg.angle_range, cfg.angle_range)),
        shift=tuple(float(rng.uniform(-r, r)) for r in cfg.shift_range),
        scale=scale,
        trachea_jitter=jit(0.5),
        trachea_axes=tuple(float(a * rng.uniform(0.92, 1.08)) for a in TRACHEA_AXES),
        lobe_jitter=jit(),
        lobe_axes=tuple(float(a * rng.uniform(0.88, 1.12)) for a in LOBE_AXES),
        lobe_tilt_deg=float(rng.uniform(-6.0, 6.0)),
        cca_jitter=jit(),
        cca_radius=float(CCA_RADIUS * rng.uniform(0.85, 1.15)),
        rln_noise=cfg.rln_noise,
        distractors=cfg.distractors,
        mimics=cfg.mimics,
        size=cfg.size,
    )


def _rot(deg):
    a = math.radians(deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


class _Scene:
    """Canonical-frame geometry of one phantom and its map into the image."""

    def __init__(self, params: PhantomParams):
        p = params
        self.params = p
        s = p.scale * ANATOMY_SCALE
        self.c = (p.size - 1) / 2.0
        # canonical geometry is authored for 256 px images
        k = p.size / SIZE
        mid = (SIZE - 1) / 2.0
        base = (mid + ANATOMY_SCALE * (np.array(TRACHEA_CENTER) - mid)) * k + np.array(p.shift) * k
        self.trachea = base + np.array(p.trachea_jitter) * k
        self.trachea_axes = np.array(p.trachea_axes) * s * k
        self.lobe = self.trachea + np.array(LOBE_OFFSET) * s * k + np.array(p.lobe_jitter) * k
        self.lobe_axes = np.array(p.lobe_axes) * s * k
        self.isthmus = self.trachea + np.array(ISTHMUS_OFFSET) * s * k
        self.isthmus_axes = np.array(ISTHMUS_AXES) * s * k
        self.cca = self.trachea + np.array(CCA_OFFSET) * s * k + np.array(p.cca_jitter) * k
        self.cca_radius = p.cca_radius * s * k
        self.rln = self.trachea + np.array(p.rln_offset) * s * k
        self.mirror = p.side == "right"
        if p.side not in ("left", "right"):
            raise ValueError(f"side must be 'left' or 'right', got {p.side!r}")
        self.rot = _rot(p.angle_theta)

    def to_image(self, q):
        q = np.array(q, dtype=np.float64)
        if self.mirror:
            q[0] = 2 * self.c - q[0]
        return self.rot @ (q - self.c) + self.c

    def grid_to_canonical(self):
        n = self.params.size
        yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
        inv = self.rot.T
        dx, dy = xx - self.c, yy - self.c
        qx = inv[0, 0] * dx + inv[0, 1] * dy + self.c
        qy = inv[1, 0] * dx + inv[1, 1] * dy + self.c
        if self.mirror:
            qx = 2 * self.c - qx
        return qx, qy


def _ellipse(qx, qy, center, axes, tilt_deg=0.0):
    dx, dy = qx - center[0], qy - center[1]
    if tilt_deg:
        a = math.radians(tilt_deg)
        dx, dy = math.cos(a) * dx + math.sin(a) * dy, -math.sin(a) * dx + math.cos(a) * dy
    return (dx / axes[0]) ** 2 + (dy / axes[1]) ** 2 <= 1.0


def rasterize(params: PhantomParams):
    """Label mask and canonical-frame coordinate grids for ``params``."""
    sc = _Scene(params)
    qx, qy = sc.grid_to_canonical()
    mask = np.zeros((params.size, params.size), dtype=np.uint8)
    # painted lowest priority first: CCA, then thyroid, then trachea on top
    mask[(qx - sc.cca[0]) ** 2 + (qy - sc.cca[1]) ** 2 <= sc.cca_radius ** 2] = CCA
    mask[_ellipse(qx, qy, sc.lobe, sc.lobe_axes, params.lobe_tilt_deg)] = THYROID
    mask[_ellipse(qx, qy, sc.isthmus, sc.isthmus_axes)] = THYROID
    mask[_ellipse(qx, qy, sc.trachea, sc.trachea_axes)] = TRACHEA
    return mask, sc


def _in_bounds(mask, point, margin=2):
    n = mask.shape[0]
    edge = np.concatenate([
        mask[:margin].ravel(), mask[-margin:].ravel(), mask[:, :margin].ravel(), mask[:, -margin:].ravel()
    ])
    if edge.any():
        return False
    if not (margin <= point[0] <= n - 1 - margin and margin <= point[1] <= n - 1 - margin):
        return False
    return set(np.unique(mask)) == {0, 1, 2, 3}


def _render_intensity(mask, rln, params, rng):
    n = params.size
    base = np.zeros(mask.shape, dtype=np.float64)
    for lab, v in BASE_INTENSITY.items():
        base[mask == lab] = v
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    # hypoechoic distractor blobs in the background
    for _ in range(params.distractors):
        for _attempt in range(20):
            bx, by = rng.uniform(8, n - 8, size=2)
            if mask[int(by), int(bx)] == BACKGROUND and math.hypot(bx - rln[0], by - rln[1]) > 14:
                break
        r = rng.uniform(2.0, 3.5)
        blob = (xx - bx) ** 2 + (yy - by) ** 2 <= r * r
        base[blob & (mask == BACKGROUND)] = RLN_INTENSITY + 0.06
    # the nerve and its look-alikes: a small dark dot with a slightly bright
    # rim.  Mimics sit 9-16 px away, so only the surrounding anatomy tells
    # them apart from the nerve.
    dots = [tuple(rln)]
    k = n / SIZE
    for _ in range(params.mimics):
        for _attempt in range(20):
            ang = rng.uniform(0.0, 2 * math.pi)
            dist = rng.uniform(9.0, 16.0) * k
            mx, my = rln[0] + dist * math.cos(ang), rln[1] + dist * math.sin(ang)
            ix, iy = int(round(mx)), int(round(my))
            if (3 <= ix < n - 3 and 3 <= iy < n - 3 and mask[iy, ix] == BACKGROUND
                    and all(math.hypot(mx - dx, my - dy) >= 7.0 * k for dx, dy in dots)):
                dots.append((mx, my))
                break
    for dx, dy in dots:
        d2 = (xx - dx) ** 2 + (yy - dy) ** 2
        base[(d2 <= 16.0) & (d2 > 6.25)] += 0.12
        base[d2 <= 6.25] = RLN_INTENSITY
    base = ndimage.gaussian_filter(base, 1.2)
    speckle = rng.gamma(4.0, 0.25, size=mask.shape)
    speckle = ndimage.gaussian_filter(speckle, 0.8)
    speckle = 1.0 + params.speckle * (speckle / speckle.mean() - 1.0)
    img = np.clip(base * speckle, 0.0, 1.0)
    # stored images are 8-bit; keep the in-memory copy on the same grid
    return (np.floor(img * 255.0 + 0.5) / 255.0).astype(np.float32)


def generate_phantom(params: PhantomParams, seed: int, max_attempts: int = 10):
    """Rasterize one subject: ``(mask, image, landmark)``.

    If the anatomy leaves the field of view the jitter is shrunk and the
    subject regenerated; :class:`GeometryError` after ``max_attempts``.
    """
    return _generate(params, seed, max_attempts)[:3]


def _generate(params, seed, max_attempts=10):
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, size=2) * params.rln_noise
    p = params
    for _ in range(max_attempts):
        mask, sc = rasterize(p)
        rln = sc.to_image(sc.rln + noise * (p.size / SIZE))
        if _in_bounds(mask, rln) and groove_predicate(mask, rln, reach=30.0 * p.size / SIZE):
            img = _render_intensity(mask, rln, p, rng)
            return mask, img, (float(rln[0]), float(rln[1])), p
        p = p.shrunk(0.7)
        noise = noise * 0.7
    raise GeometryError(f"phantom geometry out of bounds after {max_attempts} attempts")


def groove_predicate(mask, point, reach: float = 30.0) -> bool:
    """True when ``point`` lies in background next to both trachea and thyroid."""
    x, y = int(round(point[0])), int(round(point[1]))
    h, w = mask.shape
    if not (0 <= x < w and 0 <= y < h) or mask[y, x] != BACKGROUND:
        return False
    for lab in (TRACHEA, THYROID):
        rows, cols = np.nonzero(mask == lab)
        if rows.size == 0:
            return False
        if np.min(np.hypot(cols - point[0], rows - point[1])) > reach:
            return False
    return True


def split_counts(n: int, ratio) -> list[int]:
    ratio = [float(r) for r in ratio]
    if len(ratio) != 3 or min(ratio) < 0 or sum(ratio) <= 0:
        raise ValueError(f"split ratio must be three non-negative numbers, got {ratio}")
    total = sum(ratio)
    counts = [int(math.floor(n * r / total)) for r in ratio]
    counts[0] += n - sum(counts)
    return counts


@dataclass
class ManifestRecord:
    id: str
    split: str
    side: str
    angle_deg: float
    centroid_x: float
    centroid_y: float


@dataclass
class CohortManifest:
    records: list = field(default_factory=list)

    def split(self, name):
        return [r for r in self.records if r.split == name]


def write_manifest(path, manifest: CohortManifest) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            w.writerow([r.id, r.split, r.side, f"{r.angle_deg:.6f}", f"{r.centroid_x:.6f}", f"{r.centroid_y:.6f}"])


def read_manifest(path) -> CohortManifest:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty manifest") from None
        if header != MANIFEST_HEADER:
            raise ValueError(f"{path}: bad manifest header {header}")
        records = []
        seen = set()
        for lineno, row in enumerate(reader, 2):
            if len(row) != len(MANIFEST_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} fields")
            rid, split, side = row[0], row[1], row[2]
            if split not in ("train", "val", "test") or side not in ("left", "right"):
                raise ValueError(f"{path}:{lineno}: bad split/side {split!r}/{side!r}")
            if rid in seen:
                raise ValueError(f"{path}:{lineno}: duplicate id {rid!r}")
            seen.add(rid)
            try:
                vals = [float(v) for v in row[3:]]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
            records.append(ManifestRecord(rid, split, side, *vals))
    return CohortManifest(records)


def generate_cohort(n: int, split_ratio=(150, 20, 50), seed: int = 0, out_dir=".",
                    cfg: CohortConfig = CohortConfig()) -> CohortManifest:
    """Write ``n`` phantoms to ``out_dir`` (``masks/``, ``images/``, ``manifest.csv``)."""
    if n < 3:
        raise ValueError("a cohort needs at least 3 records")
    counts = split_counts(n, split_ratio)
    order = np.random.default_rng(derive_seed(seed, "synth", "split")).permutation(n)
    splits = np.empty(n, dtype=object)
    names = ["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2]
    splits[order] = names
    sides = {}
    seen = {"train": 0, "val": 0, "test": 0}
    for i in range(n):
        sides[i] = "left" if seen[splits[i]] % 2 == 0 else "right"
        seen[splits[i]] += 1

    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    manifest = CohortManifest()
    for i in range(n):
        rid = f"case{i:04d}"
        rng = np.random.default_rng(derive_seed(seed, "synth", "params", i))
        params = sample_params(rng, sides[i], cfg)
        mask, img, rln, params = _generate(params, derive_seed(seed, "synth", "render", i))
        pgm.write_mask(os.path.join(out_dir, "masks", rid + ".pgm"), mask)
        pgm.write_image(os.path.join(out_dir, "images", rid + ".pgm"), img)
        manifest.records.append(ManifestRecord(rid, splits[i], sides[i], params.angle_theta, rln[0], rln[1]))
    write_manifest(os.path.join(out_dir, "manifest.csv"), manifest)
    return manifest
