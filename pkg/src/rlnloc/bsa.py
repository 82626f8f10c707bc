"""Atlas-based landmark candidates by shape alignment and top-k fusion.

Every atlas mask is registered onto the query mask, scored by Dice after
warping, and the atlas landmarks carried by the best ``k`` transforms are
averaged into the candidate.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import pgm
from .config import derive_seed
from .imaging import (
    AffineTransform2D,
    EmptyMaskError,
    apply_to_point,
    as_mask,
    clamp_point,
    dice_from_histogram,
    union_dice_from_histogram,
    warped_joint_histogram,
)
from .registration import RegistrationConfig, register, with_seed
from .synth import read_manifest

SIDES = ("left", "right")


class AtlasError(ValueError):
    pass


@dataclass(frozen=True)
class AtlasEntry:
    id: str
    mask: np.ndarray
    landmark: tuple


@dataclass
class AtlasLibrary:
    entries: list
    side: str = "left"

    def __post_init__(self):
        if self.side not in SIDES:
            raise AtlasError(f"side must be one of {SIDES}, got {self.side!r}")
        if not self.entries:
            raise AtlasError("atlas library is empty")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise AtlasError("atlas ids must be unique")
        shape = self.entries[0].mask.shape
        for e in self.entries:
            if e.mask.shape != shape:
                raise AtlasError(f"atlas entry {e.id}: shape {e.mask.shape} differs from {shape}")
            if not e.mask.any():
                raise AtlasError(f"atlas entry {e.id}: empty mask")
            h, w = e.mask.shape
            if not (0 <= e.landmark[0] < w and 0 <= e.landmark[1] < h):
                raise AtlasError(f"atlas entry {e.id}: landmark outside the mask")

    @property
    def shape(self):
        return self.entries[0].mask.shape

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class BsaConfig:
    k: int = 5
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    # skip the affine step (identity transforms); used by the alignment ablation
    align: bool = True
    # Dice-weighted rather than plain mean of the top-k landmarks
    weighted: bool = False
    workers: int = 1
    # "per_class" (mean over organs) or "union" (foreground vs background)
    dice_mode: str = "per_class"

    def __post_init__(self):
        if self.dice_mode not in ("per_class", "union"):
            raise ValueError(f"dice_mode must be per_class or union, got {self.dice_mode!r}")


@dataclass(frozen=True)
class RankedEntry:
    atlas_id: str
    dice: float
    landmark: tuple
    transform: AffineTransform2D


@dataclass(frozen=True)
class BsaResult:
    candidate: tuple
    ranked: list
    k: int

    @property
    def top_ids(self):
        return [r.atlas_id for r in self.ranked[: self.k]]


def _score_entry(index, entry, query, cfg):
    if cfg.align:
        reg_cfg = with_seed(cfg.registration, derive_seed(cfg.registration.seed, "bsa", entry.id))
        t = register(entry.mask, query, reg_cfg).transform
    else:
        t = AffineTransform2D.identity()
    hist = warped_joint_histogram(entry.mask, query, t)
    d = union_dice_from_histogram(hist) if cfg.dice_mode == "union" else dice_from_histogram(hist)
    return RankedEntry(entry.id, d, apply_to_point(t, entry.landmark), t)


def infer_candidate(query, atlas: AtlasLibrary, cfg: BsaConfig = BsaConfig()) -> BsaResult:
    """Register every atlas entry to ``query``, rank by Dice, fuse the top ``k`` landmarks."""
    query = as_mask(query)
    if not query.any():
        raise EmptyMaskError("query mask has no foreground")
    if query.shape != atlas.shape:
        raise ValueError(f"dimension mismatch: query {query.shape} vs atlas {atlas.shape}")
    if not 1 <= cfg.k <= len(atlas):
        raise AtlasError(f"k={cfg.k} outside 1..{len(atlas)}")

    jobs = list(enumerate(atlas.entries))
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            scored = list(pool.map(lambda j: _score_entry(j[0], j[1], query, cfg), jobs))
    else:
        scored = [_score_entry(i, e, query, cfg) for i, e in jobs]

    # stable sort: equal Dice keeps atlas order
    ranked = sorted(scored, key=lambda r: -r.dice)
    return BsaResult(fuse(ranked, cfg.k, query.shape, cfg.weighted), ranked, cfg.k)


def fuse(ranked, k, shape, weighted=False):
    """Mean (or Dice-weighted mean) of the first ``k`` landmarks, clamped to the image."""
    top = ranked[:k]
    pts = np.array([r.landmark for r in top], dtype=np.float64)
    if weighted:
        w = np.array([r.dice for r in top], dtype=np.float64)
        if w.sum() > 0:
            cand = (pts * w[:, None]).sum(axis=0) / w.sum()
        else:
            cand = pts.mean(axis=0)
    else:
        cand = pts.mean(axis=0)
    return clamp_point(cand, shape)


def build_atlas(dataset_dir, side: str) -> AtlasLibrary:
    """Atlas of every training record of ``side`` in manifest order."""
    if side not in SIDES:
        raise AtlasError(f"side must be one of {SIDES}, got {side!r}")
    manifest_path = os.path.join(dataset_dir, "manifest.csv")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(manifest_path)
    manifest = read_manifest(manifest_path)
    entries = []
    for rec in manifest.records:
        if rec.split != "train" or rec.side != side:
            continue
        path = os.path.join(dataset_dir, "masks", rec.id + ".pgm")
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        entries.append(AtlasEntry(rec.id, pgm.read_mask(path), (rec.centroid_x, rec.centroid_y)))
    if not entries:
        raise AtlasError(f"{dataset_dir}: no training records for side {side!r}")
    return AtlasLibrary(entries, side)
