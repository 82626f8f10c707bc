"""Distance and hit-rate metrics and their aggregate report."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HIT_RADIUS = 15.0


@dataclass(frozen=True)
class EvalConfig:
    hit_radius: float = HIT_RADIUS
    neighborhood_norm: str = "euclidean"

    def __post_init__(self):
        if not self.hit_radius > 0:
            raise ValueError("hit_radius must be positive")
        if self.neighborhood_norm not in ("euclidean", "l1"):
            raise ValueError(f"unknown neighborhood norm {self.neighborhood_norm!r}")


def distance(pred, truth) -> float:
    """L1 distance ``|dx| + |dy|`` in pixels."""
    return abs(float(pred[0]) - float(truth[0])) + abs(float(pred[1]) - float(truth[1]))


def distance_l2(pred, truth) -> float:
    return math.hypot(float(pred[0]) - float(truth[0]), float(pred[1]) - float(truth[1]))


def hit(pred, truth, cfg: EvalConfig = EvalConfig()) -> int:
    """1 if ``pred`` is within ``hit_radius`` of ``truth`` (boundary inclusive)."""
    if cfg.neighborhood_norm == "l1":
        d = distance(pred, truth)
    else:
        d = distance_l2(pred, truth)
    return int(d <= cfg.hit_radius)


@dataclass(frozen=True)
class ReportRow:
    stage: str
    side: str
    n: int
    mean_dist: float
    std_dist: float
    hit_rate_pct: float
    mean_dist_l2: float


def summarize(stage, side, dists, hits, dists_l2) -> ReportRow:
    """Aggregate per-record distances and hits; std is the population std."""
    d = np.asarray(dists, dtype=np.float64)
    n = int(d.size)
    if n == 0:
        return ReportRow(stage, side, 0, float("nan"), float("nan"), float("nan"), float("nan"))
    return ReportRow(
        stage=stage,
        side=side,
        n=n,
        mean_dist=float(d.mean()),
        std_dist=float(d.std()),
        hit_rate_pct=100.0 * float(np.mean(hits)),
        mean_dist_l2=float(np.mean(dists_l2)),
    )
