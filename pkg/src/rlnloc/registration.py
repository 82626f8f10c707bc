"""Six-parameter affine registration of label masks by mutual information.

The moving mask is warped onto the fixed mask; the search starts from the
center-of-mass alignment and runs a bounded Nelder-Mead simplex from that
start plus seeded perturbations of it.  The objective is piecewise constant
(nearest-neighbour warp, hard-label histogram), so no gradients are used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .imaging import (
    AffineTransform2D,
    as_mask,
    center_of_mass,
    downsample2,
    foreground_box,
    label_counts,
    warp_window,
)


class RegistrationConfigError(ValueError):
    pass


# lower/upper bounds, in parameter units
_LOWER = np.array([-128.0, -128.0, -math.pi / 2, 0.5, 0.5, -0.5])
_UPPER = np.array([128.0, 128.0, math.pi / 2, 2.0, 2.0, 0.5])
# simplex coordinates are params * _SCALE
_SCALE = np.array([1.0, 1.0, 64.0, 128.0, 128.0, 64.0])


@dataclass(frozen=True)
class RegParams:
    """Decomposed affine: scale, then shear, then rotation, about ``pivot``, then shift."""

    tx: float = 0.0
    ty: float = 0.0
    rotation: float = 0.0
    scale_x: float = 1.0
    scale_y: float = 1.0
    shear: float = 0.0
    pivot: tuple = (0.0, 0.0)

    def as_vector(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.rotation, self.scale_x, self.scale_y, self.shear])

    @classmethod
    def from_vector(cls, v, pivot=(0.0, 0.0)) -> "RegParams":
        v = np.clip(np.asarray(v, dtype=np.float64), _LOWER, _UPPER)
        return cls(*(float(x) for x in v), pivot=tuple(float(p) for p in pivot))

    def linear(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        rot = np.array([[c, -s], [s, c]])
        shear = np.array([[1.0, self.shear], [0.0, 1.0]])
        return rot @ shear @ np.diag([self.scale_x, self.scale_y])

    def to_affine(self) -> AffineTransform2D:
        lin = self.linear()
        pivot = np.asarray(self.pivot, dtype=np.float64)
        trans = pivot - lin @ pivot + np.array([self.tx, self.ty])
        return AffineTransform2D(lin, trans)


@dataclass(frozen=True)
class RegistrationConfig:
    max_evaluations: int = 400
    simplex_tolerance: float = 1e-5
    restarts: int = 3
    seed: int = 0
    coarse_search: bool = True
    # spread of the simplex (in scaled coordinates) below which it counts as collapsed
    simplex_xtol: float = 0.25
    initial_step: tuple = (4.0, 4.0, 4.0, 4.0, 4.0, 2.0)
    # scaled-coordinate half-widths of the perturbed restarts
    restart_spread: tuple = (6.0, 6.0, 6.0, 6.0, 6.0, 3.0)

    def validate(self):
        if self.max_evaluations < 1:
            raise RegistrationConfigError("max_evaluations must be >= 1")
        if self.restarts < 1:
            raise RegistrationConfigError("restarts must be >= 1")
        if self.simplex_tolerance < 0:
            raise RegistrationConfigError("simplex_tolerance must be >= 0")
        if len(self.initial_step) != 6 or len(self.restart_spread) != 6:
            raise RegistrationConfigError("initial_step and restart_spread need 6 entries")


@dataclass(frozen=True)
class RegistrationResult:
    transform: AffineTransform2D
    mi: float
    evaluations: int
    params: RegParams = field(default_factory=RegParams)
    start_mi: float = 0.0


def initialize(moving, fixed) -> RegParams:
    """Center-of-mass start: identity linear part, COM(fixed) - COM(moving) shift."""
    cm = center_of_mass(moving)
    cf = center_of_mass(fixed)
    return RegParams(tx=cf[0] - cm[0], ty=cf[1] - cm[1], pivot=cm)


def nelder_mead(func, x0, step, max_evaluations, ftol, xtol,
                alpha=1.0, gamma=2.0, rho=0.5, sigma=0.5):
    """Minimize ``func`` from ``x0`` with an axis-aligned initial simplex.

    The best vertex is only replaced on strict improvement, so on plateaus
    the search keeps its earliest best point.  Returns ``(x, f, evals)``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    dim = x0.size
    pts = [x0.copy()]
    vals = [func(x0)]
    evals = 1
    for i in range(dim):
        if evals >= max_evaluations:
            break
        x = x0.copy()
        x[i] += step[i]
        pts.append(x)
        vals.append(func(x))
        evals += 1
    if len(pts) < dim + 1:
        best = int(np.argmin(vals))
        return pts[best], vals[best], evals

    pts = np.array(pts)
    vals = np.array(vals)
    while evals < max_evaluations:
        order = np.argsort(vals, kind="stable")
        pts, vals = pts[order], vals[order]
        if vals[-1] - vals[0] <= ftol and np.max(np.abs(pts[1:] - pts[0])) <= xtol:
            break
        centroid = pts[:-1].mean(axis=0)
        xr = centroid + alpha * (centroid - pts[-1])
        fr = func(xr)
        evals += 1
        if fr < vals[0]:
            if evals >= max_evaluations:
                pts[-1], vals[-1] = xr, fr
                break
            xe = centroid + gamma * (xr - centroid)
            fe = func(xe)
            evals += 1
            if fe < fr:
                pts[-1], vals[-1] = xe, fe
            else:
                pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue
        if evals >= max_evaluations:
            break
        if fr < vals[-1]:
            xc = centroid + rho * (xr - centroid)
        else:
            xc = centroid + rho * (pts[-1] - centroid)
        fc = func(xc)
        evals += 1
        if fc < min(fr, vals[-1]):
            pts[-1], vals[-1] = xc, fc
            continue
        # shrink towards the best vertex
        for i in range(1, dim + 1):
            if evals >= max_evaluations:
                break
            pts[i] = pts[0] + sigma * (pts[i] - pts[0])
            vals[i] = func(pts[i])
            evals += 1
    best = int(np.argmin(vals))  # first minimum wins ties
    return pts[best].copy(), float(vals[best]), evals


def _restarted_simplex(func, x0, step, budget, ftol, xtol):
    """Nelder-Mead rebuilt around its own result until it stops improving.

    A fresh simplex escapes the premature collapse that plateaus of a
    piecewise-constant objective tend to cause.
    """
    x, f, used = nelder_mead(func, x0, step, budget, ftol, xtol)
    while used < budget:
        x2, f2, n = nelder_mead(func, x, step, budget - used, ftol, xtol)
        used += n
        if not f2 < f:
            break
        x, f = x2, f2
    return x, f, used


class _Objective:
    """Negative MI of the warped moving mask, evaluated at one resolution.

    ``factor`` is the downsampling of the masks relative to the parameter
    frame: coarse pixel ``i`` is full-resolution pixel ``factor * i``.
    """

    def __init__(self, moving, fixed, pivot, factor):
        self.moving = moving
        self.fixed = fixed
        self.pivot = pivot
        self.factor = factor
        self.box = foreground_box(moving)
        self.fixed_counts = label_counts(fixed)
        self.shape = fixed.shape

    def coeffs(self, z):
        """Inverse-map coefficients (kernel layout) for scaled parameters ``z``."""
        tx, ty, rot, sx, sy, sh = (float(v) for v in np.clip(z / _SCALE, _LOWER, _UPPER))
        c, s = math.cos(rot), math.sin(rot)
        # linear = R @ [[1, sh], [0, 1]] @ diag(sx, sy)
        l00, l01 = c * sx, (c * sh - s) * sy
        l10, l11 = s * sx, (s * sh + c) * sy
        px, py = self.pivot
        t0 = px - (l00 * px + l01 * py) + tx
        t1 = py - (l10 * px + l11 * py) + ty
        k = self.factor
        t0, t1 = t0 / k, t1 / k
        det = l00 * l11 - l01 * l10
        i00, i01, i10, i11 = l11 / det, -l01 / det, -l10 / det, l00 / det
        return np.array([i00, i01, -(i00 * t0 + i01 * t1), i10, i11, -(i10 * t0 + i11 * t1)])

    def __call__(self, z):
        coeffs = self.coeffs(z)
        x0, y0, x1, y1 = warp_window(coeffs, self.box, self.shape)
        hist = kernels.joint_histogram(self.moving, self.fixed, coeffs, x0, y0, x1, y1, self.fixed_counts)
        return -kernels.histogram_mi(hist)


def register(moving, fixed, cfg: RegistrationConfig | None = None) -> RegistrationResult:
    """Affine transform that maps ``moving`` onto ``fixed`` maximizing mutual information."""
    cfg = cfg or RegistrationConfig()
    cfg.validate()
    moving = as_mask(moving)
    fixed = as_mask(fixed)
    if moving.shape != fixed.shape:
        raise ValueError(f"dimension mismatch: {moving.shape} vs {fixed.shape}")
    start = initialize(moving, fixed)
    pivot = start.pivot
    z0 = start.as_vector() * _SCALE
    lo, hi = _LOWER * _SCALE, _UPPER * _SCALE

    full = _Objective(moving, fixed, pivot, 1)
    if cfg.coarse_search:
        search = _Objective(downsample2(moving), downsample2(fixed), pivot, 2)
    else:
        search = full
    step = np.asarray(cfg.initial_step, dtype=np.float64)
    spread = np.asarray(cfg.restart_spread, dtype=np.float64)

    rng = np.random.default_rng(cfg.seed)
    starts = [z0]
    for _ in range(cfg.restarts - 1):
        starts.append(np.clip(z0 + rng.uniform(-spread, spread), lo, hi))

    evaluations = 0
    candidates = []
    for z_start in starts:
        z, _, n = _restarted_simplex(
            lambda v: search(np.clip(v, lo, hi)), z_start, step,
            cfg.max_evaluations, cfg.simplex_tolerance, cfg.simplex_xtol,
        )
        evaluations += n
        z = np.clip(z, lo, hi)
        candidates.append((z, -full(z)))
        evaluations += 1

    # highest MI wins; strict comparison keeps the lowest restart index on ties
    best_z, best_mi = candidates[0]
    for z, mi in candidates[1:]:
        if mi > best_mi:
            best_z, best_mi = z, mi

    if cfg.coarse_search:
        z, f, n = _restarted_simplex(
            lambda v: full(np.clip(v, lo, hi)), best_z, step / 4.0,
            max(cfg.max_evaluations // 2, 1), cfg.simplex_tolerance, cfg.simplex_xtol / 2,
        )
        evaluations += n
        if -f > best_mi:
            best_z, best_mi = np.clip(z, lo, hi), -f

    start_mi = -full(z0)
    evaluations += 1
    if start_mi > best_mi:
        best_z, best_mi = z0, start_mi

    params = RegParams.from_vector(best_z / _SCALE, pivot=pivot)
    return RegistrationResult(
        transform=params.to_affine(),
        mi=float(best_mi),
        evaluations=evaluations,
        params=params,
        start_mi=float(start_mi),
    )


def with_seed(cfg: RegistrationConfig, seed: int) -> RegistrationConfig:
    return replace(cfg, seed=int(seed))
