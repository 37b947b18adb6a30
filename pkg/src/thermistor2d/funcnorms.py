"""Discrete window-family estimators for oscillation, growth, and weight norms.

All estimators share one window geometry: node-centered Euclidean balls (and
space-time cylinders of depth radius^2), averaged with cell-volume weights.
Two boundary conventions appear, mirroring how the underlying estimates treat
the boundary: constant extension outside the domain (oscillation and weight
scans), and restriction to in-grid nodes with boundary windows switching to
plain averages (the boundary-aware oscillation scan).

Windows where the gathered values are constant contribute their exact limit
(zero oscillation, unit weight product) rather than rounded arithmetic, so
constant fields score exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import elliptic
from .mesh import (
    BallWindow,
    CylinderWindow,
    Grid2D,
    MeshError,
    ScalarField,
    SpaceTimeField,
    WindowPolicy,
    _center_indices,
    cylinder_levels,
    disk_offsets,
)

_GATHER_CHUNK_CELLS = 2_000_000
_MIN_MEMBERS = 4


class NormError(ValueError):
    """Raised for invalid estimator inputs or empty window families."""


@dataclass(frozen=True)
class NormPolicy:
    """Window-family and sampling parameters shared by the estimators.

    stride/radii default to a dyadic family (stride about nx/32, radii
    doubling from 2h to a quarter of the domain extent); exhaustive=True
    switches to every node and every radius step. c_ext is the constant used
    outside the domain by the extension-based scans. seed and n_pairs steer
    the pair sampling of the space-time oscillation ratio.
    """

    stride: int | None = None
    radii: tuple[float, ...] | None = None
    r_max: float | None = None
    c_ext: float = 0.0
    exhaustive: bool = False
    time_stride: int = 1
    seed: int = 0
    n_pairs: int = 200_000

    def window_policy(self, grid: Grid2D) -> WindowPolicy:
        if self.radii is not None:
            return WindowPolicy(stride=self.stride or 1,
                                radii=tuple(float(r) for r in self.radii))
        if self.exhaustive:
            return WindowPolicy.exhaustive(grid, r_max=self.r_max)
        return WindowPolicy.dyadic(grid, stride=self.stride, r_max=self.r_max)


@dataclass
class NormReport:
    value: float
    argmax: dict
    family_size: int
    policy: NormPolicy
    metadata: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# window scanning machinery
# ---------------------------------------------------------------------------

def _scan_geometry(grid: Grid2D, wp: WindowPolicy):
    """Yield (radius, di, dj, CI, CJ) per radius, centers in row-major order."""
    ci = _center_indices(grid.nx, wp.stride)
    cj = _center_indices(grid.ny, wp.stride)
    CI, CJ = np.meshgrid(ci, cj, indexing="xy")
    CI = CI.ravel()
    CJ = CJ.ravel()
    for r in wp.radii:
        di, dj = disk_offsets(grid, r)
        yield float(r), di, dj, CI, CJ


def _chunks(n_centers: int, mask_size: int) -> Iterator[slice]:
    block = max(1, _GATHER_CHUNK_CELLS // max(1, mask_size))
    for lo in range(0, n_centers, block):
        yield slice(lo, min(lo + block, n_centers))


def _gather(values: np.ndarray, grid: Grid2D, CI, CJ, di, dj):
    """Window gather: (vals, valid) of shape (n_centers, mask), clipped indices."""
    ii = CI[:, None] + di[None, :]
    jj = CJ[:, None] + dj[None, :]
    valid = (ii >= 0) & (ii <= grid.nx) & (jj >= 0) & (jj <= grid.ny)
    vals = values[jj.clip(0, grid.ny), ii.clip(0, grid.nx)]
    return vals, valid


class _ArgmaxTracker:
    """Running deterministic max: first window (enumeration order) wins ties."""

    def __init__(self) -> None:
        self.value = -np.inf
        self.argmax: dict = {}
        self.family_size = 0

    def update(self, row_values: np.ndarray, keep: np.ndarray,
               CI, CJ, radius: float, extra: dict | None = None) -> None:
        self.family_size += int(np.count_nonzero(keep))
        scores = np.where(keep, row_values, -np.inf)
        best = int(np.argmax(scores))
        if scores[best] > self.value:
            self.value = float(scores[best])
            self.argmax = {"ci": int(CI[best]), "cj": int(CJ[best]),
                           "radius": radius}
            if extra:
                self.argmax.update(extra)

    def report(self, policy: NormPolicy, metadata: dict | None = None) -> NormReport:
        if self.family_size == 0:
            raise NormError("window policy produced an empty family")
        return NormReport(value=self.value, argmax=self.argmax,
                          family_size=self.family_size, policy=policy,
                          metadata=metadata or {})


def _mean_oscillation_rows(vals: np.ndarray) -> np.ndarray:
    mean = vals.mean(axis=1)
    osc = np.abs(vals - mean[:, None]).mean(axis=1)
    flat = vals.max(axis=1) == vals.min(axis=1)
    osc[flat] = 0.0
    return osc


# ---------------------------------------------------------------------------
# oscillation norms
# ---------------------------------------------------------------------------

def bmo_norm(f: ScalarField, policy: NormPolicy) -> NormReport:
    """Sup over windows of the mean oscillation, extending f by c_ext outside.

    Overhanging window cells carry the extension constant and count toward
    the window measure, so the scan behaves as if f lived on the whole plane.
    """
    grid = f.grid
    wp = policy.window_policy(grid)
    track = _ArgmaxTracker()
    for r, di, dj, CI, CJ in _scan_geometry(grid, wp):
        for sl in _chunks(CI.size, di.size):
            vals, valid = _gather(f.values, grid, CI[sl], CJ[sl], di, dj)
            vals = np.where(valid, vals, policy.c_ext)
            osc = _mean_oscillation_rows(vals)
            keep = valid.sum(axis=1) >= _MIN_MEMBERS
            track.update(osc, keep, CI[sl], CJ[sl], r)
    return track.report(policy)


_EXTENSION_CACHE: dict = {}


def _boundary_extension(boundary_data: ScalarField) -> np.ndarray:
    """Discrete harmonic extension of the boundary trace (unit coefficient)."""
    grid = boundary_data.grid
    trace = boundary_data.values[grid.boundary_mask()]
    if np.all(trace == trace[0]):
        return np.full(grid.shape, float(trace[0]))
    key = (grid, trace.tobytes())
    hit = _EXTENSION_CACHE.get(key)
    if hit is not None:
        return hit
    prob = elliptic.EllipticProblem(grid=grid,
                                    a=ScalarField.constant(grid, 1.0),
                                    h_bc=boundary_data)
    ext, _ = elliptic.solve(prob, rtol=1e-12)
    if len(_EXTENSION_CACHE) >= 64:
        _EXTENSION_CACHE.pop(next(iter(_EXTENSION_CACHE)))
    _EXTENSION_CACHE[key] = ext.values
    return ext.values


def bmo_bar_norm(f: ScalarField, boundary_data: ScalarField | None,
                 policy: NormPolicy) -> NormReport:
    """Boundary-aware oscillation sup.

    Windows whose members stay interior contribute mean oscillation; windows
    touching the boundary contribute the plain average of |f|, both over
    in-grid members only. When a nonzero boundary datum is supplied, its
    discrete harmonic extension is subtracted first (recorded in metadata),
    so the scanned field vanishes on the boundary.
    """
    grid = f.grid
    vals_full = f.values
    subtracted = False
    if boundary_data is not None:
        trace = boundary_data.values[grid.boundary_mask()]
        if np.any(trace != 0.0):
            vals_full = f.values - _boundary_extension(boundary_data)
            subtracted = True
    bmask = grid.boundary_mask()
    wp = policy.window_policy(grid)
    track = _ArgmaxTracker()
    for r, di, dj, CI, CJ in _scan_geometry(grid, wp):
        for sl in _chunks(CI.size, di.size):
            vals, valid = _gather(vals_full, grid, CI[sl], CJ[sl], di, dj)
            bnd, _ = _gather(bmask, grid, CI[sl], CJ[sl], di, dj)
            touches = np.any(bnd & valid, axis=1)
            interior = np.all(valid, axis=1) & ~touches
            count = valid.sum(axis=1)
            score = np.empty(vals.shape[0])
            if np.any(interior):
                score[interior] = _mean_oscillation_rows(vals[interior])
            rest = ~interior
            if np.any(rest):
                sums = np.abs(np.where(valid[rest], vals[rest], 0.0)).sum(axis=1)
                score[rest] = sums / count[rest]
            keep = count >= _MIN_MEMBERS
            track.update(score, keep, CI[sl], CJ[sl], r)
    return track.report(policy, metadata={"boundary_datum_subtracted": subtracted})


# ---------------------------------------------------------------------------
# growth norms
# ---------------------------------------------------------------------------

def _check_morrey_exponents(p: float, theta: float) -> None:
    if p < 1:
        raise NormError(f"integral exponent p must be >= 1, got {p}")
    if not 0.0 <= theta <= 1.0:
        raise NormError(f"growth exponent theta must lie in [0, 1], got {theta}")


def morrey_norm(f: ScalarField, p: float, theta: float,
                policy: NormPolicy) -> NormReport:
    """Sup over windows of (R^(-2 theta) * sum_{B cap domain} |f|^p * cellvol)^(1/p)."""
    _check_morrey_exponents(p, theta)
    grid = f.grid
    wp = policy.window_policy(grid)
    absp = np.abs(f.values) ** p
    track = _ArgmaxTracker()
    for r, di, dj, CI, CJ in _scan_geometry(grid, wp):
        scale = r ** (-2.0 * theta)
        for sl in _chunks(CI.size, di.size):
            vals, valid = _gather(absp, grid, CI[sl], CJ[sl], di, dj)
            sums = np.where(valid, vals, 0.0).sum(axis=1) * grid.cell_volume
            score = (scale * sums) ** (1.0 / p)
            keep = valid.sum(axis=1) >= _MIN_MEMBERS
            track.update(score, keep, CI[sl], CJ[sl], r)
    return track.report(policy)


def parabolic_morrey_norm(f: SpaceTimeField, p: float, theta: float,
                          policy: NormPolicy) -> NormReport:
    """Cylinder version: windows of depth R^2 below anchor times, weight R^(-4 theta).

    Level 0 (the initial datum) never contributes; anchors step backward from
    the final level by the policy time stride.
    """
    _check_morrey_exponents(p, theta)
    grid = f.grid
    if f.n_levels < 2:
        raise NormError("need at least two time levels for cylinder windows")
    wp = policy.window_policy(grid)
    absp = np.abs(f.data) ** p
    # cum[k] = sum of levels 1..k, so a slab (lo..k) is cum[k] - cum[lo-1]
    cum = np.concatenate([np.zeros((1,) + grid.shape), np.cumsum(absp[1:], axis=0)])
    anchors = sorted(set(range(f.n_levels - 1, 0, -max(1, policy.time_stride))))
    track = _ArgmaxTracker()
    for k in anchors:
        for r, di, dj, CI, CJ in _scan_geometry(grid, wp):
            levels = cylinder_levels(f.dt, CylinderWindow(0, 0, k, r))
            slab = cum[k] - cum[levels[0] - 1]
            scale = r ** (-4.0 * theta)
            for sl in _chunks(CI.size, di.size):
                vals, valid = _gather(slab, grid, CI[sl], CJ[sl], di, dj)
                sums = np.where(valid, vals, 0.0).sum(axis=1) \
                    * grid.cell_volume * f.dt
                score = (scale * sums) ** (1.0 / p)
                keep = valid.sum(axis=1) >= _MIN_MEMBERS
                track.update(score, keep, CI[sl], CJ[sl], r, extra={"k": k})
    return track.report(policy)


# ---------------------------------------------------------------------------
# weight constant
# ---------------------------------------------------------------------------

def a2_constant(w: ScalarField, policy: NormPolicy) -> NormReport:
    """Sup over windows of (avg w)(avg 1/w), with constant extension c_ext.

    Always >= 1; windows where the gathered weight is constant score exactly 1.
    """
    if not np.min(w.values) > 0.0:
        raise NormError("weight must be positive everywhere")
    if not policy.c_ext > 0.0:
        raise NormError("weight extension constant must be positive")
    grid = w.grid
    wp = policy.window_policy(grid)
    track = _ArgmaxTracker()
    for r, di, dj, CI, CJ in _scan_geometry(grid, wp):
        for sl in _chunks(CI.size, di.size):
            vals, valid = _gather(w.values, grid, CI[sl], CJ[sl], di, dj)
            vals = np.where(valid, vals, policy.c_ext)
            prod = vals.mean(axis=1) * (1.0 / vals).mean(axis=1)
            prod[vals.max(axis=1) == vals.min(axis=1)] = 1.0
            keep = valid.sum(axis=1) >= _MIN_MEMBERS
            track.update(prod, keep, CI[sl], CJ[sl], r)
    return track.report(policy)


# ---------------------------------------------------------------------------
# space-time oscillation ratio
# ---------------------------------------------------------------------------

def _dyadic_separations(n: int) -> list[int]:
    out = []
    s = 1
    while s <= n:
        out.append(s)
        s *= 2
    return out


def holder_seminorm(f: SpaceTimeField, alpha: float,
                    policy: NormPolicy) -> NormReport:
    """Max sampled ratio |f(x,t)-f(y,s)| / (|x-y|^alpha + |t-s|^(alpha/2)).

    Deterministic pairs: every dyadic separation along each axis (whole-array
    shifts, so the best aligned pair per separation is found exactly), plus a
    seeded pseudo-random batch of general pairs.
    """
    if not 0.0 < alpha < 1.0:
        raise NormError(f"need alpha in (0, 1), got {alpha}")
    grid = f.grid
    data = f.data
    L = f.n_levels
    if data.size < 2:
        raise NormError("need at least two samples")
    beta = 0.5 * alpha

    best = -np.inf
    arg: dict = {}

    def consider(val: float,描: dict) -> None:
        nonlocal best, arg
        if val > best:
            best = val
            arg = 描

    for s in _dyadic_separations(grid.nx):
        d = np.abs(data[:, :, s:] - data[:, :, :-s])
        idx = np.unravel_index(np.argmax(d), d.shape)
        consider(float(d[idx]) / (s * grid.dx) ** alpha,
                 {"axis": "x", "separation": s, "at": tuple(int(v) for v in idx)})
    for s in _dyadic_separations(grid.ny):
        d = np.abs(data[:, s:, :] - data[:, :-s, :])
        idx = np.unravel_index(np.argmax(d), d.shape)
        consider(float(d[idx]) / (s * grid.dy) ** alpha,
                 {"axis": "y", "separation": s, "at": tuple(int(v) for v in idx)})
    if L > 1:
        for s in _dyadic_separations(L - 1):
            d = np.abs(data[s:] - data[:-s])
            idx = np.unravel_index(np.argmax(d), d.shape)
            consider(float(d[idx]) / (s * f.dt) ** beta,
                     {"axis": "t", "separation": s, "at": tuple(int(v) for v in idx)})

    rng = np.random.default_rng(policy.seed)
    n = policy.n_pairs
    k1 = rng.integers(0, L, n)
    j1 = rng.integers(0, grid.ny + 1, n)
    i1 = rng.integers(0, grid.nx + 1, n)
    k2 = rng.integers(0, L, n)
    j2 = rng.integers(0, grid.ny + 1, n)
    i2 = rng.integers(0, grid.nx + 1, n)
    distinct = (k1 != k2) | (j1 != j2) | (i1 != i2)
    num = np.abs(data[k1, j1, i1] - data[k2, j2, i2])[distinct]
    dx = (i1 - i2)[distinct] * grid.dx
    dy = (j1 - j2)[distinct] * grid.dy
    dt = np.abs(k1 - k2)[distinct] * f.dt
    den = (dx * dx + dy * dy) ** (0.5 * alpha) + dt**beta
    if num.size:
        ratios = num / den
        b = int(np.argmax(ratios))
        consider(float(ratios[b]), {"axis": "sampled", "pair_index": b})

    report = NormReport(value=max(best, 0.0), argmax=arg,
                        family_size=len(_dyadic_separations(grid.nx))
                        + len(_dyadic_separations(grid.ny))
                        + (len(_dyadic_separations(L - 1)) if L > 1 else 0)
                        + int(num.size),
                        policy=policy, metadata={"alpha": alpha})
    return report


# ---------------------------------------------------------------------------
# level-set decay table
# ---------------------------------------------------------------------------

def nirenberg_level_sets(f: ScalarField, window: BallWindow,
                         thresholds: np.ndarray | None = None,
                         policy: NormPolicy | None = None) -> np.ndarray:
    """Fractions of window cells deviating from the window mean beyond each level.

    Rows are (lambda, fraction with |f - f_B| > lambda, fraction with
    f - f_B > lambda). Default thresholds are j times the field's oscillation
    norm for j = 1..6; the window uses the same constant extension as the
    oscillation scan.
    """
    policy = policy or NormPolicy()
    grid = f.grid
    di, dj = disk_offsets(grid, window.radius)
    ii = window.ci + di
    jj = window.cj + dj
    valid = (ii >= 0) & (ii <= grid.nx) & (jj >= 0) & (jj <= grid.ny)
    vals = np.where(valid, f.values[jj.clip(0, grid.ny), ii.clip(0, grid.nx)],
                    policy.c_ext)
    mean = vals.mean()
    dev = vals - mean
    if thresholds is None:
        base = bmo_norm(f, policy).value
        thresholds = base * np.arange(1, 7)
    thresholds = np.asarray(thresholds, dtype=float)
    rows = []
    for lam in thresholds:
        rows.append((float(lam),
                     float(np.mean(np.abs(dev) > lam)),
                     float(np.mean(dev > lam))))
    return np.array(rows)
