"""Uniform rectangular grids, node/face fields, discrete calculus, windows.

Fields are node-centered: a grid with nx by ny cells carries (nx+1)*(ny+1)
nodes, stored row-major as arrays of shape (ny+1, nx+1) indexed [j, i] so
that node (i, j) sits at (x0 + i*dx, y0 + j*dy). Boundary nodes are exactly
those with i in {0, nx} or j in {0, ny} and carry Dirichlet data directly.

Face fields live on cell edges: fx has shape (ny+1, nx) (one value between
horizontally adjacent nodes), fy has shape (ny, nx+1).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class MeshError(ValueError):
    """Raised for invalid grid, field, or window-family construction."""


# ---------------------------------------------------------------------------
# grid and fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid2D:
    """Axis-aligned uniform rectangular grid.

    nx, ny count cells per axis, so there are (nx+1)*(ny+1) nodes.
    """

    nx: int
    ny: int
    dx: float
    dy: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self) -> None:
        if self.nx < 3 or self.ny < 3:
            raise MeshError(f"need nx, ny >= 3, got nx={self.nx} ny={self.ny}")
        if not (self.dx > 0.0 and self.dy > 0.0):
            raise MeshError(f"need dx, dy > 0, got dx={self.dx} dy={self.dy}")

    @classmethod
    def rectangle(cls, lx: float, ly: float, nx: int, ny: int,
                  x0: float = 0.0, y0: float = 0.0) -> "Grid2D":
        return cls(nx=nx, ny=ny, dx=lx / nx, dy=ly / ny, x0=x0, y0=y0)

    @classmethod
    def unit_square(cls, n: int) -> "Grid2D":
        return cls.rectangle(1.0, 1.0, n, n)

    @property
    def lx(self) -> float:
        return self.nx * self.dx

    @property
    def ly(self) -> float:
        return self.ny * self.dy

    @property
    def shape(self) -> tuple[int, int]:
        """Node array shape, (ny+1, nx+1)."""
        return (self.ny + 1, self.nx + 1)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy

    @property
    def min_spacing(self) -> float:
        return min(self.dx, self.dy)

    def node_x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx + 1)

    def node_y(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny + 1)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays X, Y of shape (ny+1, nx+1)."""
        return np.meshgrid(self.node_x(), self.node_y(), indexing="xy")

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :] = m[-1, :] = True
        m[:, 0] = m[:, -1] = True
        return m

    def refined(self, factor: int = 2) -> "Grid2D":
        """Same rectangle with factor times as many cells per axis."""
        return Grid2D(nx=self.nx * factor, ny=self.ny * factor,
                      dx=self.dx / factor, dy=self.dy / factor,
                      x0=self.x0, y0=self.y0)


@dataclass(frozen=True)
class ScalarField:
    """One real value per node plus a time stamp."""

    grid: Grid2D
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise MeshError(
                f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid2D, value: float, t: float = 0.0) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)), t=t)

    @classmethod
    def from_function(cls, grid: Grid2D,
                      fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      t: float = 0.0) -> "ScalarField":
        X, Y = grid.meshgrid()
        return cls(grid, np.broadcast_to(np.asarray(fn(X, Y), dtype=float),
                                         grid.shape).copy(), t=t)

    def with_values(self, values: np.ndarray, t: float | None = None) -> "ScalarField":
        return ScalarField(self.grid, values, t=self.t if t is None else t)

    def boundary_trace(self) -> np.ndarray:
        """Values on boundary nodes, row-major order of the boundary mask."""
        return self.values[self.grid.boundary_mask()]


@dataclass(frozen=True)
class FaceVectorField:
    """Vector field sampled on cell faces (fx between x-neighbors, fy between y-neighbors)."""

    grid: Grid2D
    fx: np.ndarray
    fy: np.ndarray

    def __post_init__(self) -> None:
        fx = np.asarray(self.fx, dtype=float)
        fy = np.asarray(self.fy, dtype=float)
        want_fx = (self.grid.ny + 1, self.grid.nx)
        want_fy = (self.grid.ny, self.grid.nx + 1)
        if fx.shape != want_fx:
            raise MeshError(f"fx shape {fx.shape}, expected {want_fx}")
        if fy.shape != want_fy:
            raise MeshError(f"fy shape {fy.shape}, expected {want_fy}")
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fy))):
            raise MeshError("face field contains non-finite values")
        object.__setattr__(self, "fx", fx)
        object.__setattr__(self, "fy", fy)

    @classmethod
    def zero(cls, grid: Grid2D) -> "FaceVectorField":
        return cls(grid, np.zeros((grid.ny + 1, grid.nx)),
                   np.zeros((grid.ny, grid.nx + 1)))


class SpaceTimeField:
    """Uniformly time-stepped stack of ScalarField snapshots (level k at t = k*dt)."""

    def __init__(self, grid: Grid2D, dt: float, data: np.ndarray):
        data = np.asarray(data, dtype=float)
        if data.ndim != 3 or data.shape[1:] != grid.shape:
            raise MeshError(
                f"space-time data shape {data.shape} does not match grid {grid.shape}")
        if not dt > 0.0:
            raise MeshError(f"need dt > 0, got {dt}")
        if not np.all(np.isfinite(data)):
            raise MeshError("space-time field contains non-finite values")
        self.grid = grid
        self.dt = float(dt)
        self.data = data

    @classmethod
    def from_levels(cls, levels: Sequence[ScalarField], dt: float) -> "SpaceTimeField":
        if not levels:
            raise MeshError("need at least one level")
        grid = levels[0].grid
        for lev in levels:
            if lev.grid != grid:
                raise MeshError("all levels must share one grid")
        return cls(grid, dt, np.stack([lev.values for lev in levels]))

    @property
    def n_levels(self) -> int:
        return self.data.shape[0]

    @property
    def t_final(self) -> float:
        return (self.n_levels - 1) * self.dt

    def level(self, k: int) -> ScalarField:
        return ScalarField(self.grid, self.data[k], t=k * self.dt)

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_levels)


# ---------------------------------------------------------------------------
# discrete calculus
# ---------------------------------------------------------------------------

def gradient(f: ScalarField) -> FaceVectorField:
    """Forward-difference gradient onto faces; exact on affine fields."""
    g = f.grid
    v = f.values
    fx = (v[:, 1:] - v[:, :-1]) / g.dx
    fy = (v[1:, :] - v[:-1, :]) / g.dy
    return FaceVectorField(g, fx, fy)


def divergence(F: FaceVectorField) -> ScalarField:
    """Face-flux divergence at interior nodes (zero on boundary nodes).

    Adjoint of -gradient under the node/face inner products, so the
    summation-by-parts identity <div grad f, g> = -<grad f, grad g> holds
    to rounding for boundary-supported-free f, g.
    """
    g = F.grid
    out = np.zeros(g.shape)
    out[1:-1, 1:-1] = (
        (F.fx[1:-1, 1:] - F.fx[1:-1, :-1]) / g.dx
        + (F.fy[1:, 1:-1] - F.fy[:-1, 1:-1]) / g.dy
    )
    return ScalarField(g, out)


def node_inner(f: ScalarField, g: ScalarField) -> float:
    """Cell-volume weighted inner product over all nodes."""
    return float(np.einsum("ij,ij->", f.values, g.values)) * f.grid.cell_volume


def face_inner(F: FaceVectorField, G: FaceVectorField) -> float:
    """Cell-volume weighted inner product over all faces."""
    s = np.einsum("ij,ij->", F.fx, G.fx) + np.einsum("ij,ij->", F.fy, G.fy)
    return float(s) * F.grid.cell_volume


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BallWindow:
    """Disk of nodes within Euclidean distance radius of center node (ci, cj)."""

    ci: int
    cj: int
    radius: float


@dataclass(frozen=True)
class CylinderWindow:
    """Ball in space times the time levels in (t_k - radius^2, t_k]."""

    ci: int
    cj: int
    k: int
    radius: float


@dataclass(frozen=True)
class WindowPolicy:
    """Window family: center stride plus an explicit, increasing radii list."""

    stride: int
    radii: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.stride < 1:
            raise MeshError(f"stride must be >= 1, got {self.stride}")
        if len(self.radii) == 0:
            raise MeshError("window policy has an empty radii set")
        r = tuple(float(x) for x in self.radii)
        if any(b <= a for a, b in zip(r, r[1:])):
            raise MeshError("radii must be strictly increasing")
        object.__setattr__(self, "radii", r)

    @classmethod
    def dyadic(cls, grid: Grid2D, stride: int | None = None,
               r_min: float | None = None, r_max: float | None = None) -> "WindowPolicy":
        """Radii r_min * 2^j up to r_max; defaults r_min = 2h, r_max = quarter extent."""
        h = grid.min_spacing
        if r_min is None:
            r_min = 2.0 * h
        if r_max is None:
            r_max = 0.25 * min(grid.lx, grid.ly)
        if stride is None:
            stride = max(1, grid.nx // 32)
        _check_radius_bounds(grid, r_min, r_max)
        radii = []
        r = float(r_min)
        while r <= r_max * (1.0 + 1e-12):
            radii.append(r)
            r *= 2.0
        return cls(stride=stride, radii=tuple(radii))

    @classmethod
    def exhaustive(cls, grid: Grid2D, r_max: float | None = None) -> "WindowPolicy":
        """Stride 1 and every radius from 2h upward in steps of h."""
        h = grid.min_spacing
        r_min = 2.0 * h
        if r_max is None:
            r_max = 0.25 * min(grid.lx, grid.ly)
        _check_radius_bounds(grid, r_min, r_max)
        n_steps = int(np.floor((r_max - r_min) / h + 1e-12))
        radii = tuple(r_min + h * k for k in range(n_steps + 1))
        return cls(stride=1, radii=radii)


def _check_radius_bounds(grid: Grid2D, r_min: float, r_max: float) -> None:
    diameter = float(np.hypot(grid.lx, grid.ly))
    if r_min > diameter:
        raise MeshError(
            f"smallest window radius {r_min} exceeds domain diameter {diameter}")
    if r_min < 2.0 * grid.min_spacing * (1.0 - 1e-12):
        raise MeshError(
            f"window radius {r_min} below 2*min(dx,dy) = {2 * grid.min_spacing}")
    if r_max < r_min:
        raise MeshError(f"empty radius range [{r_min}, {r_max}]")


@functools.lru_cache(maxsize=256)
def _disk_offsets_cached(dx: float, dy: float, radius: float) -> tuple[np.ndarray, np.ndarray]:
    mi = int(np.floor(radius / dx * (1.0 + 1e-12)))
    mj = int(np.floor(radius / dy * (1.0 + 1e-12)))
    di = np.arange(-mi, mi + 1)
    dj = np.arange(-mj, mj + 1)
    DI, DJ = np.meshgrid(di, dj, indexing="xy")
    # tiny relative slack keeps exact-distance nodes inside despite rounding
    keep = (DI * dx) ** 2 + (DJ * dy) ** 2 <= radius * radius * (1.0 + 1e-12)
    out_i = DI[keep].astype(np.int64)
    out_j = DJ[keep].astype(np.int64)
    out_i.setflags(write=False)
    out_j.setflags(write=False)
    return out_i, out_j


def disk_offsets(grid: Grid2D, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Index offsets (di, dj) of the whole-plane disk of given radius."""
    return _disk_offsets_cached(grid.dx, grid.dy, float(radius))


def ball_members(grid: Grid2D, w: BallWindow) -> tuple[np.ndarray, np.ndarray]:
    """In-grid member nodes of a ball window as (i_array, j_array)."""
    di, dj = disk_offsets(grid, w.radius)
    ii = w.ci + di
    jj = w.cj + dj
    keep = (ii >= 0) & (ii <= grid.nx) & (jj >= 0) & (jj <= grid.ny)
    return ii[keep], jj[keep]


def cylinder_levels(dt: float, w: CylinderWindow) -> np.ndarray:
    """Time-level indices covered by a cylinder window, excluding level 0.

    The window spans (t_k - radius^2, t_k]; a level sitting exactly on the
    open endpoint is excluded, with rounding snapped so the decision does not
    depend on floating-point noise.
    """
    q = (w.k * dt - w.radius * w.radius) / dt
    qr = round(q)
    if abs(q - qr) <= 1e-9 * max(1.0, abs(q)):
        q = qr
    lo = max(int(np.floor(q)) + 1, 1)
    return np.arange(lo, w.k + 1)


def _center_indices(n: int, stride: int) -> np.ndarray:
    idx = np.arange(0, n + 1, stride)
    if idx[-1] != n:
        idx = np.append(idx, n)
    return idx


def enumerate_windows(grid: Grid2D, policy: WindowPolicy) -> list[BallWindow]:
    """Deterministic ball family: radii ascending, centers row-major within each radius.

    Windows with fewer than 4 in-grid member nodes are dropped (possible only
    on strongly anisotropic grids).
    """
    for r in policy.radii:
        _check_radius_bounds(grid, policy.radii[0], r)
    ci = _center_indices(grid.nx, policy.stride)
    cj = _center_indices(grid.ny, policy.stride)
    out: list[BallWindow] = []
    for r in policy.radii:
        di, dj = disk_offsets(grid, r)
        # the in-grid member count is minimized at a grid corner (the valid
        # index overlap per axis is a trapezoid in the center index), so one
        # corner check decides whether any center needs filtering
        corner = np.count_nonzero((di >= 0) & (di <= grid.nx)
                                  & (dj >= 0) & (dj <= grid.ny))
        if corner >= 4:
            out.extend(BallWindow(ci=int(i), cj=int(j), radius=float(r))
                       for j in cj for i in ci)
            continue
        for j in cj:
            for i in ci:
                inside = ((i + di >= 0) & (i + di <= grid.nx)
                          & (j + dj >= 0) & (j + dj <= grid.ny))
                if int(np.count_nonzero(inside)) >= 4:
                    out.append(BallWindow(ci=int(i), cj=int(j), radius=float(r)))
    if not out:
        raise MeshError("window policy produced an empty family")
    return out


def enumerate_cylinders(grid: Grid2D, dt: float, n_levels: int,
                        policy: WindowPolicy, time_stride: int = 1) -> list[CylinderWindow]:
    """Deterministic cylinder family over anchor times k*dt, k >= 1.

    Anchors run backward from the final level with the given stride, so the
    final time is always a member.
    """
    if n_levels < 2:
        raise MeshError("need at least two time levels for cylinder windows")
    if time_stride < 1:
        raise MeshError(f"time_stride must be >= 1, got {time_stride}")
    anchors = sorted(set(range(n_levels - 1, 0, -time_stride)))
    balls = enumerate_windows(grid, policy)
    return [CylinderWindow(b.ci, b.cj, k, b.radius)
            for k in anchors for b in balls]


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

def write_field(path, f: ScalarField) -> None:
    """Write a text snapshot that round-trips bitwise (17 significant digits)."""
    g = f.grid
    lines = ["FIELD %d %d %.17g %.17g %.17g %.17g %.17g"
             % (g.nx, g.ny, g.dx, g.dy, g.x0, g.y0, f.t)]
    for j in range(g.ny + 1):
        lines.append(" ".join("%.17g" % v for v in f.values[j]))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path) -> ScalarField:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 8 or header[0] != "FIELD":
            raise MeshError(f"not a field snapshot: {path}")
        nx, ny = int(header[1]), int(header[2])
        dx, dy, x0, y0, t = (float(x) for x in header[3:])
        grid = Grid2D(nx=nx, ny=ny, dx=dx, dy=dy, x0=x0, y0=y0)
        values = np.empty(grid.shape)
        for j in range(ny + 1):
            row = np.array(fh.readline().split(), dtype=float)
            if row.size != nx + 1:
                raise MeshError(f"snapshot row {j} has {row.size} values, expected {nx + 1}")
            values[j] = row
    return ScalarField(grid, values, t=t)
