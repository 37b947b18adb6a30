"""Divergence-form elliptic solves -div(a grad phi) = div F + s with Dirichlet data.

The node coefficient a must be bounded below by a positive floor (runs feed
sigma(u) + eps here, so the floor is eps). Faces carry the harmonic mean of
the adjacent node values, which keeps normal fluxes continuous across
coefficient jumps; the resulting 5-point operator is symmetric positive
definite on interior nodes and is solved by Jacobi-preconditioned conjugate
gradients with deterministic (ordered, thread-count independent) reductions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import (
    BallWindow,
    CylinderWindow,
    FaceVectorField,
    Grid2D,
    ScalarField,
    SpaceTimeField,
    ball_members,
    cylinder_levels,
    divergence,
    gradient,
)


class EllipticError(RuntimeError):
    """Raised when a linear solve cannot be completed."""


@dataclass(frozen=True)
class LinearSolveStats:
    iterations: int
    residual_norm: float
    achieved_rtol: float


@dataclass(frozen=True)
class EllipticProblem:
    grid: Grid2D
    a: ScalarField
    h_bc: ScalarField
    F: FaceVectorField | None = None
    s: ScalarField | None = None

    def __post_init__(self) -> None:
        for f in (self.a, self.h_bc, self.s):
            if f is not None and f.grid != self.grid:
                raise EllipticError("coefficient/data grids do not match")
        if self.F is not None and self.F.grid != self.grid:
            raise EllipticError("flux grid does not match")
        if not np.min(self.a.values) > 0.0:
            raise EllipticError(
                f"coefficient must be positive everywhere, min = {np.min(self.a.values)}")


# toggled only by the verification campaign's fault-injection probe; leaving
# it on "harmonic" keeps assembly, Joule flux, and energy on one face formula
_assembly_face_mode = "harmonic"


def face_coefficients(a: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Harmonic-mean face coefficients (ax on x-faces, ay on y-faces)."""
    v = a.values
    ax = 2.0 * v[:, :-1] * v[:, 1:] / (v[:, :-1] + v[:, 1:])
    ay = 2.0 * v[:-1, :] * v[1:, :] / (v[:-1, :] + v[1:, :])
    return ax, ay


def _arithmetic_face_coefficients(a: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    v = a.values
    return 0.5 * (v[:, :-1] + v[:, 1:]), 0.5 * (v[:-1, :] + v[1:, :])


def _assembly_faces(a: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    if _assembly_face_mode == "harmonic":
        return face_coefficients(a)
    return _arithmetic_face_coefficients(a)


def assemble(problem: EllipticProblem) -> sp.csr_matrix:
    """5-point operator for -div(a grad .) on interior nodes, CSR, SPD."""
    g = problem.grid
    nx, ny = g.nx, g.ny
    ax, ay = _assembly_faces(problem.a)
    cx = ax / g.dx**2  # couples (i, j) with (i+1, j)
    cy = ay / g.dy**2  # couples (i, j) with (i, j+1)

    ni, nj = nx - 1, ny - 1  # interior nodes per axis
    n = ni * nj

    def k_of(i, j):
        # interior node (i, j), 1 <= i <= nx-1, row-major over j then i
        return (j - 1) * ni + (i - 1)

    I, J = np.meshgrid(np.arange(1, nx), np.arange(1, ny), indexing="xy")
    I = I.ravel()
    J = J.ravel()
    k = k_of(I, J)

    diag = (cx[J, I - 1] + cx[J, I] + cy[J - 1, I] + cy[J, I])

    rows = [k]
    cols = [k]
    vals = [diag]
    west = I > 1
    rows.append(k[west]); cols.append(k_of(I[west] - 1, J[west]))
    vals.append(-cx[J[west], I[west] - 1])
    east = I < nx - 1
    rows.append(k[east]); cols.append(k_of(I[east] + 1, J[east]))
    vals.append(-cx[J[east], I[east]])
    south = J > 1
    rows.append(k[south]); cols.append(k_of(I[south], J[south] - 1))
    vals.append(-cy[J[south] - 1, I[south]])
    north = J < ny - 1
    rows.append(k[north]); cols.append(k_of(I[north], J[north] + 1))
    vals.append(-cy[J[north], I[north]])

    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))
    A.sum_duplicates()
    return A


def _interior_rhs(problem: EllipticProblem) -> np.ndarray:
    """RHS on interior nodes: div F + s plus the Dirichlet lifting."""
    g = problem.grid
    nx, ny = g.nx, g.ny
    rhs = np.zeros((ny - 1, nx - 1))
    if problem.F is not None:
        rhs += divergence(problem.F).values[1:-1, 1:-1]
    if problem.s is not None:
        rhs += problem.s.values[1:-1, 1:-1]

    ax, ay = _assembly_faces(problem.a)
    cx = ax / g.dx**2
    cy = ay / g.dy**2
    h = problem.h_bc.values
    # lift known boundary values into the RHS of adjacent interior rows
    rhs[:, 0] += cx[1:-1, 0] * h[1:-1, 0]
    rhs[:, -1] += cx[1:-1, -1] * h[1:-1, -1]
    rhs[0, :] += cy[0, 1:-1] * h[0, 1:-1]
    rhs[-1, :] += cy[-1, 1:-1] * h[-1, 1:-1]
    return rhs.ravel()


def jacobi_pcg(A: sp.csr_matrix, b: np.ndarray, x0: np.ndarray | None,
               rtol: float, max_iter: int) -> tuple[np.ndarray, LinearSolveStats]:
    """Conjugate gradients with diagonal preconditioning.

    All reductions go through np.einsum so the summation order is fixed and
    the result does not depend on BLAS threading.
    """

    def dot(u, v):
        return float(np.einsum("i,i->", u, v))

    bnorm = np.sqrt(dot(b, b))
    if bnorm == 0.0:
        return np.zeros_like(b), LinearSolveStats(0, 0.0, 0.0)
    dinv = 1.0 / A.diagonal()
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = dot(r, z)
    rnorm = np.sqrt(dot(r, r))
    it = 0
    while rnorm > rtol * bnorm:
        if it >= max_iter:
            raise EllipticError(
                f"conjugate gradients exceeded {max_iter} iterations "
                f"(residual {rnorm:.3e}, target {rtol * bnorm:.3e})")
        Ap = A @ p
        alpha = rz / dot(p, Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        rnorm = np.sqrt(dot(r, r))
        if not np.isfinite(rnorm):
            raise EllipticError(f"residual became non-finite at iteration {it}")
        z = dinv * r
        rz_new = dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return x, LinearSolveStats(it, rnorm, rnorm / bnorm)


def solve(problem: EllipticProblem, rtol: float = 1e-10,
          max_iter: int | None = None,
          x0: ScalarField | None = None) -> tuple[ScalarField, LinearSolveStats]:
    """Solve for phi with phi = h_bc on the boundary.

    With F = s = 0 the discrete maximum principle pins phi between the
    boundary extremes (up to the linear-solve tolerance).
    """
    g = problem.grid
    if max_iter is None:
        max_iter = 20 * (g.nx + g.ny)
    A = assemble(problem)
    b = _interior_rhs(problem)
    guess = None if x0 is None else x0.values[1:-1, 1:-1].ravel()
    x, stats = jacobi_pcg(A, b, guess, rtol, max_iter)
    out = problem.h_bc.values.copy()
    out[1:-1, 1:-1] = x.reshape(g.ny - 1, g.nx - 1)
    return ScalarField(g, out, t=problem.h_bc.t), stats


# ---------------------------------------------------------------------------
# windowed energy
# ---------------------------------------------------------------------------

def _member_mask(grid: Grid2D, w: BallWindow | CylinderWindow) -> np.ndarray:
    mask = np.zeros(grid.shape, dtype=bool)
    ii, jj = ball_members(grid, BallWindow(w.ci, w.cj, w.radius))
    mask[jj, ii] = True
    return mask


def _spatial_energy(ax: np.ndarray, ay: np.ndarray, phi: ScalarField,
                    mask: np.ndarray, grid: Grid2D) -> float:
    G = gradient(phi)
    fx_in = mask[:, :-1] & mask[:, 1:]
    fy_in = mask[:-1, :] & mask[1:, :]
    s = (np.einsum("ij,ij->", ax * fx_in, G.fx**2)
         + np.einsum("ij,ij->", ay * fy_in, G.fy**2))
    return float(s) * grid.cell_volume


def weighted_dirichlet_energy(a, phi, window) -> float:
    """Windowed energy sum of a_face * |grad phi|^2 * dx*dy (times dt in time).

    A face counts as inside when both of its endpoint nodes are window
    members. For cylinder windows, phi (and optionally a) are space-time
    fields and member levels contribute with weight dt each.
    """
    if isinstance(window, BallWindow):
        mask = _member_mask(phi.grid, window)
        ax, ay = face_coefficients(a)
        return _spatial_energy(ax, ay, phi, mask, phi.grid)
    if not isinstance(window, CylinderWindow):
        raise TypeError(f"unsupported window type {type(window).__name__}")
    if not isinstance(phi, SpaceTimeField):
        raise EllipticError("cylinder energy needs a space-time potential")
    grid = phi.grid
    mask = _member_mask(grid, window)
    total = 0.0
    for k in cylinder_levels(phi.dt, window):
        ak = a.level(int(k)) if isinstance(a, SpaceTimeField) else a
        ax, ay = face_coefficients(ak)
        total += _spatial_energy(ax, ay, phi.level(int(k)), mask, grid)
    return total * phi.dt
