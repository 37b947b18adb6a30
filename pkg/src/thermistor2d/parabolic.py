"""Backward-Euler stepping for du/dt - div(a grad u) = div F + f0.

Two coefficient modes: a prescribed field a(x, t_{k+1}) (rough-coefficient
experiments, declared ellipticity bounds), or a = kappa(u) closed with a
Picard loop. Each step reuses the elliptic assembly, so the face coefficients
of the diffusion operator and of the Joule flux stay on one formula, which is
what makes the discrete comparison principle hold to solver tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import elliptic
from .elliptic import EllipticProblem, LinearSolveStats, jacobi_pcg
from .mesh import FaceVectorField, ScalarField, gradient


class ParabolicError(RuntimeError):
    """Raised when a time step cannot be completed."""


@dataclass(frozen=True)
class ParabolicStepInput:
    """One implicit step worth of data; coefficient source depends on mode.

    step_linear uses the prescribed field `a` (with optional declared
    ellipticity bound K), step_nonlinear evaluates `kappa` on the running
    iterate. F and f0 are the divergence-form and plain sources at t_{k+1},
    g_bc the Dirichlet data at t_{k+1}.
    """

    u_prev: ScalarField
    dt: float
    g_bc: ScalarField
    a: ScalarField | None = None
    kappa: Callable[[np.ndarray], np.ndarray] | None = None
    F: FaceVectorField | None = None
    f0: ScalarField | None = None
    K: float | None = None

    def __post_init__(self) -> None:
        if not self.dt > 0.0:
            raise ParabolicError(f"need dt > 0, got {self.dt}")
        if self.K is not None:
            if self.K < 1.0:
                raise ParabolicError(f"ellipticity bound K must be >= 1, got {self.K}")
            if self.a is None:
                raise ParabolicError("declared K without a prescribed coefficient")
            lo, hi = float(np.min(self.a.values)), float(np.max(self.a.values))
            if lo < 1.0 / self.K * (1 - 1e-12) or hi > self.K * (1 + 1e-12):
                raise ParabolicError(
                    f"coefficient range [{lo:g}, {hi:g}] violates the declared "
                    f"ellipticity bounds [1/{self.K:g}, {self.K:g}]")


@dataclass(frozen=True)
class PicardConfig:
    tol_picard: float = 1e-9
    max_picard: int = 30

    def __post_init__(self) -> None:
        if not self.tol_picard > 0:
            raise ParabolicError("tol_picard must be positive")
        if self.max_picard < 1:
            raise ParabolicError("max_picard must be at least 1")


def _implicit_solve(inp: ParabolicStepInput, a: ScalarField, rtol: float,
                    max_iter: int | None, x0: ScalarField | None,
                    collect: dict | None) -> ScalarField:
    g = inp.u_prev.grid
    if max_iter is None:
        max_iter = 20 * (g.nx + g.ny)
    s_vals = inp.u_prev.values / inp.dt
    if inp.f0 is not None:
        s_vals = s_vals + inp.f0.values
    prob = EllipticProblem(grid=g, a=a, h_bc=inp.g_bc, F=inp.F,
                           s=ScalarField(g, s_vals))
    A = elliptic.assemble(prob)
    A = A + (1.0 / inp.dt) * sp.identity(A.shape[0], format="csr")
    b = elliptic._interior_rhs(prob)
    guess = (inp.u_prev if x0 is None else x0).values[1:-1, 1:-1].ravel()
    try:
        x, stats = jacobi_pcg(A, b, guess, rtol, max_iter)
    except elliptic.EllipticError as exc:
        raise ParabolicError(f"implicit step failed: {exc}") from exc
    if collect is not None:
        collect["cg_iterations"] = collect.get("cg_iterations", 0) + stats.iterations
        collect["stats"] = stats
    out = inp.g_bc.values.copy()
    out[1:-1, 1:-1] = x.reshape(g.ny - 1, g.nx - 1)
    return ScalarField(g, out, t=inp.u_prev.t + inp.dt)


def step_linear(inp: ParabolicStepInput, rtol: float = 1e-10,
                max_iter: int | None = None, x0: ScalarField | None = None,
                collect: dict | None = None) -> ScalarField:
    """One backward-Euler step with the prescribed coefficient field."""
    if inp.a is None:
        raise ParabolicError("step_linear needs a prescribed coefficient field")
    return _implicit_solve(inp, inp.a, rtol, max_iter, x0, collect)


def step_nonlinear(inp: ParabolicStepInput, picard: PicardConfig,
                   rtol: float = 1e-10, max_iter: int | None = None,
                   collect: dict | None = None) -> tuple[ScalarField, int]:
    """Backward-Euler step with a = kappa(u), closed by Picard iteration.

    The coefficient is frozen at the current iterate, the linear step solved,
    and the loop stops when the coefficient is reproduced exactly (linear
    problems converge in one pass) or successive solves agree in max norm.
    """
    if inp.kappa is None:
        raise ParabolicError("step_nonlinear needs a conductivity model")
    g = inp.u_prev.grid
    iterate = inp.u_prev
    prev_solve: ScalarField | None = None
    delta = np.inf
    for m in range(1, picard.max_picard + 1):
        a_vals = np.asarray(inp.kappa(iterate.values), dtype=float)
        if not np.all(a_vals > 0.0):
            raise ParabolicError(
                "conductivity evaluation produced non-positive values; "
                "the boundedness hypothesis fails on this iterate")
        a = ScalarField(g, np.broadcast_to(a_vals, g.shape).copy())
        u_new = _implicit_solve(inp, a, rtol, max_iter, iterate, collect)
        if np.array_equal(np.asarray(inp.kappa(u_new.values), dtype=float), a_vals):
            return u_new, m
        if prev_solve is not None:
            delta = float(np.max(np.abs(u_new.values - prev_solve.values)))
            if delta < picard.tol_picard:
                return u_new, m
        prev_solve = u_new
        iterate = u_new
    raise ParabolicError(
        f"Picard loop did not converge in {picard.max_picard} iterations "
        f"(last delta {delta:.3e}); try a smaller dt")


# ---------------------------------------------------------------------------
# Joule heating
# ---------------------------------------------------------------------------

def joule_flux(sigma_eps: ScalarField, phi: ScalarField) -> FaceVectorField:
    """Divergence-form heating flux G = a_face * phi_face * grad(phi).

    a_face is the harmonic mean (the elliptic assembly's formula) and
    phi_face the arithmetic mean, so that when phi solves the matching
    discrete potential equation, div G is pointwise nonnegative at interior
    nodes up to solver tolerance.
    """
    if sigma_eps.grid != phi.grid:
        raise ParabolicError("coefficient and potential grids do not match")
    ax, ay = elliptic.face_coefficients(sigma_eps)
    G = gradient(phi)
    p = phi.values
    px = 0.5 * (p[:, :-1] + p[:, 1:])
    py = 0.5 * (p[:-1, :] + p[1:, :])
    return FaceVectorField(phi.grid, ax * px * G.fx, ay * py * G.fy)


def joule_pointwise(sigma_eps: ScalarField, phi: ScalarField) -> ScalarField:
    """Diagnostic heating density a_face |grad phi|^2 averaged to nodes."""
    if sigma_eps.grid != phi.grid:
        raise ParabolicError("coefficient and potential grids do not match")
    g = phi.grid
    ax, ay = elliptic.face_coefficients(sigma_eps)
    G = gradient(phi)
    ex = ax * G.fx**2
    ey = ay * G.fy**2
    xpart = np.empty(g.shape)
    xpart[:, 0] = ex[:, 0]
    xpart[:, -1] = ex[:, -1]
    xpart[:, 1:-1] = 0.5 * (ex[:, :-1] + ex[:, 1:])
    ypart = np.empty(g.shape)
    ypart[0, :] = ey[0, :]
    ypart[-1, :] = ey[-1, :]
    ypart[1:-1, :] = 0.5 * (ey[:-1, :] + ey[1:, :])
    return ScalarField(g, xpart + ypart, t=phi.t)
