"""Coupled driver: potential solve and temperature step under an eps floor.

Each time level iterates a Gauss-Seidel style fixed point: freeze the
temperature iterate, solve the potential equation with coefficient
sigma(u) + eps, feed the divergence-form Joule flux into an implicit
temperature step, and repeat until the iterate settles. Three bounds are
enforced as hard aborts at every recorded level because the scheme provably
satisfies them up to solver tolerance: the temperature floor
c = min(min u0, min boundary g), the potential bound max|phi| <= max|h|,
and the coefficient sandwich eps <= sigma(u) + eps <= 2 sigma_sup.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .elliptic import EllipticProblem, face_coefficients, solve
from .materials import MaterialError, MaterialPair, sigma_upper_bound, validate_H1_H2
from .mesh import Grid2D, ScalarField, SpaceTimeField, gradient
from .parabolic import (
    ParabolicError,
    ParabolicStepInput,
    PicardConfig,
    joule_flux,
    step_nonlinear,
)

INVARIANT_TOL = 1e-8


class ThermistorError(RuntimeError):
    """Raised when a coupled run cannot be completed."""


class SpecValidationError(ThermistorError):
    """Raised when a problem specification violates a run hypothesis."""


class InvariantViolation(ThermistorError):
    """A theorem-backed discrete bound failed: a scheme defect, not physics."""


@dataclass(frozen=True)
class ProblemSpec:
    """Complete description of one coupled run.

    u0 is a function of (X, Y); g and h are functions of (X, Y, t) whose
    values matter on boundary nodes. Hypotheses checked before running:
    positive initial and boundary temperatures, compatibility g(., 0) = u0
    on the boundary, and eps below the conductivity sup.
    """

    grid: Grid2D
    T: float
    dt: float
    u0: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    h: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    materials: MaterialPair
    eps: float
    tol_couple: float = 1e-8
    tol_picard: float = 1e-9
    rtol_cg: float = 1e-10
    max_couple: int = 50
    max_picard: int = 30
    material_check: bool = True


@dataclass(frozen=True)
class EpsSchedule:
    eps0: float
    decay: float
    count: int

    def __post_init__(self) -> None:
        if not self.eps0 > 0:
            raise SpecValidationError(f"eps0 must be positive, got {self.eps0}")
        if not 0.0 < self.decay < 1.0:
            raise SpecValidationError(f"decay factor must be in (0, 1), got {self.decay}")
        if self.count < 1:
            raise SpecValidationError(f"schedule count must be >= 1, got {self.count}")

    def values(self) -> list[float]:
        return [self.eps0 * self.decay**k for k in range(self.count)]


@dataclass
class RunResult:
    u: SpaceTimeField
    phi: SpaceTimeField
    diagnostics: list[dict]
    c: float
    sigma_sup: float
    eps: float


@dataclass
class CauchyReport:
    eps_values: list[float]
    d_u: list[float]
    d_phi: list[float]
    complete: bool


@dataclass
class ContractionReport:
    delta: float
    r: np.ndarray
    sup_ratio: float | None


def _field_at(grid: Grid2D, fn, t: float) -> ScalarField:
    X, Y = grid.meshgrid()
    vals = np.broadcast_to(np.asarray(fn(X, Y, t), dtype=float), grid.shape).copy()
    return ScalarField(grid, vals, t=t)


def _n_steps(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise SpecValidationError(
            f"horizon T={T} is not an integral number of steps of dt={dt}")
    return n


def validate_spec(spec: ProblemSpec) -> tuple[float, float, float]:
    """Check run hypotheses; returns (c, sigma_sup, h_max)."""
    if not spec.T > 0 or not spec.dt > 0:
        raise SpecValidationError(f"need T, dt > 0, got T={spec.T}, dt={spec.dt}")
    if not spec.eps > 0:
        raise SpecValidationError(f"need eps > 0, got {spec.eps}")
    n = _n_steps(spec.T, spec.dt)
    grid = spec.grid
    bmask = grid.boundary_mask()
    X, Y = grid.meshgrid()

    u0_vals = np.broadcast_to(np.asarray(spec.u0(X, Y), dtype=float), grid.shape)
    if not np.all(np.isfinite(u0_vals)):
        raise SpecValidationError("initial temperature contains non-finite values")
    if not u0_vals.min() > 0:
        raise SpecValidationError(
            f"hypothesis violated: min u0 > 0 (got {u0_vals.min():g})")

    g_min = np.inf
    h_max = 0.0
    for k in range(n + 1):
        t = k * spec.dt
        gb = np.broadcast_to(np.asarray(spec.g(X, Y, t), dtype=float), grid.shape)[bmask]
        hb = np.broadcast_to(np.asarray(spec.h(X, Y, t), dtype=float), grid.shape)[bmask]
        if not (np.all(np.isfinite(gb)) and np.all(np.isfinite(hb))):
            raise SpecValidationError(f"boundary data non-finite at t={t:g}")
        g_min = min(g_min, float(gb.min()))
        h_max = max(h_max, float(np.abs(hb).max()))
    if not g_min > 0:
        raise SpecValidationError(
            f"hypothesis violated: min boundary temperature g > 0 (got {g_min:g})")

    g0 = np.broadcast_to(np.asarray(spec.g(X, Y, 0.0), dtype=float), grid.shape)[bmask]
    mismatch = float(np.max(np.abs(g0 - u0_vals[bmask])))
    if mismatch > 1e-12 * max(1.0, float(np.abs(u0_vals).max())):
        raise SpecValidationError(
            f"hypothesis violated: compatibility g(., 0) = u0 on the boundary "
            f"(max mismatch {mismatch:g})")

    c = min(float(u0_vals.min()), g_min)
    sigma_sup = sigma_upper_bound(spec.materials.resistivity, r=c)
    if not spec.eps < sigma_sup:
        raise SpecValidationError(
            f"eps={spec.eps:g} must stay below the conductivity sup "
            f"{sigma_sup:g} on temperatures >= c={c:g}")
    return c, sigma_sup, h_max


def _pilot_temperature_cap(spec: ProblemSpec) -> float:
    """Coarse, short pilot run to estimate the run's temperature range."""
    n_c = max(8, spec.grid.nx // 4)
    m_c = max(8, spec.grid.ny // 4)
    coarse = Grid2D.rectangle(spec.grid.lx, spec.grid.ly, n_c, m_c,
                              x0=spec.grid.x0, y0=spec.grid.y0)
    steps = max(1, int(round(spec.T / (4.0 * spec.dt))))
    pilot = dataclasses.replace(spec, grid=coarse, dt=spec.T / steps,
                                material_check=False)
    res = run(pilot)
    return 2.0 * float(res.u.data.max())


def _check_materials(spec: ProblemSpec, c: float) -> None:
    u_cap = _pilot_temperature_cap(spec)
    rep = validate_H1_H2(spec.materials, r=c, s_max=max(u_cap, 2.0 * c))
    if not rep.valid:
        raise SpecValidationError(
            "material hypotheses rejected on the run's temperature range "
            f"[{c:g}, {u_cap:g}]: " + "; ".join(rep.messages))


def _domain_energy(sigma_eps: ScalarField, phi: ScalarField) -> float:
    ax, ay = face_coefficients(sigma_eps)
    G = gradient(phi)
    s = (np.einsum("ij,ij->", ax, G.fx**2) + np.einsum("ij,ij->", ay, G.fy**2))
    return float(s) * phi.grid.cell_volume


def run(spec: ProblemSpec) -> RunResult:
    """March the coupled system from 0 to T, recording every level."""
    c, sigma_sup, h_max = validate_spec(spec)
    if spec.material_check:
        _check_materials(spec, c)
    grid = spec.grid
    n = _n_steps(spec.T, spec.dt)
    pair = spec.materials
    picard = PicardConfig(tol_picard=spec.tol_picard, max_picard=spec.max_picard)

    def sigma_eps_of(u_vals: np.ndarray, t: float) -> ScalarField:
        try:
            sig = np.asarray(pair.sigma(u_vals), dtype=float)
        except MaterialError as exc:
            raise InvariantViolation(
                f"conductivity evaluation failed at t={t:g}: {exc}") from exc
        a = sig + spec.eps
        if a.max() > 2.0 * sigma_sup * (1.0 + 1e-12):
            raise InvariantViolation(
                f"coefficient sandwich violated at t={t:g}: "
                f"sigma+eps reaches {a.max():g} > 2*sigma_sup = {2 * sigma_sup:g}")
        return ScalarField(grid, a, t=t)

    def check_level(u_f: ScalarField, phi_f: ScalarField, t: float) -> None:
        if u_f.values.min() < c - INVARIANT_TOL:
            raise InvariantViolation(
                f"temperature floor violated at t={t:g}: min u = "
                f"{u_f.values.min():.12g} < c - tol = {c - INVARIANT_TOL:.12g}")
        if np.abs(phi_f.values).max() > h_max + INVARIANT_TOL:
            raise InvariantViolation(
                f"potential bound violated at t={t:g}: max|phi| = "
                f"{np.abs(phi_f.values).max():.12g} > {h_max + INVARIANT_TOL:.12g}")

    u_prev = ScalarField.from_function(grid, spec.u0)
    sig0 = sigma_eps_of(u_prev.values, 0.0)
    phi_prev, stats0 = solve(EllipticProblem(grid=grid, a=sig0,
                                             h_bc=_field_at(grid, spec.h, 0.0)),
                             rtol=spec.rtol_cg)
    check_level(u_prev, phi_prev, 0.0)

    u_levels = [u_prev]
    phi_levels = [phi_prev]
    diagnostics = [{
        "t": 0.0,
        "min_u": float(u_prev.values.min()),
        "max_u": float(u_prev.values.max()),
        "max_abs_phi": float(np.abs(phi_prev.values).max()),
        "coupling_iters": 0,
        "picard_iters": 0,
        "cg_iters": stats0.iterations,
        "energy": _domain_energy(sig0, phi_prev),
    }]

    for k in range(1, n + 1):
        t = k * spec.dt
        g_bc = _field_at(grid, spec.g, t)
        h_bc = _field_at(grid, spec.h, t)
        u_star = u_prev
        phi = phi_prev
        picard_total = 0
        collect = {"cg_iterations": 0}
        converged = False
        for m in range(1, spec.max_couple + 1):
            sig_eps = sigma_eps_of(u_star.values, t)
            try:
                phi, stats = solve(EllipticProblem(grid=grid, a=sig_eps, h_bc=h_bc),
                                   rtol=spec.rtol_cg, x0=phi)
                collect["cg_iterations"] += stats.iterations
                G = joule_flux(sig_eps, phi)
                u_new, iters = step_nonlinear(
                    ParabolicStepInput(u_prev=u_prev, dt=spec.dt, g_bc=g_bc,
                                       kappa=pair.kappa, F=G),
                    picard, rtol=spec.rtol_cg, collect=collect)
            except (ParabolicError, RuntimeError) as exc:
                raise ThermistorError(f"step at t={t:g} failed: {exc}") from exc
            picard_total += iters
            delta = float(np.max(np.abs(u_new.values - u_star.values)))
            u_star = u_new
            if delta < spec.tol_couple:
                converged = True
                break
        if not converged:
            raise ThermistorError(
                f"potential/temperature coupling did not settle in "
                f"{spec.max_couple} iterations at t={t:g} (last delta "
                f"{delta:.3e}); try a smaller dt")

        check_level(u_star, phi, t)
        sig_final = sigma_eps_of(u_star.values, t)
        diagnostics.append({
            "t": t,
            "min_u": float(u_star.values.min()),
            "max_u": float(u_star.values.max()),
            "max_abs_phi": float(np.abs(phi.values).max()),
            "coupling_iters": m,
            "picard_iters": picard_total,
            "cg_iters": collect["cg_iterations"],
            "energy": _domain_energy(sig_final, phi),
        })
        u_levels.append(u_star)
        phi_levels.append(phi)
        u_prev = u_star
        phi_prev = phi

    return RunResult(
        u=SpaceTimeField.from_levels(u_levels, spec.dt),
        phi=SpaceTimeField.from_levels(phi_levels, spec.dt),
        diagnostics=diagnostics, c=c, sigma_sup=sigma_sup, eps=spec.eps)


# ---------------------------------------------------------------------------
# eps continuation
# ---------------------------------------------------------------------------

def _interior_probe(values: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Central box at least a quarter extent away from the boundary."""
    qi, qj = max(1, grid.nx // 4), max(1, grid.ny // 4)
    return values[..., qj:grid.ny + 1 - qj, qi:grid.nx + 1 - qi]


def continue_eps(spec: ProblemSpec,
                 schedule: EpsSchedule) -> tuple[RunResult, CauchyReport]:
    """Repeat the run along a decreasing eps sequence, reporting differences.

    d_u[k] is the space-time max-norm difference between consecutive runs;
    d_phi[k] the same for the potential, restricted to an interior probe box
    (the potential is only controlled locally). A failed run aborts the
    continuation; the partial report rides on the raised error.
    """
    eps_values = schedule.values()
    report = CauchyReport(eps_values=[], d_u=[], d_phi=[], complete=False)
    prev: RunResult | None = None
    first = True
    for eps_k in eps_values:
        sub = dataclasses.replace(spec, eps=eps_k,
                                  material_check=spec.material_check and first)
        try:
            res = run(sub)
        except ThermistorError as exc:
            exc.partial_report = report  # type: ignore[attr-defined]
            raise
        report.eps_values.append(eps_k)
        if prev is not None:
            report.d_u.append(float(np.max(np.abs(res.u.data - prev.u.data))))
            report.d_phi.append(float(np.max(np.abs(
                _interior_probe(res.phi.data, spec.grid)
                - _interior_probe(prev.phi.data, spec.grid)))))
        prev = res
        first = False
    report.complete = True
    return prev, report


# ---------------------------------------------------------------------------
# uniqueness probe
# ---------------------------------------------------------------------------

def interior_bump(X: np.ndarray, Y: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Smooth fixed bump vanishing on the boundary, peak value 1 at center."""
    xn = (X - grid.x0) / grid.lx
    yn = (Y - grid.y0) / grid.ly
    return (16.0 * xn * (1.0 - xn) * yn * (1.0 - yn)) ** 2


def uniqueness_probe(spec: ProblemSpec, delta: float) -> ContractionReport:
    """Compare a run against one with initial data perturbed by delta * bump."""
    if delta < 0:
        raise SpecValidationError(f"perturbation size must be >= 0, got {delta}")
    base = run(spec)

    u0_orig = spec.u0

    def u0_pert(X, Y):
        return np.asarray(u0_orig(X, Y), dtype=float) \
            + delta * interior_bump(X, Y, spec.grid)

    pert_spec = dataclasses.replace(spec, u0=u0_pert, material_check=False)
    pert = run(pert_spec)
    r = np.max(np.abs(base.u.data - pert.u.data), axis=(1, 2))
    sup_ratio = None if delta == 0 else float(r.max() / delta)
    return ContractionReport(delta=delta, r=r, sup_ratio=sup_ratio)
