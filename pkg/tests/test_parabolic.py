import numpy as np
import pytest

from thermistor2d import mesh, elliptic
from thermistor2d.elliptic import EllipticProblem, solve
from thermistor2d.mesh import FaceVectorField, Grid2D, ScalarField
from thermistor2d.parabolic import (
    ParabolicError,
    ParabolicStepInput,
    PicardConfig,
    joule_flux,
    joule_pointwise,
    step_linear,
    step_nonlinear,
)


def run_linear(grid, u0, nsteps, dt, a_fn=None, g_fn=None, f0_fn=None):
    a = ScalarField.constant(grid, 1.0) if a_fn is None \
        else ScalarField.from_function(grid, a_fn)
    u = u0
    for k in range(nsteps):
        t1 = (k + 1) * dt
        g_bc = ScalarField.constant(grid, 0.0, t=t1) if g_fn is None \
            else ScalarField(grid, g_fn(t1), t=t1)
        f0 = None if f0_fn is None else ScalarField(grid, f0_fn(t1), t=t1)
        u = step_linear(ParabolicStepInput(u_prev=u, dt=dt, g_bc=g_bc, a=a, f0=f0))
    return u


# ---------------------------------------------------------------------------
# linear stepping
# ---------------------------------------------------------------------------

def test_heat_decay_tracks_eigenfunction():
    # u0 = sin(pi x) sin(pi y) decays like e^{-2 pi^2 t}; center value at
    # t = 0.1 within 2 percent on a 65x65 grid with dt = 1e-3
    g = Grid2D.unit_square(64)
    u0 = ScalarField.from_function(
        g, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    u = run_linear(g, u0, nsteps=100, dt=1e-3)
    oracle = np.exp(-2 * np.pi**2 * 0.1)
    assert u.values[32, 32] == pytest.approx(oracle, rel=0.02)


def test_constant_state_is_exact(unit17):
    u0 = ScalarField.constant(unit17, 7.0)
    u = run_linear(unit17, u0, nsteps=5, dt=0.1,
                   g_fn=lambda t: np.full(unit17.shape, 7.0))
    assert np.all(u.values == 7.0)


def test_temporal_first_order_convergence():
    # exact solution affine in space, so the spatial operator is exact and
    # the max-norm error is purely the backward-Euler time error
    g = Grid2D.unit_square(8)
    X, Y = g.meshgrid()

    def exact(t):
        return np.exp(-t) * (1.0 + X + 2.0 * Y)

    T = 0.2
    errs = []
    for dt in (0.01, 0.005):
        n = int(round(T / dt))
        u = run_linear(g, ScalarField(g, exact(0.0)), nsteps=n, dt=dt,
                       g_fn=exact, f0_fn=lambda t: -exact(t))
        errs.append(np.max(np.abs(u.values - exact(T))))
    ratio = errs[0] / errs[1]
    assert 1.8 <= ratio <= 2.2


def test_linear_maximum_principle(rng):
    g = Grid2D.unit_square(12)
    u0 = ScalarField(g, rng.uniform(-1.0, 4.0, g.shape))
    gv = rng.uniform(-1.0, 4.0, g.shape)
    u = run_linear(g, u0, nsteps=3, dt=0.05, g_fn=lambda t: gv)
    lo = min(u0.values.min(), gv[g.boundary_mask()].min())
    hi = max(u0.values.max(), gv[g.boundary_mask()].max())
    assert u.values.min() >= lo - 1e-10
    assert u.values.max() <= hi + 1e-10


def test_comparison_positivity(rng):
    g = Grid2D.unit_square(12)
    c = 0.7
    u0 = ScalarField(g, c + rng.uniform(0.0, 2.0, g.shape))
    gv = c + rng.uniform(0.0, 1.0, g.shape)
    f0 = rng.uniform(0.0, 5.0, g.shape)
    u = run_linear(g, u0, nsteps=4, dt=0.02, g_fn=lambda t: gv,
                   f0_fn=lambda t: f0)
    assert u.values.min() >= c - 1e-10


def test_unconditional_stability_single_giant_step(unit17, rng):
    u0 = ScalarField(unit17, rng.uniform(-2.0, 2.0, unit17.shape))
    u = run_linear(unit17, u0, nsteps=1, dt=1.0)
    assert np.max(np.abs(u.values)) <= np.max(np.abs(u0.values)) + 1e-12


def test_declared_ellipticity_bounds_enforced(unit17):
    u0 = ScalarField.constant(unit17, 1.0)
    g_bc = ScalarField.constant(unit17, 1.0)
    a = ScalarField.constant(unit17, 3.0)
    with pytest.raises(ParabolicError, match="ellipticity"):
        ParabolicStepInput(u_prev=u0, dt=0.1, g_bc=g_bc, a=a, K=2.0)
    ParabolicStepInput(u_prev=u0, dt=0.1, g_bc=g_bc, a=a, K=5.0)


def test_linear_mode_needs_coefficient(unit17):
    u0 = ScalarField.constant(unit17, 1.0)
    inp = ParabolicStepInput(u_prev=u0, dt=0.1, g_bc=u0)
    with pytest.raises(ParabolicError):
        step_linear(inp)
    with pytest.raises(ParabolicError):
        step_nonlinear(inp, PicardConfig())


# ---------------------------------------------------------------------------
# nonlinear stepping
# ---------------------------------------------------------------------------

def test_constant_kappa_converges_in_one_picard_pass(unit17, rng):
    u0 = ScalarField(unit17, rng.uniform(1.0, 2.0, unit17.shape))
    g_bc = ScalarField.constant(unit17, 1.5, t=0.05)
    inp = ParabolicStepInput(u_prev=u0, dt=0.05, g_bc=g_bc,
                             kappa=lambda s: np.full_like(s, 2.0))
    _, iters = step_nonlinear(inp, PicardConfig())
    assert iters == 1


def test_nonlinear_constant_state_exact_regardless_of_kappa(unit17):
    u = ScalarField.constant(unit17, 2.0)
    for k in range(3):
        g_bc = ScalarField.constant(unit17, 2.0, t=0.1 * (k + 1))
        u, iters = step_nonlinear(
            ParabolicStepInput(u_prev=u, dt=0.1, g_bc=g_bc, kappa=lambda s: 1.0 + s),
            PicardConfig())
        assert iters == 1
    assert np.all(u.values == 2.0)


def test_nonlinear_mms_spatial_order_two():
    # kappa(s) = 1 + s^2 against u* = e^{-t} sin(pi x) sin(pi y) with the
    # compensating source f0 = du/dt - (1+u^2) lap(u) - 2 u |grad u|^2
    T = 0.05

    def err_on(n, dt):
        g = Grid2D.unit_square(n)
        X, Y = g.meshgrid()
        S = np.sin(np.pi * X) * np.sin(np.pi * Y)
        gx = np.pi * np.cos(np.pi * X) * np.sin(np.pi * Y)
        gy = np.pi * np.sin(np.pi * X) * np.cos(np.pi * Y)

        def source(t):
            u = np.exp(-t) * S
            grad2 = np.exp(-2 * t) * (gx**2 + gy**2)
            return -u + 2 * np.pi**2 * u * (1 + u**2) - 2 * u * grad2

        u = ScalarField(g, S)
        n_steps = int(round(T / dt))
        for k in range(n_steps):
            t1 = (k + 1) * dt
            inp = ParabolicStepInput(
                u_prev=u, dt=dt,
                g_bc=ScalarField.constant(g, 0.0, t=t1),
                kappa=lambda s: 1.0 + s**2,
                f0=ScalarField(g, source(t1), t=t1))
            u, _ = step_nonlinear(inp, PicardConfig(tol_picard=1e-11), rtol=1e-12)
        return np.max(np.abs(u.values - np.exp(-T) * S))

    # dt fixed well below the spatial error at both resolutions, so the
    # ratio isolates the spatial order
    e_coarse = err_on(16, 2.5e-4)
    e_fine = err_on(32, 2.5e-4)
    ratio = e_coarse / e_fine
    assert 3.5 <= ratio <= 4.5


def test_picard_failure_reports_delta(unit17, rng):
    u0 = ScalarField(unit17, 1.0 + rng.uniform(0.0, 1.0, unit17.shape))
    g_bc = ScalarField.constant(unit17, 1.0, t=0.5)
    inp = ParabolicStepInput(u_prev=u0, dt=0.5, g_bc=g_bc,
                             kappa=lambda s: 1.0 + s**2)
    with pytest.raises(ParabolicError, match="delta"):
        step_nonlinear(inp, PicardConfig(tol_picard=1e-12, max_picard=1))


# ---------------------------------------------------------------------------
# Joule heating
# ---------------------------------------------------------------------------

def test_joule_flux_zero_for_flat_potential(unit17):
    s = ScalarField.constant(unit17, 2.0)
    phi = ScalarField.constant(unit17, 5.0)
    G = joule_flux(s, phi)
    assert np.all(G.fx == 0.0) and np.all(G.fy == 0.0)


def test_joule_divergence_identity_linear_potential(unit17):
    # unit coefficient with phi = x: G_x = x at faces and div G = |grad phi|^2 = 1
    s = ScalarField.constant(unit17, 1.0)
    phi = ScalarField.from_function(unit17, lambda x, y: x)
    G = joule_flux(s, phi)
    Xf = (np.arange(16) + 0.5) / 16.0
    assert np.max(np.abs(G.fx - Xf)) < 1e-14
    d = mesh.divergence(G)
    assert np.max(np.abs(d.values[1:-1, 1:-1] - 1.0)) < 1e-13


def test_joule_weak_identity_on_checkerboard():
    # div of the flux and the node-averaged pointwise density agree weakly
    # once phi solves the matching discrete potential equation
    g = Grid2D.unit_square(64)
    parity = np.add.outer(np.arange(65), np.arange(65)) % 2
    sig = ScalarField(g, np.where(parity == 0, 1.0, 10.0))
    h_bc = ScalarField.from_function(g, lambda x, y: x)
    phi, _ = solve(EllipticProblem(grid=g, a=sig, h_bc=h_bc), rtol=1e-12)
    v = ScalarField.from_function(
        g, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    lhs = mesh.node_inner(mesh.divergence(joule_flux(sig, phi)), v)
    rhs = mesh.node_inner(joule_pointwise(sig, phi), v)
    assert lhs == pytest.approx(rhs, rel=0.02)


def test_joule_divergence_nonnegative_for_discrete_solution():
    g = Grid2D.unit_square(32)
    parity = (np.add.outer(np.arange(33), np.arange(33)) // 4) % 2
    sig = ScalarField(g, np.where(parity == 0, 0.1, 3.0))
    h_bc = ScalarField.from_function(g, lambda x, y: 2.0 * x - y)
    phi, _ = solve(EllipticProblem(grid=g, a=sig, h_bc=h_bc), rtol=1e-12)
    d = mesh.divergence(joule_flux(sig, phi))
    assert d.values[1:-1, 1:-1].min() >= -1e-9
