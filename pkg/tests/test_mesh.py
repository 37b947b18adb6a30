import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermistor2d import mesh
from thermistor2d.mesh import (
    BallWindow,
    CylinderWindow,
    FaceVectorField,
    Grid2D,
    MeshError,
    ScalarField,
    SpaceTimeField,
    WindowPolicy,
)


def interior_random(grid: Grid2D, rng: np.random.Generator) -> ScalarField:
    v = rng.standard_normal(grid.shape)
    v[grid.boundary_mask()] = 0.0
    return ScalarField(grid, v)


# ---------------------------------------------------------------------------
# grid and field containers
# ---------------------------------------------------------------------------

def test_grid_rejects_too_few_cells():
    with pytest.raises(MeshError):
        Grid2D(nx=2, ny=8, dx=0.1, dy=0.1)
    with pytest.raises(MeshError):
        Grid2D(nx=8, ny=8, dx=0.0, dy=0.1)


def test_grid_node_placement():
    g = Grid2D(nx=4, ny=3, dx=0.5, dy=0.25, x0=1.0, y0=-1.0)
    assert g.shape == (4, 5)
    assert g.lx == pytest.approx(2.0)
    assert g.ly == pytest.approx(0.75)
    X, Y = g.meshgrid()
    assert X[2, 3] == pytest.approx(1.0 + 3 * 0.5)
    assert Y[2, 3] == pytest.approx(-1.0 + 2 * 0.25)


def test_scalar_field_validation(unit17):
    with pytest.raises(MeshError):
        ScalarField(unit17, np.zeros((3, 3)))
    bad = np.zeros(unit17.shape)
    bad[4, 4] = np.nan
    with pytest.raises(MeshError):
        ScalarField(unit17, bad)
    f = ScalarField.constant(unit17, 2.5, t=0.75)
    assert f.t == 0.75
    assert f.values.shape == unit17.shape


def test_face_field_shapes(unit17):
    F = FaceVectorField.zero(unit17)
    assert F.fx.shape == (17, 16)
    assert F.fy.shape == (16, 17)
    with pytest.raises(MeshError):
        FaceVectorField(unit17, F.fy, F.fx)


def test_space_time_field_levels(unit17):
    levels = [ScalarField.constant(unit17, float(k)) for k in range(4)]
    u = SpaceTimeField.from_levels(levels, dt=0.1)
    assert u.n_levels == 4
    assert u.t_final == pytest.approx(0.3)
    assert u.level(2).t == pytest.approx(0.2)
    assert np.all(u.level(3).values == 3.0)
    other = Grid2D.unit_square(8)
    with pytest.raises(MeshError):
        SpaceTimeField.from_levels([levels[0], ScalarField.constant(other, 0.0)], dt=0.1)


# ---------------------------------------------------------------------------
# discrete calculus
# ---------------------------------------------------------------------------

def test_gradient_of_constant_is_zero(unit17):
    G = mesh.gradient(ScalarField.constant(unit17, 4.0))
    assert np.all(G.fx == 0.0)
    assert np.all(G.fy == 0.0)


def test_gradient_exact_on_linear(unit17):
    f = ScalarField.from_function(unit17, lambda x, y: 3.0 * x)
    G = mesh.gradient(f)
    assert np.allclose(G.fx, 3.0, rtol=0, atol=1e-14)
    assert np.allclose(G.fy, 0.0, rtol=0, atol=1e-14)


def test_gradient_quadratic_face_value():
    # f = x^2 with dx = 0.1: face between x=0.2 and x=0.3 carries
    # (0.09 - 0.04) / 0.1 = 0.5
    g = Grid2D.rectangle(1.0, 1.0, 10, 10)
    f = ScalarField.from_function(g, lambda x, y: x * x)
    G = mesh.gradient(f)
    assert G.fx[0, 2] == pytest.approx(0.5, abs=1e-15)


def test_divergence_gradient_adjointness(unit17, rng):
    f = interior_random(unit17, rng)
    g = interior_random(unit17, rng)
    lhs = mesh.node_inner(mesh.divergence(mesh.gradient(f)), g)
    rhs = -mesh.face_inner(mesh.gradient(f), mesh.gradient(g))
    assert abs(lhs - rhs) <= 1e-13 * max(abs(lhs), abs(rhs))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31 - 1),
       n=st.integers(min_value=4, max_value=24))
def test_adjointness_property(seed, n):
    g = Grid2D.rectangle(2.0, 1.0, n, n + 3)
    r = np.random.default_rng(seed)
    f = interior_random(g, r)
    w = interior_random(g, r)
    lhs = mesh.node_inner(mesh.divergence(mesh.gradient(f)), w)
    rhs = -mesh.face_inner(mesh.gradient(f), mesh.gradient(w))
    scale = max(abs(lhs), abs(rhs), 1e-30)
    assert abs(lhs - rhs) <= 1e-12 * scale


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), c=st.floats(-5, 5))
def test_gradient_exact_on_affine_property(a, b, c):
    g = Grid2D.rectangle(1.0, 2.0, 9, 7)
    f = ScalarField.from_function(g, lambda x, y: a + b * x + c * y)
    G = mesh.gradient(f)
    tol = 1e-12 * (1 + abs(a) + abs(b) + abs(c))
    assert np.allclose(G.fx, b, rtol=0, atol=tol)
    assert np.allclose(G.fy, c, rtol=0, atol=tol)


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

def test_dyadic_policy_default_radii():
    g = Grid2D.unit_square(32)
    p = WindowPolicy.dyadic(g, stride=2)
    h = 1.0 / 32
    assert p.radii == pytest.approx((2 * h, 4 * h, 8 * h))


def test_enumerate_windows_frozen_count_33x33():
    # stride 2 with dyadic radii {2h, 4h, 8h} on a 33x33-node grid:
    # 17 * 17 centers * 3 radii = 867 windows
    g = Grid2D.unit_square(32)
    wins = mesh.enumerate_windows(g, WindowPolicy.dyadic(g, stride=2))
    assert len(wins) == 867


def test_exhaustive_policy_every_node_is_center():
    g = Grid2D.unit_square(8)
    wins = mesh.enumerate_windows(g, WindowPolicy.exhaustive(g))
    centers = {(w.ci, w.cj) for w in wins}
    assert centers == {(i, j) for i in range(9) for j in range(9)}


def test_radius_exceeding_domain_diameter_is_error():
    g = Grid2D.unit_square(16)
    with pytest.raises(MeshError):
        WindowPolicy.dyadic(g, r_min=5.0)


def test_ball_membership_interior_count():
    # offsets with di^2 + dj^2 <= 4 on a square grid: 13 nodes, the
    # exact-distance nodes (+-2, 0), (0, +-2) included
    g = Grid2D.unit_square(16)
    h = 1.0 / 16
    ii, jj = mesh.ball_members(g, BallWindow(ci=8, cj=8, radius=2 * h))
    assert ii.size == 13
    assert (10, 8) in set(zip(ii.tolist(), jj.tolist()))


def test_ball_membership_clips_to_grid():
    g = Grid2D.unit_square(16)
    ii, jj = mesh.ball_members(g, BallWindow(ci=0, cj=0, radius=2.0 / 16))
    assert ii.size == 6
    assert np.all(ii >= 0) and np.all(jj >= 0)


def test_enumerated_windows_have_at_least_four_members():
    # dy > 2*dx makes the radius-2dx corner disk collapse to a 3-node row,
    # so corners must be filtered out while interior centers survive
    g = Grid2D(nx=16, ny=16, dx=0.01, dy=0.03)
    p = WindowPolicy(stride=1, radii=(0.02,))
    wins = mesh.enumerate_windows(g, p)
    centers = {(w.ci, w.cj) for w in wins}
    assert (0, 0) not in centers
    assert (8, 8) in centers
    for w in wins:
        ii, _ = mesh.ball_members(g, w)
        assert ii.size >= 4


@settings(max_examples=25, deadline=None)
@given(ci=st.integers(0, 16), cj=st.integers(0, 16),
       rsteps=st.integers(2, 8))
def test_ball_members_within_radius_property(ci, cj, rsteps):
    g = Grid2D.unit_square(16)
    r = rsteps / 16.0
    ii, jj = mesh.ball_members(g, BallWindow(ci=ci, cj=cj, radius=r))
    d2 = ((ii - ci) / 16.0) ** 2 + ((jj - cj) / 16.0) ** 2
    assert np.all(d2 <= r * r * (1 + 1e-9))
    assert ii.size >= 4


def test_cylinder_levels_open_lower_endpoint():
    # depth R^2 = 2.5e-3 over dt = 1e-3 anchored at k=10 covers t in
    # (0.0075, 0.01], levels 8..10
    w = CylinderWindow(ci=0, cj=0, k=10, radius=0.05)
    assert mesh.cylinder_levels(1e-3, w).tolist() == [8, 9, 10]
    # exact multiple: depth = 3 levels, the endpoint level is excluded
    w2 = CylinderWindow(ci=0, cj=0, k=10, radius=np.sqrt(3e-3))
    assert mesh.cylinder_levels(1e-3, w2).tolist() == [8, 9, 10]


def test_cylinder_levels_never_include_initial_level():
    w = CylinderWindow(ci=0, cj=0, k=2, radius=10.0)
    assert mesh.cylinder_levels(0.1, w).tolist() == [1, 2]


def test_enumerate_cylinders_covers_final_level():
    g = Grid2D.unit_square(8)
    p = WindowPolicy.exhaustive(g)
    cyls = mesh.enumerate_cylinders(g, dt=0.01, n_levels=7, policy=p, time_stride=4)
    anchors = sorted({c.k for c in cyls})
    assert anchors == [2, 6]


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

def test_snapshot_round_trip_is_bitwise(tmp_path, rng):
    g = Grid2D(nx=6, ny=5, dx=1 / 3, dy=np.pi / 7, x0=-0.25, y0=1e-8)
    f = ScalarField(g, rng.standard_normal(g.shape) * np.exp(rng.uniform(-30, 30, g.shape)),
                    t=2.0 / 3.0)
    path = tmp_path / "u_000123.txt"
    mesh.write_field(path, f)
    back = mesh.read_field(path)
    assert back.grid == f.grid
    assert back.t == f.t
    assert back.values.tobytes() == f.values.tobytes()


def test_snapshot_header_rejected_if_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("GRID 3 3 0.1 0.1 0 0 0\n")
    with pytest.raises(MeshError):
        mesh.read_field(path)


def test_snapshot_round_trip_many_seeds(tmp_path):
    g = Grid2D.unit_square(4)
    for seed in range(20):
        r = np.random.default_rng(seed)
        f = ScalarField(g, r.standard_normal(g.shape), t=float(r.uniform(0, 10)))
        path = tmp_path / f"f_{seed}.txt"
        mesh.write_field(path, f)
        back = mesh.read_field(path)
        assert back.values.tobytes() == f.values.tobytes()
        assert back.t == f.t
