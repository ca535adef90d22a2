import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sglab.field import (
    CoefficientMatrix,
    Field,
    FluxOperator,
    Grid,
    Trajectory,
    bochner_norm,
    cell_gradient_magnitude,
    cell_inner,
    discrete_divergence,
    discrete_gradient,
    face_inner,
    field_from_bytes,
    field_to_bytes,
    field_to_csv,
    gn_check,
    gn_exponents_equal,
    gn_relation_residual,
    gradient_power_integral,
    ledger,
    lebesgue_norm,
    marcinkiewicz_norm,
    p_flux,
    power_law_datum,
    sphere_area,
    truncate_G,
    truncate_T,
)
from sglab.regime import DomainError

GRIDS = [
    Grid.cartesian(9, 1),
    Grid.cartesian((6, 7)),
    Grid.cartesian((4, 5, 3)),
    Grid.radial(11, 2),
    Grid.radial(10, 3),
]


@pytest.mark.parametrize("grid", GRIDS, ids=lambda g: f"{g.mode}{g.cells}")
def test_summation_by_parts(grid):
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = Field(grid, rng.standard_normal(grid.shape))
        flux = rng.standard_normal(grid.n_faces)
        lhs = face_inner(grid, discrete_gradient(u), flux)
        rhs = -cell_inner(grid, u, discrete_divergence(grid, flux))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_volumes_and_face_weights_tile_domain():
    for g in GRIDS:
        if g.mode == "radial":
            assert math.isclose(g.measure, sphere_area(g.N) / g.N, rel_tol=1e-13)
        else:
            assert math.isclose(g.measure, 1.0, rel_tol=1e-13)
            # each axis family of faces tiles the box
            for sl in g.face_slices:
                assert math.isclose(g.face_weights[sl].sum(), 1.0, rel_tol=1e-13)


def test_sine_is_discrete_eigenfunction():
    n = 64
    g = Grid.cartesian(n, 1)
    x = g.axes[0]
    h = g.h[0]
    u = Field(g, np.sin(math.pi * x))
    lam = 4 / h**2 * math.sin(math.pi * h / 2) ** 2
    lap = discrete_divergence(g, discrete_gradient(u))
    np.testing.assert_allclose(lap.flat, -lam * u.flat, atol=1e-10)


def test_radial_laplacian_of_quadratic():
    # -Lap(1 - r^2) = 2N away from the boundary cell
    g = Grid.radial(200, 3)
    r = g.axes[0]
    u = Field(g, 1 - r**2)
    lap = discrete_divergence(g, discrete_gradient(u)).flat
    np.testing.assert_allclose(lap[:-1], -6.0, atol=1e-8)


def test_gradient_of_linear_field_2d():
    g = Grid.cartesian((32, 32))
    x, y = g.coords
    u = Field(g, 2 * x + 3 * y)
    mag = cell_gradient_magnitude(g, u).reshape(g.shape)
    assert np.allclose(mag[1:-1, 1:-1], math.sqrt(13))


@pytest.mark.parametrize("grid", GRIDS[:4], ids=lambda g: f"{g.mode}{g.cells}")
@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_flux_jacobian_matches_finite_differences(grid, p):
    rng = np.random.default_rng(1)
    A = CoefficientMatrix.random(grid, 0.5, 2.0, seed=3) if grid.mode == "cartesian" else None
    op = FluxOperator(grid, p, 1e-3, A)
    u = rng.standard_normal(grid.size)
    J = op.jacobian(u).toarray()
    e = 1e-6
    cols = []
    for i in range(grid.size):
        d = np.zeros(grid.size)
        d[i] = e
        cols.append((op.flux(u + d) - op.flux(u - d)) / (2 * e))
    np.testing.assert_allclose(J, np.stack(cols, axis=1), atol=1e-6 * max(1, np.abs(J).max()))


def test_p_flux_constant_gradient():
    g = Grid.cartesian(16, 1)
    u = Field(g, 2.0 * g.axes[0])
    flux = p_flux(u, 3.0)
    # interior faces carry |2|^(p-2) * 2 = 4
    np.testing.assert_allclose(flux[1:-1], 4.0)


def test_p_flux_zero_gradient_singular_p():
    g = Grid.cartesian(8, 1)
    flux = p_flux(Field.zeros(g), 1.5, eps=0.0)
    assert np.all(flux == 0)


def test_random_coefficients_respect_bounds():
    g = Grid.cartesian((8, 8))
    A = CoefficientMatrix.random(g, 0.3, 2.5, seed=7)
    assert A.check_bounds()
    assert np.allclose(A.values, np.swapaxes(A.values, 1, 2))
    B = CoefficientMatrix.random(g, 0.3, 2.5, seed=7)
    assert np.array_equal(A.values, B.values)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=50), st.floats(0, 1e6))
def test_truncation_identity(vals, k):
    v = np.array(vals)
    # exact up to one rounding of the subtraction
    np.testing.assert_allclose(truncate_T(v, k) + truncate_G(v, k), v, rtol=4e-16, atol=0)
    assert np.array_equal(truncate_G(v, k)[np.abs(v) <= k], np.zeros(np.sum(np.abs(v) <= k)))
    assert np.all(np.abs(truncate_T(v, k)) <= k)


def _marcinkiewicz_brute(v, w, gamma):
    best = 0.0
    for level in np.unique(np.abs(v)):
        if level <= 0:
            continue
        meas = w[np.abs(v) >= level].sum()
        best = max(best, level**gamma * meas)
    return best ** (1 / gamma)


def test_marcinkiewicz_matches_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(50):
        v = rng.choice([0.0, 0.5, 1.0, 2.0, 3.5], size=40) * rng.choice([-1, 1], size=40)
        w = rng.uniform(0.1, 1.0, size=40)
        gamma = rng.uniform(0.5, 3)
        assert math.isclose(marcinkiewicz_norm(v, gamma, w), _marcinkiewicz_brute(v, w, gamma), rel_tol=1e-12)


def test_chebyshev_bound():
    rng = np.random.default_rng(6)
    g = Grid.cartesian((10, 10))
    for _ in range(100):
        v = rng.standard_normal(g.size) * rng.uniform(0.1, 10)
        gamma = rng.uniform(1, 4)
        weak = marcinkiewicz_norm(v, gamma, g.volumes)
        strong = lebesgue_norm(Field(g, v), gamma)
        assert weak <= strong * (1 + 1e-12)


def test_lebesgue_norms():
    g = Grid.cartesian((4, 4))
    u = Field(g, np.full(g.shape, 3.0))
    assert math.isclose(lebesgue_norm(u, 2), 3.0)
    assert lebesgue_norm(u, math.inf) == 3.0
    with pytest.raises(DomainError):
        lebesgue_norm(u, 0)


def test_bochner_norm_constant_in_time():
    g = Grid.cartesian(10, 1, T=1.0)
    times = np.linspace(0, 1, 11)
    vals = np.ones((11, 10)) * 2.0
    tr = Trajectory(g, times, vals)
    assert math.isclose(bochner_norm(tr, 2, 2), 2.0)
    assert bochner_norm(tr, math.inf, 1) == 2.0
    with pytest.raises(DomainError):
        bochner_norm(tr, 0.5, 2)


def test_gradient_power_integral_linear():
    g = Grid.cartesian((40, 40))
    x, y = g.coords
    u = Field(g, x * (1 - x) * y * (1 - y))
    # 2 * int (1-2x)^2 dx * int (y(1-y))^2 dy = 2 * 1/3 * 1/30
    assert abs(gradient_power_integral(g, u, 2) - 1 / 45) < 1e-3


def test_gn_relation_validator():
    N, h, eta = 2, 1.5, 1.5
    w = y = gn_exponents_equal(N, h, eta)
    assert abs(gn_relation_residual(N, h, eta, w, y)) < 1e-12
    g = Grid.cartesian((8, 8), T=1.0)
    times = np.linspace(0, 1, 5)
    rng = np.random.default_rng(0)
    tr = Trajectory(g, times, rng.standard_normal((5, 64)))
    res = gn_check(tr, h, eta, w, y)
    assert res.lhs > 0 and res.rhs > 0
    with pytest.raises(DomainError, match="exponent relation"):
        gn_check(tr, h, eta, w, y + 0.1)
    with pytest.raises(DomainError):
        gn_check(tr, h, 2.0, w, y)  # eta must be < N


def test_gn_zero_field():
    g = Grid.cartesian((6, 6))
    tr = Trajectory(g, [0.0, 0.5, 1.0], np.zeros((3, 36)))
    w = gn_exponents_equal(2, 1.5, 1.5)
    res = gn_check(tr, 1.5, 1.5, w, w)
    assert res.lhs == 0 and res.rhs == 0 and res.ratio == 0


def test_ledger_zero_trajectory():
    g = Grid.cartesian((6, 6))
    tr = Trajectory(g, [0.0, 0.5, 1.0], np.zeros((3, 36)))
    led = ledger(tr, 3.0, 2.0, 1.5, marcinkiewicz=[(1.0, 1.0)])
    assert led.total == 0 and led.marcinkiewicz[0][2] == 0
    assert not led.blowup_flag


def test_ledger_energy_ignores_boundary_offset():
    # (1+|u|)^beta - 1 vanishes with u, so a zero field has no boundary jump
    g = Grid.cartesian((16, 16))
    tr = Trajectory(g, [0.0, 1.0], np.zeros((2, g.size)))
    assert ledger(tr, 2.0, 2.0, 1.0).grad_beta_energy == 0


def test_power_law_datum_preserves_mass_radial():
    N, eta, omega = 3, 3.0, 0.05
    g = Grid.radial(64, N)
    u = power_law_datum(g, eta, omega)
    exact = sphere_area(N) / (omega * eta)  # int_{|x|<1} |x|^{-N + omega eta} dx
    assert math.isclose(lebesgue_norm(u, eta) ** eta, exact, rel_tol=1e-12)


def test_power_law_datum_cartesian_is_finite_and_peaked():
    g = Grid.cartesian((16, 16))
    u = power_law_datum(g, 1.5, 0.1)
    assert np.all(np.isfinite(u.values))
    assert u.values.max() == u.values[7:9, 7:9].max()


@pytest.mark.parametrize("grid", GRIDS, ids=lambda g: f"{g.mode}{g.cells}")
def test_binary_round_trip(grid):
    rng = np.random.default_rng(2)
    u = Field(grid, rng.standard_normal(grid.shape))
    v = field_from_bytes(field_to_bytes(u))
    assert v.grid.mode == grid.mode and v.grid.cells == grid.cells and v.grid.N == grid.N
    assert np.array_equal(u.values, v.values)


def test_binary_rejects_bad_magic():
    with pytest.raises(ValueError):
        field_from_bytes(b"XXXXX" + bytes(20))


def test_csv_dump(tmp_path):
    g = Grid.cartesian((2, 3))
    u = Field(g, np.arange(6.0).reshape(2, 3))
    text = field_to_csv(u, tmp_path / "f.csv")
    lines = text.strip().splitlines()
    assert lines[0] == "x,y,value"
    assert len(lines) == 7
    assert float(lines[-1].split(",")[-1]) == 5.0


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid("polar", (4,))
    with pytest.raises(ValueError):
        Grid.radial(8, 1)
    with pytest.raises(ValueError):
        Grid.cartesian((4, 4, 4, 4))
