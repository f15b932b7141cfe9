import numpy as np
import pytest
from hypothesis import given, strategies as st

from lakesim.grid import TWO_PI, Grid
from lakesim.noise import adjointness_defect, dissipation_defect
from lakesim.oracles import dense_lie_derivative, dense_sobolev_norm
from lakesim.weighted import (
    Bathymetry,
    apply_M,
    lie_derivative,
    lie_derivative_squared,
    multi_indices,
    sup_sobolev_norm,
    weighted_div_residual,
    weighted_inner,
    weighted_lp_norm,
    weighted_sobolev_norm,
)

from conftest import lake


def div_free(grid, bath, seed, kmax=4):
    zeta = grid.random_smooth(np.random.default_rng(seed), kmax=kmax)
    return grid.perp_gradient(zeta) * bath.inv_b


# -- bathymetry ---------------------------------------------------------------------


def test_bathymetry_validation(grid16):
    with pytest.raises(ValueError, match="floor"):
        Bathymetry.from_family(grid16, "single", amp=0.995)
    with pytest.raises(ValueError, match="non-finite"):
        Bathymetry(grid16, np.full(grid16.shape, np.inf))
    with pytest.raises(ValueError, match="delta"):
        Bathymetry.from_family(grid16, delta=-0.1)
    with pytest.raises(ValueError, match="unknown bathymetry"):
        Bathymetry.from_family(grid16, "ridge")
    with pytest.raises(ValueError):
        Bathymetry(grid16, np.ones((8, 8)))


def test_bathymetry_bounds_and_cached_gradient(grid32):
    bath = Bathymetry.from_family(grid32, "double", amp=0.3, amp2=0.2)
    assert 0 < bath.b_min <= bath.b.min() and bath.b.max() <= bath.b_max
    x1, x2 = grid32.coords
    exact = np.stack([0.3 * TWO_PI * np.cos(TWO_PI * x1), -0.2 * TWO_PI * np.sin(TWO_PI * x2)])
    assert np.abs(bath.grad_b - exact).max() <= 1e-12
    assert np.abs(bath.grad_b[0] - grid32.derivative(bath.b, (1, 0))).max() <= 1e-12
    with pytest.raises(ValueError):
        bath.b[0, 0] = 5.0


# -- inner products and norms ----------------------------------------------------------


def test_weighted_inner_examples(grid16):
    x1, _ = grid16.coords
    one = np.ones(grid16.shape)
    assert weighted_inner(one, one, Bathymetry.from_family(grid16, mean=2.0)) == pytest.approx(2.0)
    flat = Bathymetry.from_family(grid16)
    assert abs(weighted_inner(np.sin(TWO_PI * x1), np.cos(TWO_PI * x1), flat)) <= 1e-14
    bumpy = Bathymetry.from_family(grid16, "single", amp=0.5)
    assert weighted_inner(one, one, bumpy) == pytest.approx(1.0, abs=1e-14)


def test_weighted_inner_rejects_mismatched_grids(grid16, grid32):
    with pytest.raises(ValueError):
        weighted_inner(np.ones(grid16.shape), np.ones(grid32.shape), Bathymetry.from_family(grid16))


@given(seed=st.integers(0, 10_000), a=st.floats(-5, 5), c=st.floats(-5, 5))
def test_weighted_inner_is_symmetric_and_bilinear(seed, a, c):
    g = Grid(16)
    bath = lake(g)
    rng = np.random.default_rng(seed)
    f, h, k = (g.random_smooth(rng) for _ in range(3))
    assert weighted_inner(f, h, bath) == pytest.approx(weighted_inner(h, f, bath), abs=1e-12)
    lhs = weighted_inner(a * f + c * h, k, bath)
    rhs = a * weighted_inner(f, k, bath) + c * weighted_inner(h, k, bath)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_lp_norm_examples(grid16):
    bath = lake(grid16, amp=0.4)
    c = np.full(grid16.shape, -3.0)
    for p in (1, 2, 3.5):
        assert weighted_lp_norm(c, p, bath) == pytest.approx(3.0 * bath.b.mean() ** (1 / p))
    x1, _ = grid16.coords
    flat = Bathymetry.from_family(grid16)
    assert weighted_lp_norm(np.sin(TWO_PI * x1), 2, flat) == pytest.approx(np.sqrt(0.5), abs=1e-14)
    g64 = Grid(64)
    s = np.sin(TWO_PI * g64.coords[0])
    assert weighted_lp_norm(s, np.inf, Bathymetry.from_family(g64)) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        weighted_lp_norm(c, 0.5, bath)


def test_sobolev_norm_examples(grid16):
    flat = Bathymetry.from_family(grid16)
    one = np.ones(grid16.shape)
    for k in range(5):
        assert weighted_sobolev_norm(one, k, flat) == pytest.approx(1.0)
    s = np.sin(TWO_PI * grid16.coords[0])
    assert weighted_sobolev_norm(s, 1, flat) == pytest.approx(np.sqrt((1 + TWO_PI**2) / 2), rel=1e-14)
    with pytest.raises(ValueError):
        weighted_sobolev_norm(s, -1, flat)


def test_multi_indices_cover_total_degree():
    assert sorted(multi_indices(2)) == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0)]
    assert len(multi_indices(4)) == 15


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_sobolev_norm_matches_dense_oracle(grid16, k):
    bath = lake(grid16)
    f = grid16.random_smooth(np.random.default_rng(k), kmax=5)
    assert weighted_sobolev_norm(f, k, bath) == pytest.approx(dense_sobolev_norm(f, k, bath), rel=1e-10)


def test_sobolev_norm_of_vector_field_sums_components(grid16):
    bath = lake(grid16)
    u = div_free(grid16, bath, 3)
    total = np.hypot(weighted_sobolev_norm(u[0], 2, bath), weighted_sobolev_norm(u[1], 2, bath))
    assert weighted_sobolev_norm(u, 2, bath) == pytest.approx(total, rel=1e-13)


def test_norm_equivalence_ratios_are_finite_and_positive(grid32):
    bath = lake(grid32)
    rng = np.random.default_rng(8)
    k = 2
    top = [a for a in multi_indices(k) if sum(a) == k]
    ratios = []
    for _ in range(20):
        f = grid32.random_smooth(rng, kmax=6)
        dk = np.sqrt(sum(weighted_lp_norm(grid32.derivative(f, a), 2, bath) ** 2 for a in top))
        ratios.append((weighted_lp_norm(f, 2, bath) + dk) / weighted_sobolev_norm(f, k, bath))
    ratios = np.array(ratios)
    assert np.all(np.isfinite(ratios)) and ratios.min() > 0
    assert ratios.min() >= 1 / np.sqrt(len(multi_indices(k)))
    assert ratios.max() <= np.sqrt(2) + 1e-12


def test_sup_sobolev_norm_single_mode(grid16):
    s = np.sin(TWO_PI * grid16.coords[0])
    assert sup_sobolev_norm(s, 2, grid16) == pytest.approx(TWO_PI**2, rel=1e-12)


# -- Lie derivative -----------------------------------------------------------------------


def test_lie_derivative_examples(grid16):
    flat = Bathymetry.from_family(grid16)
    x1, _ = grid16.coords
    xi = np.stack([np.ones(grid16.shape), np.zeros(grid16.shape)])
    got = lie_derivative(xi, np.sin(TWO_PI * x1), flat)
    assert np.abs(got - TWO_PI * np.cos(TWO_PI * x1)).max() <= 1e-12
    bath = lake(grid16)
    u = div_free(grid16, bath, 1)
    assert np.abs(lie_derivative(u, np.full(grid16.shape, 2.0), bath)).max() <= 1e-12


def test_lie_derivative_matches_dense_oracle(grid16):
    bath = lake(grid16)
    x2 = grid16.coords[1]
    xi = grid16.perp_gradient(np.sin(TWO_PI * x2)) * bath.inv_b
    f = grid16.random_smooth(np.random.default_rng(2), kmax=4)
    got = lie_derivative(xi, f, bath)
    ref = dense_lie_derivative(xi, f, bath)
    assert np.abs(got - ref).max() <= 1e-10 * np.abs(ref).max()
    got2 = lie_derivative_squared(xi, f, bath)
    ref2 = dense_lie_derivative(xi, dense_lie_derivative(xi, f, bath), bath)
    assert np.abs(got2 - ref2).max() <= 1e-10 * np.abs(ref2).max()


def test_lie_derivative_rejects_mismatched_grids(grid16, grid32):
    bath = lake(grid16)
    with pytest.raises(ValueError):
        lie_derivative(np.zeros((2,) + grid32.shape), np.zeros(grid16.shape), bath)


@pytest.mark.parametrize("n", [16, 32])
def test_adjointness_and_dissipation_for_div_free_fields(n):
    g = Grid(n)
    bath = lake(g)
    rng = np.random.default_rng(n)
    xi = div_free(g, bath, 99)
    assert weighted_div_residual(xi, bath) <= 1e-10
    for _ in range(20):
        f, h = g.random_smooth(rng), g.random_smooth(rng)
        scale = weighted_sobolev_norm(f, 1, bath) * weighted_sobolev_norm(h, 1, bath)
        assert abs(adjointness_defect(xi, f, h, bath)) <= 1e-9 * scale
        assert abs(dissipation_defect(xi, f, bath)) <= 1e-9 * weighted_sobolev_norm(f, 2, bath) ** 2


@given(seed=st.integers(0, 10_000), amp=st.floats(0.0, 0.6))
def test_adjointness_property(seed, amp):
    g = Grid(16)
    bath = lake(g, amp=amp)
    rng = np.random.default_rng(seed)
    xi = div_free(g, bath, seed + 1)
    f, h = g.random_smooth(rng), g.random_smooth(rng)
    scale = weighted_sobolev_norm(f, 1, bath) * weighted_sobolev_norm(h, 1, bath)
    assert abs(adjointness_defect(xi, f, h, bath)) <= 1e-9 * scale


def test_adjointness_fails_without_weighted_divergence_constraint(grid16):
    bath = lake(grid16, amp=0.5)
    xi = np.stack([np.ones(grid16.shape), np.zeros(grid16.shape)])
    f = 1.0 + np.cos(TWO_PI * grid16.coords[0])
    # defect is -int f^2 div(b xi) = -0.5 * 2 pi * int 2 cos^2 = -pi
    assert abs(adjointness_defect(xi, f, f, bath)) == pytest.approx(np.pi, rel=1e-10)


# -- the operator M -----------------------------------------------------------------------


def test_M_is_identity_for_flat_bottom_and_div_free_u(grid16):
    bath = Bathymetry.from_family(grid16, mean=1.5, delta=0.7)
    u = grid16.perp_gradient(grid16.random_smooth(np.random.default_rng(0)))
    assert np.abs(apply_M(u, bath) - u).max() <= 1e-12 * np.abs(u).max()


def test_M_is_identity_when_delta_vanishes(grid16):
    bath = lake(grid16, delta=0.0)
    u = np.random.default_rng(1).standard_normal((2,) + grid16.shape)
    assert np.array_equal(apply_M(u, bath), u)


def test_M_is_linear(grid16):
    bath = lake(grid16, delta=0.5)
    rng = np.random.default_rng(2)
    u, v = rng.standard_normal((2, 2) + grid16.shape)
    lhs = apply_M(2.0 * u - 3.0 * v, bath)
    rhs = 2.0 * apply_M(u, bath) - 3.0 * apply_M(v, bath)
    assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(rhs).max()


@pytest.mark.parametrize("delta", [0.1, 0.5, 1.0])
def test_M_projected_identity(grid32, delta):
    bath = Bathymetry.from_family(grid32, "double", amp=0.3, amp2=0.2, delta=delta)
    u, v = div_free(grid32, bath, 4), div_free(grid32, bath, 5)
    ugb, vgb = (u * bath.grad_b).sum(axis=0), (v * bath.grad_b).sum(axis=0)
    expected = weighted_inner(u, v, bath) + delta**2 / 3 * weighted_inner(ugb, vgb, bath)
    scale = weighted_lp_norm(u, 2, bath) * weighted_lp_norm(v, 2, bath)
    assert abs(weighted_inner(apply_M(u, bath), v, bath) - expected) <= 1e-9 * scale


@given(seed=st.integers(0, 10_000), delta=st.floats(0.0, 1.0))
def test_M_symmetric_and_positive(seed, delta):
    g = Grid(16)
    bath = lake(g, delta=delta)
    u, v = div_free(g, bath, seed), div_free(g, bath, seed + 1)
    scale = weighted_lp_norm(u, 2, bath) * weighted_lp_norm(v, 2, bath)
    sym = weighted_inner(apply_M(u, bath), v, bath) - weighted_inner(u, apply_M(v, bath), bath)
    assert abs(sym) <= 1e-9 * scale
    uu = weighted_inner(u, u, bath)
    assert weighted_inner(apply_M(u, bath), u, bath) >= uu - 1e-9 * uu


# -- weighted divergence ------------------------------------------------------------------


def test_div_residual_examples(grid16):
    bath = lake(grid16, amp=0.3)
    psi = grid16.random_smooth(np.random.default_rng(3))
    assert weighted_div_residual(grid16.perp_gradient(psi) * bath.inv_b, bath) <= 1e-10
    bumpy = lake(grid16, amp=0.5)
    u = np.stack([np.ones(grid16.shape), np.zeros(grid16.shape)])
    assert weighted_div_residual(u, bumpy) == pytest.approx(0.5 * TWO_PI, rel=1e-12)
    flat = Bathymetry.from_family(grid16, mean=2.0)
    const = np.stack([np.full(grid16.shape, 0.4), np.full(grid16.shape, -1.1)])
    assert weighted_div_residual(const, flat) <= 1e-14
