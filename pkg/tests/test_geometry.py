import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from wcca.exceptions import (
    BaseMismatch,
    DegenerateDensity,
    DomainError,
    EmptyInput,
    GridMismatch,
    InvalidDistribution,
    NotInLogImage,
    SupportViolation,
)
from wcca.geometry import (
    Distribution,
    ExpMode,
    GridConfig,
    TangentVector,
    exp_map,
    from_density_grid,
    from_samples,
    log_map,
    mccann_geodesic,
    transport_vector,
    wasserstein_distance,
)

from .generate import generate_distribution, generate_rng

grid = GridConfig(m_levels=64, t_points=2)
wide = GridConfig(m_levels=64, t_points=2, support=(0.0, 2.0))


def uniform(low: float, high: float, on: GridConfig = grid) -> Distribution:
    return Distribution(q=low + (high - low) * on.levels, grid=on)


def test_grid_levels_are_midpoints():
    small = GridConfig(m_levels=4, t_points=3)
    assert np.allclose(small.levels, [0.125, 0.375, 0.625, 0.875])
    assert np.allclose(small.times, [0.0, 0.5, 1.0])


def test_grid_rejects_bad_parameters():
    with pytest.raises(DomainError):
        GridConfig(m_levels=1, t_points=4)
    with pytest.raises(DomainError):
        GridConfig(m_levels=8, t_points=1)
    with pytest.raises(DomainError):
        GridConfig(m_levels=8, t_points=4, support=(1.0, 1.0))


def test_grid_dict_round_trip():
    assert GridConfig.from_dict(wide.to_dict()) == wide


def test_distribution_rejects_decreasing_quantiles():
    q = grid.levels[::-1].copy()
    with pytest.raises(InvalidDistribution):
        Distribution(q=q, grid=grid)


def test_distribution_rejects_support_violation():
    with pytest.raises(SupportViolation):
        Distribution(q=grid.levels + 0.5, grid=grid)


def test_distribution_is_read_only():
    mu = uniform(0.0, 1.0)
    with pytest.raises(ValueError):
        mu.q[0] = 0.3


def test_distance_to_itself_is_zero():
    mu = uniform(0.0, 1.0)
    assert wasserstein_distance(mu, mu) == 0.0


def test_distance_between_point_masses():
    first = Distribution(q=np.full(grid.m_levels, 0.2), grid=grid)
    second = Distribution(q=np.full(grid.m_levels, 0.7), grid=grid)
    assert wasserstein_distance(first, second) == pytest.approx(0.5, abs=1e-12)


def test_distance_between_shifted_uniforms():
    mu, nu = uniform(0.0, 0.5), uniform(0.5, 1.0)
    oracle = np.sqrt(np.mean((nu.q - mu.q) ** 2))
    assert wasserstein_distance(mu, nu) == pytest.approx(0.5, abs=1e-12)
    assert wasserstein_distance(mu, nu) == pytest.approx(oracle)


def test_distance_needs_matching_grids():
    with pytest.raises(GridMismatch):
        wasserstein_distance(uniform(0.0, 1.0), uniform(0.0, 1.0, wide))


def test_log_of_base_is_zero():
    mu = uniform(0.0, 1.0)
    assert np.all(log_map(mu, mu).v == 0.0)


def test_log_of_shift_is_constant():
    mu, nu = uniform(0.0, 1.0, wide), uniform(0.25, 1.25, wide)
    assert np.allclose(log_map(mu, nu).v, 0.25, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(0.5, 8.0), st.floats(0.5, 8.0), st.floats(0.5, 8.0), st.floats(0.5, 8.0)
)
def test_log_norm_is_distance_for_beta_pairs(a1, b1, a2, b2):
    mu = Distribution(q=stats.beta.ppf(grid.levels, a1, b1), grid=grid)
    nu = Distribution(q=stats.beta.ppf(grid.levels, a2, b2), grid=grid)
    assert log_map(mu, nu).norm() == pytest.approx(wasserstein_distance(mu, nu), abs=1e-12)


def test_exp_of_zero_is_base():
    mu = uniform(0.0, 1.0)
    assert np.array_equal(exp_map(mu, TangentVector(v=np.zeros(grid.m_levels), base=mu)).q, mu.q)


def test_exp_inverts_log():
    rng = generate_rng(3)
    for _ in range(20):
        mu, nu = generate_distribution(rng, grid), generate_distribution(rng, grid)
        assert np.max(np.abs(exp_map(mu, log_map(mu, nu)).q - nu.q)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0))
def test_log_inverts_exp(seed, scale):
    rng = generate_rng(seed)
    mu, nu = generate_distribution(rng, grid), generate_distribution(rng, grid)
    # a shortened step toward nu keeps exp inside the strict domain
    v = TangentVector(v=scale * (nu.q - mu.q), base=mu)
    recovered = log_map(mu, exp_map(mu, v, ExpMode.strict))
    assert np.max(np.abs(recovered.v - v.v)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_distance_is_a_metric(seed):
    rng = generate_rng(seed)
    mu, nu, xi = (generate_distribution(rng, grid) for _ in range(3))
    assert wasserstein_distance(mu, nu) == wasserstein_distance(nu, mu)
    assert wasserstein_distance(mu, nu) >= 0.0
    assert wasserstein_distance(mu, xi) <= (
        wasserstein_distance(mu, nu) + wasserstein_distance(nu, xi) + 1e-12
    )


def test_strict_exp_rejects_non_monotone_map():
    mu = uniform(0.0, 1.0)
    v = TangentVector(v=-2.0 * grid.levels, base=mu)
    with pytest.raises(NotInLogImage):
        exp_map(mu, v)


def test_strict_exp_rejects_leaving_support():
    mu = uniform(0.0, 1.0)
    v = TangentVector(v=np.full(grid.m_levels, 0.5), base=mu)
    with pytest.raises(SupportViolation):
        exp_map(mu, v, ExpMode.strict)


def test_project_exp_returns_nearest_valid_quantiles():
    mu = uniform(0.0, 1.0)
    v = TangentVector(v=-2.0 * grid.levels, base=mu)
    projected = exp_map(mu, v, ExpMode.project)
    assert np.all(np.diff(projected.q) >= 0)
    assert projected.q.min() >= 0.0 and projected.q.max() <= 1.0
    # -u is decreasing and below the support, so the projection pools at 0
    assert np.allclose(projected.q, 0.0)


def test_exp_needs_matching_base():
    mu, nu = uniform(0.0, 1.0), uniform(0.0, 0.5)
    with pytest.raises(BaseMismatch):
        exp_map(mu, TangentVector(v=np.zeros(grid.m_levels), base=nu))


def test_geodesic_endpoints():
    mu, nu = uniform(0.0, 0.5), uniform(0.2, 1.0)
    assert np.array_equal(mccann_geodesic(mu, nu, 0.0).q, mu.q)
    assert np.allclose(mccann_geodesic(mu, nu, 1.0).q, nu.q)


def test_geodesic_midpoint_of_uniforms():
    mu, nu = uniform(0.0, 1.0, wide), uniform(1.0, 2.0, wide)
    middle = mccann_geodesic(mu, nu, 0.5)
    assert np.allclose(middle.q, uniform(0.5, 1.5, wide).q, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_geodesic_has_constant_speed(seed, s, t):
    rng = generate_rng(seed)
    mu, nu = generate_distribution(rng, grid), generate_distribution(rng, grid)
    gap = wasserstein_distance(mccann_geodesic(mu, nu, s), mccann_geodesic(mu, nu, t))
    assert gap == pytest.approx(abs(t - s) * wasserstein_distance(mu, nu), abs=1e-12)


def test_geodesic_rejects_time_outside_unit_interval():
    with pytest.raises(DomainError):
        mccann_geodesic(uniform(0.0, 1.0), uniform(0.0, 0.5), 1.5)


def test_transport_preserves_inner_products_and_inverts():
    rng = generate_rng(5)
    mu, nu = generate_distribution(rng, grid), generate_distribution(rng, grid)
    u = TangentVector(v=rng.normal(size=grid.m_levels), base=mu)
    w = TangentVector(v=rng.normal(size=grid.m_levels), base=mu)
    pu, pw = transport_vector(u, mu, nu), transport_vector(w, mu, nu)
    assert pu.base is nu
    assert pu.inner(pw) == pytest.approx(u.inner(w), abs=1e-12)
    assert np.array_equal(transport_vector(pu, nu, mu).v, u.v)
    assert np.array_equal(transport_vector(u, mu, mu).v, u.v)


def test_inner_product_needs_common_base():
    mu, nu = uniform(0.0, 1.0), uniform(0.0, 0.5)
    u = TangentVector(v=np.ones(grid.m_levels), base=mu)
    w = TangentVector(v=np.ones(grid.m_levels), base=nu)
    with pytest.raises(BaseMismatch):
        u.inner(w)


def test_single_sample_gives_constant_quantiles():
    assert np.allclose(from_samples([0.5], grid).q, 0.5)


def test_two_samples_use_right_continuous_inverse():
    small = GridConfig(m_levels=4, t_points=2)
    assert from_samples([1.0, 0.0], small).q.tolist() == [0.0, 0.0, 1.0, 1.0]


def test_many_uniform_samples_track_the_identity():
    values = generate_rng(7).random(100_000)
    assert np.max(np.abs(from_samples(values, grid).q - grid.levels)) < 0.02


def test_from_samples_rejects_empty_and_out_of_support():
    with pytest.raises(EmptyInput):
        from_samples([], grid)
    with pytest.raises(SupportViolation):
        from_samples([0.2, 1.5], grid)
    assert from_samples([0.2, 1.5], grid, clip=True).q.max() == 1.0


def test_flat_density_gives_identity_quantiles():
    x = np.linspace(0.0, 1.0, 4096)
    flat = from_density_grid(x, grid, values=np.ones_like(x))
    assert np.max(np.abs(flat.q - grid.levels)) < 1e-6
    beta = from_density_grid(list(zip(x, stats.beta.pdf(x, 1.0, 1.0))), grid)
    assert np.max(np.abs(beta.q - flat.q)) < 1e-6


def test_beta_density_median():
    odd = GridConfig(m_levels=65, t_points=2)
    x = np.linspace(0.0, 1.0, 4096)
    median = from_density_grid(x, odd, values=stats.beta.pdf(x, 2.0, 3.0)).q[32]
    assert median == pytest.approx(0.38573, abs=1e-4)
    assert median == pytest.approx(stats.beta.ppf(0.5, 2.0, 3.0), abs=1e-4)


def test_zero_density_is_degenerate():
    x = np.linspace(0.0, 1.0, 32)
    with pytest.raises(DegenerateDensity):
        from_density_grid(x, grid, values=np.zeros_like(x))


def test_distribution_sampling_stays_in_range():
    mu = uniform(0.2, 0.6)
    draws = mu.sample(1000, generate_rng(1))
    assert draws.shape == (1000,)
    assert draws.min() >= mu.q[0] and draws.max() <= mu.q[-1]


def test_distribution_dict_round_trip():
    mu = generate_distribution(generate_rng(2), grid)
    again = Distribution.from_dict(mu.to_dict(), grid)
    assert np.array_equal(again.q, mu.q)
    with pytest.raises(GridMismatch):
        Distribution.from_dict(mu.to_dict(), wide)
