import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wcca.exceptions import BaseMismatch, DomainError, GridMismatch, NotInLogImage
from wcca.fields import (
    DistributionCurve,
    FieldOperator,
    TangentField,
    exp_field,
    field_inner,
    field_to_dict,
    rank_one_operator_apply,
    transport_field,
    zero_field,
)
from wcca.geometry import ExpMode, GridConfig

from .generate import generate_quantiles, generate_rng

grid = GridConfig(m_levels=8, t_points=4)


def random_curve(rng) -> DistributionCurve:
    return DistributionCurve(q=generate_quantiles(rng, grid, grid.t_points), grid=grid)


def random_field(rng, base: DistributionCurve) -> TangentField:
    return TangentField(z=rng.normal(size=(grid.t_points, grid.m_levels)), base=base)


def test_curve_frames_round_trip():
    curve = random_curve(generate_rng(1))
    again = DistributionCurve.from_frames(curve.frames)
    assert again.same_as(curve)
    assert np.array_equal(curve.frame(2).q, curve.q[2])


def test_curve_rejects_wrong_shape():
    with pytest.raises(GridMismatch):
        DistributionCurve(q=np.zeros((grid.t_points + 1, grid.m_levels)), grid=grid)


def test_inner_with_zero_field_is_zero():
    rng = generate_rng(2)
    base = random_curve(rng)
    assert field_inner(random_field(rng, base), zero_field(base)) == 0.0


def test_inner_of_constant_fields():
    base = random_curve(generate_rng(3))
    ones = TangentField(z=np.ones((grid.t_points, grid.m_levels)), base=base)
    assert field_inner(ones, 2 * ones) == pytest.approx(2.0, abs=1e-12)


def test_inner_scales_with_time_domain():
    longer = GridConfig(m_levels=8, t_points=4, time_domain=(0.0, 3.0))
    base = DistributionCurve(q=np.tile(longer.levels, (4, 1)), grid=longer)
    ones = TangentField(z=np.ones((4, 8)), base=base)
    assert ones.norm() ** 2 == pytest.approx(3.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_cauchy_schwarz(seed):
    rng = generate_rng(seed)
    base = random_curve(rng)
    z1, z2 = random_field(rng, base), random_field(rng, base)
    assert abs(field_inner(z1, z2)) <= z1.norm() * z2.norm() + 1e-12


def test_fields_on_different_curves_do_not_mix():
    rng = generate_rng(4)
    z1 = random_field(rng, random_curve(rng))
    z2 = random_field(rng, random_curve(rng))
    with pytest.raises(BaseMismatch):
        field_inner(z1, z2)
    with pytest.raises(BaseMismatch):
        z1 + z2


def test_field_arithmetic():
    rng = generate_rng(5)
    base = random_curve(rng)
    z1, z2 = random_field(rng, base), random_field(rng, base)
    assert np.allclose((z1 + z2 - z2).z, z1.z)
    assert np.allclose((-z1).z, -z1.z)
    assert (3.0 * z1).norm() == pytest.approx(3.0 * z1.norm())


def test_field_rejects_non_finite_entries():
    base = random_curve(generate_rng(6))
    z = np.zeros((grid.t_points, grid.m_levels))
    z[0, 0] = np.nan
    with pytest.raises(DomainError):
        TangentField(z=z, base=base)


def test_transport_is_unitary_and_invertible():
    rng = generate_rng(7)
    mu, nu = random_curve(rng), random_curve(rng)
    z, w_mu = random_field(rng, mu), random_field(rng, mu)
    w = random_field(rng, nu)
    moved = transport_field(z, nu)
    assert moved.base is nu
    assert transport_field(z, mu).z.tolist() == z.z.tolist()
    assert (moved - w).norm() == (z - transport_field(w, mu)).norm()
    assert field_inner(moved, w) == field_inner(z, transport_field(w, mu))
    assert field_inner(moved, transport_field(w_mu, nu)) == pytest.approx(field_inner(z, w_mu))


def test_transport_needs_matching_grid():
    rng = generate_rng(8)
    z = random_field(rng, random_curve(rng))
    other = GridConfig(m_levels=8, t_points=5)
    with pytest.raises(GridMismatch):
        transport_field(z, DistributionCurve(q=np.tile(other.levels, (5, 1)), grid=other))


def test_exp_field_of_zero_is_base_curve():
    base = random_curve(generate_rng(9))
    assert exp_field(zero_field(base)).same_as(base)


def test_exp_field_strict_and_project():
    base = DistributionCurve(q=np.tile(grid.levels, (grid.t_points, 1)), grid=grid)
    backwards = TangentField(z=np.tile(-2.0 * grid.levels, (grid.t_points, 1)), base=base)
    with pytest.raises(NotInLogImage):
        exp_field(backwards)
    projected = exp_field(backwards, ExpMode.project)
    assert np.all(np.diff(projected.q, axis=1) >= 0)


def test_rank_one_apply():
    rng = generate_rng(10)
    base = random_curve(rng)
    left = random_field(rng, base)
    right = random_field(rng, base)
    unit = right * (1.0 / right.norm())
    assert np.allclose(rank_one_operator_apply(left, unit, unit).z, left.z)

    # a field orthogonal to `right`
    arg = random_field(rng, base)
    orthogonal = arg - right * (field_inner(arg, right) / field_inner(right, right))
    assert np.allclose(rank_one_operator_apply(left, right, orthogonal).z, 0.0, atol=1e-12)


def test_rank_one_apply_is_linear():
    rng = generate_rng(11)
    base = random_curve(rng)
    left, right, a, b = (random_field(rng, base) for _ in range(4))
    combined = rank_one_operator_apply(left, right, 2.0 * a + b)
    separate = 2.0 * rank_one_operator_apply(left, right, a) + rank_one_operator_apply(left, right, b)
    assert np.allclose(combined.z, separate.z)


def test_operator_matches_dense_matrix():
    rng = generate_rng(12)
    base = random_curve(rng)
    pairs = [(random_field(rng, base), random_field(rng, base)) for _ in range(3)]
    operator = FieldOperator.from_fields(pairs, coefficients=[1.0, -0.5, 2.0])
    arg = random_field(rng, base)
    assert np.allclose(operator.apply(arg).z.ravel(), operator.dense() @ arg.z.ravel())


def test_operator_norms_match_dense_values():
    rng = generate_rng(13)
    base = random_curve(rng)
    pairs = [(random_field(rng, base), random_field(rng, base)) for _ in range(3)]
    operator = FieldOperator.from_fields(pairs, coefficients=[0.3, 1.2, -0.7])
    matrix = operator.dense()
    assert operator.hilbert_schmidt_norm() == pytest.approx(np.linalg.norm(matrix, "fro"))
    assert operator.operator_norm() == pytest.approx(np.linalg.norm(matrix, 2))


def test_operator_difference_and_transport():
    rng = generate_rng(14)
    mu, nu = random_curve(rng), random_curve(rng)
    pairs = [(random_field(rng, mu), random_field(rng, mu)) for _ in range(2)]
    operator = FieldOperator.from_fields(pairs)
    assert (operator - operator).hilbert_schmidt_norm() == pytest.approx(0.0, abs=1e-6)
    moved = operator.transport(nu, nu)
    assert moved.hilbert_schmidt_norm() == pytest.approx(operator.hilbert_schmidt_norm())
    with pytest.raises(BaseMismatch):
        operator - moved
    with pytest.raises(BaseMismatch):
        operator.apply(random_field(rng, nu))


def test_field_to_dict():
    base = random_curve(generate_rng(15))
    data = field_to_dict(zero_field(base))
    assert data["t_points"] == grid.t_points
    assert len(data["values"]) == grid.t_points
    assert len(data["values"][0]) == grid.m_levels
