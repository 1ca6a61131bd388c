"""
Vector fields along a curve of measures: the tensor Hilbert space T(mu).

A field Z is stored as a (t_points x m_levels) array with
z[t][j] = Z(t)(F_{mu(t)}^{-1}(u_j)). The inner product
<<Z1, Z2>> = integral of <Z1(t), Z2(t)>_{mu(t)} dt is evaluated with the
uniform Riemann rule in time and the midpoint rule in quantile level.
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .exceptions import BaseMismatch, DomainError, GridMismatch
from .geometry import (
    Distribution,
    ExpMode,
    GridConfig,
    check_grids,
    exp_quantiles,
    monotone_quantiles,
)


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


def quadrature_weight(grid: GridConfig) -> float:
    return grid.time_length / (grid.t_points * grid.m_levels)


@dataclass(frozen=True, eq=False)
class DistributionCurve:
    """
    A time-indexed family of distributions, one quantile vector per row.
    """

    q: np.ndarray
    grid: GridConfig

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        shape = (self.grid.t_points, self.grid.m_levels)
        if q.shape != shape:
            raise GridMismatch(f"expected quantile surface of shape {shape}, got {q.shape}")
        object.__setattr__(self, "q", _frozen(monotone_quantiles(q, self.grid)))

    @classmethod
    def from_frames(cls, frames: Sequence[Distribution]) -> "DistributionCurve":
        if not frames:
            raise DomainError("a curve needs at least one frame")
        grid = frames[0].grid
        for frame in frames:
            check_grids(grid, frame.grid)
        return cls(q=np.stack([frame.q for frame in frames]), grid=grid)

    @property
    def frames(self) -> List[Distribution]:
        return [Distribution(q=row, grid=self.grid) for row in self.q]

    def frame(self, index: int) -> Distribution:
        return Distribution(q=self.q[index], grid=self.grid)

    def same_as(self, other: "DistributionCurve") -> bool:
        return self is other or (self.grid == other.grid and np.array_equal(self.q, other.q))


@dataclass(frozen=True, eq=False)
class TangentField:
    """
    An element Z of T(mu) in quantile coordinates, tied to its base curve.
    """

    z: np.ndarray
    base: DistributionCurve

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        grid = self.base.grid
        shape = (grid.t_points, grid.m_levels)
        if z.shape != shape:
            raise GridMismatch(f"expected field of shape {shape}, got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise DomainError("tangent field has non-finite entries")
        object.__setattr__(self, "z", _frozen(z))

    @property
    def grid(self) -> GridConfig:
        return self.base.grid

    def _check_base(self, other: "TangentField") -> None:
        if not self.base.same_as(other.base):
            raise BaseMismatch("tangent fields are attached to different curves")

    def __add__(self, other: "TangentField") -> "TangentField":
        self._check_base(other)
        return TangentField(z=self.z + other.z, base=self.base)

    def __sub__(self, other: "TangentField") -> "TangentField":
        self._check_base(other)
        return TangentField(z=self.z - other.z, base=self.base)

    def __mul__(self, scale: float) -> "TangentField":
        return TangentField(z=float(scale) * self.z, base=self.base)

    __rmul__ = __mul__

    def __neg__(self) -> "TangentField":
        return TangentField(z=-self.z, base=self.base)

    def norm(self) -> float:
        return float(np.sqrt(max(field_inner(self, self), 0.0)))

    def to_rows(self) -> List[List[float]]:
        return [[float(v) for v in row] for row in self.z]


def zero_field(base: DistributionCurve) -> TangentField:
    return TangentField(z=np.zeros((base.grid.t_points, base.grid.m_levels)), base=base)


def field_inner(z1: TangentField, z2: TangentField) -> float:
    """
    <<Z1, Z2>>_mu = |T| / (t_points * m_levels) * sum_{t,j} z1[t][j] z2[t][j].
    """
    z1._check_base(z2)
    return quadrature_weight(z1.grid) * float(np.sum(z1.z * z2.z))


def transport_field(z: TangentField, to: DistributionCurve) -> TangentField:
    """
    Pointwise parallel transport (P U)(t) = P_{mu(t)}^{nu(t)} U(t).

    Entries are unchanged in quantile coordinates. The identity with the
    geometric transport assumes atomless frames on both curves.
    """
    check_grids(z.grid, to.grid)
    return TangentField(z=z.z, base=to)


def exp_field(z: TangentField, mode: ExpMode = ExpMode.strict) -> DistributionCurve:
    """
    Frame-wise Exp: (Exp_mu Z)(t) = Exp_{mu(t)} Z(t).
    """
    return DistributionCurve(q=exp_quantiles(z.base.q + z.z, z.grid, mode), grid=z.grid)


def rank_one_operator_apply(
    left: TangentField, right: TangentField, arg: TangentField
) -> TangentField:
    """
    (left (x) right)(arg) = <<right, arg>> left.
    """
    return TangentField(z=field_inner(right, arg) * left.z, base=left.base)


class FieldOperator:
    """
    A finite-rank operator sum_k c_k left_k (x) right_k held in factored form.

    It maps T(right_base) into T(left_base); nothing of size (t*m) x (t*m)
    is formed unless `dense` is called explicitly.
    """

    def __init__(
        self,
        *,
        left: np.ndarray,
        right: np.ndarray,
        coefficients: Union[Sequence[float], np.ndarray],
        left_base: DistributionCurve,
        right_base: DistributionCurve,
    ):
        check_grids(left_base.grid, right_base.grid)
        grid = left_base.grid
        shape = (grid.t_points, grid.m_levels)
        self.left = _frozen(np.asarray(left, dtype=float).reshape((-1,) + shape))
        self.right = _frozen(np.asarray(right, dtype=float).reshape((-1,) + shape))
        self.coefficients = _frozen(np.asarray(coefficients, dtype=float).ravel())
        if not len(self.left) == len(self.right) == len(self.coefficients):
            raise DomainError("operator factors and coefficients differ in length")
        self.left_base = left_base
        self.right_base = right_base

    @classmethod
    def from_fields(
        cls,
        pairs: Sequence[Sequence[TangentField]],
        coefficients: Optional[Sequence[float]] = None,
    ) -> "FieldOperator":
        if not pairs:
            raise DomainError("an operator needs at least one rank-one term")
        left_base, right_base = pairs[0][0].base, pairs[0][1].base
        for left, right in pairs:
            if not (left.base.same_as(left_base) and right.base.same_as(right_base)):
                raise BaseMismatch("rank-one terms attached to different curves")
        if coefficients is None:
            coefficients = np.ones(len(pairs))
        return cls(
            left=np.stack([left.z for left, _ in pairs]),
            right=np.stack([right.z for _, right in pairs]),
            coefficients=coefficients,
            left_base=left_base,
            right_base=right_base,
        )

    @property
    def grid(self) -> GridConfig:
        return self.left_base.grid

    @property
    def rank(self) -> int:
        return len(self.coefficients)

    def apply(self, arg: TangentField) -> TangentField:
        if not arg.base.same_as(self.right_base):
            raise BaseMismatch("argument is not attached to the operator's domain curve")
        weight = quadrature_weight(self.grid)
        projections = weight * np.tensordot(self.right, arg.z, axes=([1, 2], [0, 1]))
        image = np.tensordot(self.coefficients * projections, self.left, axes=(0, 0))
        return TangentField(z=image, base=self.left_base)

    def transport(self, left_to: DistributionCurve, right_to: DistributionCurve) -> "FieldOperator":
        """
        Operator transport P A P^{-1}: both factors of every term are transported.
        """
        check_grids(self.grid, left_to.grid)
        check_grids(self.grid, right_to.grid)
        return FieldOperator(
            left=self.left,
            right=self.right,
            coefficients=self.coefficients,
            left_base=left_to,
            right_base=right_to,
        )

    def __sub__(self, other: "FieldOperator") -> "FieldOperator":
        if not (
            self.left_base.same_as(other.left_base) and self.right_base.same_as(other.right_base)
        ):
            raise BaseMismatch("operators act between different curves")
        return FieldOperator(
            left=np.concatenate([self.left, other.left]),
            right=np.concatenate([self.right, other.right]),
            coefficients=np.concatenate([self.coefficients, -other.coefficients]),
            left_base=self.left_base,
            right_base=self.right_base,
        )

    def _scaled_factors(self):
        root = np.sqrt(quadrature_weight(self.grid))
        return (
            root * self.left.reshape(self.rank, -1),
            root * self.right.reshape(self.rank, -1),
        )

    def hilbert_schmidt_norm(self) -> float:
        left, right = self._scaled_factors()
        gram = (left @ left.T) * (right @ right.T)
        value = float(self.coefficients @ gram @ self.coefficients)
        return float(np.sqrt(max(value, 0.0)))

    def operator_norm(self) -> float:
        """
        Largest singular value, from QR factors of the term fields.
        """
        left, right = self._scaled_factors()
        _, r_left = np.linalg.qr(left.T)
        _, r_right = np.linalg.qr(right.T)
        core = r_left @ np.diag(self.coefficients) @ r_right.T
        return float(np.linalg.svd(core, compute_uv=False)[0])

    def dense(self) -> np.ndarray:
        """
        The (t*m) x (t*m) matrix acting on flattened field coordinates.
        """
        weight = quadrature_weight(self.grid)
        left = self.left.reshape(self.rank, -1)
        right = self.right.reshape(self.rank, -1)
        return weight * (left.T * self.coefficients) @ right


def field_to_dict(z: TangentField) -> Dict[str, Any]:
    return {
        "t_points": z.grid.t_points,
        "m_levels": z.grid.m_levels,
        "values": z.to_rows(),
    }


__all__ = [
    "DistributionCurve",
    "TangentField",
    "FieldOperator",
    "quadrature_weight",
    "zero_field",
    "field_inner",
    "transport_field",
    "exp_field",
    "rank_one_operator_apply",
    "field_to_dict",
]
