"""
Sample Frechet means, log-fields, covariance operators and their eigensystems.

Covariance operators are never formed densely: every eigen-problem is solved
on the n x n Gram matrix of the log-fields and lifted back to T(mu).
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .config import thread_count
from .exceptions import DomainError, GridMismatch, RankError, SampleMismatch
from .fields import DistributionCurve, FieldOperator, TangentField, quadrature_weight
from .geometry import GridConfig, check_grids, monotone_quantiles

# Eigenvalues below this fraction of the largest one are treated as zero.
RANK_TOLERANCE = 1e-10


def _frozen(values) -> np.ndarray:
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Sample:
    """
    n distribution-valued curves on a shared grid, stored as an
    (n x t_points x m_levels) array of quantiles.
    """

    q: np.ndarray
    grid: GridConfig

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        grid = self.grid
        if q.ndim != 3 or q.shape[1:] != (grid.t_points, grid.m_levels):
            raise GridMismatch(
                f"expected shape (n, {grid.t_points}, {grid.m_levels}), got {q.shape}"
            )
        if q.shape[0] < 1:
            raise DomainError("a sample needs at least one curve")
        object.__setattr__(self, "q", _frozen(monotone_quantiles(q, grid)))

    @classmethod
    def from_curves(cls, curves: Sequence[DistributionCurve]) -> "Sample":
        if not curves:
            raise DomainError("a sample needs at least one curve")
        grid = curves[0].grid
        for curve in curves:
            check_grids(grid, curve.grid)
        return cls(q=np.stack([curve.q for curve in curves]), grid=grid)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def curves(self) -> List[DistributionCurve]:
        return [DistributionCurve(q=surface, grid=self.grid) for surface in self.q]

    def subset(self, indices: Sequence[int]) -> "Sample":
        return Sample(q=self.q[np.asarray(indices, dtype=int)], grid=self.grid)


@dataclass(frozen=True, eq=False)
class LogFieldMatrix:
    """
    Log_{mu}(X_i) for every subject, as an (n x t_points x m_levels) array.
    """

    rows: np.ndarray
    base: DistributionCurve

    def __post_init__(self):
        object.__setattr__(self, "rows", _frozen(self.rows))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def grid(self) -> GridConfig:
        return self.base.grid

    @property
    def flat(self) -> np.ndarray:
        return self.rows.reshape(self.n, -1)

    def row(self, index: int) -> TangentField:
        return TangentField(z=self.rows[index], base=self.base)

    def fields(self) -> List[TangentField]:
        return [self.row(i) for i in range(self.n)]

    def subset(self, indices: Sequence[int]) -> "LogFieldMatrix":
        return LogFieldMatrix(rows=self.rows[np.asarray(indices, dtype=int)], base=self.base)

    def gram(self) -> np.ndarray:
        """
        K[i][i'] = <<row_i, row_i'>>.
        """
        return gram_matrix(self.flat, quadrature_weight(self.grid))


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """
    Leading eigenpairs of a sample covariance operator, eigenvalues descending.
    """

    eigenvalues: np.ndarray
    eigenfields: np.ndarray
    base: DistributionCurve

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        object.__setattr__(self, "eigenfields", _frozen(self.eigenfields))

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def field(self, index: int) -> TangentField:
        return TangentField(z=self.eigenfields[index], base=self.base)

    def fields(self) -> List[TangentField]:
        return [self.field(i) for i in range(self.k)]

    def as_operator(self) -> FieldOperator:
        return FieldOperator(
            left=self.eigenfields,
            right=self.eigenfields,
            coefficients=self.eigenvalues,
            left_base=self.base,
            right_base=self.base,
        )


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """
    s[i][k] = <<Log X_i, Phi_k>>.
    """

    s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "s", _frozen(np.atleast_2d(self.s)))

    @property
    def n(self) -> int:
        return self.s.shape[0]

    @property
    def k(self) -> int:
        return self.s.shape[1]


def gram_matrix(flat: np.ndarray, weight: float) -> np.ndarray:
    """
    weight * flat @ flat.T, computed in row blocks across WCCA_THREADS workers.

    Each block is an independent product, so the result does not depend on
    the order in which workers finish.
    """
    n = flat.shape[0]
    threads = min(thread_count(), n)
    if threads <= 1:
        gram = flat @ flat.T
    else:
        blocks = np.array_split(np.arange(n), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda rows: flat[rows] @ flat.T, blocks))
        gram = np.concatenate(parts, axis=0)
    gram = weight * gram
    return 0.5 * (gram + gram.T)


def frechet_mean_curve(sample: Sample) -> DistributionCurve:
    """
    F_{mu(t)}^{-1} = (1/n) sum_i F_{X_i(t)}^{-1}, frame by frame.
    """
    return DistributionCurve(q=sample.q.mean(axis=0), grid=sample.grid)


def log_fields(sample: Sample, mean: DistributionCurve) -> LogFieldMatrix:
    check_grids(sample.grid, mean.grid)
    return LogFieldMatrix(rows=sample.q - mean.q[np.newaxis], base=mean)


def covariance_operator(logs: LogFieldMatrix) -> FieldOperator:
    """
    C = (1/n) sum_i (Log X_i) (x) (Log X_i), in factored form.
    """
    return FieldOperator(
        left=logs.rows,
        right=logs.rows,
        coefficients=np.full(logs.n, 1.0 / logs.n),
        left_base=logs.base,
        right_base=logs.base,
    )


def _fix_sign(fields: np.ndarray) -> np.ndarray:
    if len(fields) == 0:
        return fields
    flat = fields.reshape(len(fields), -1)
    pivots = flat[np.arange(len(flat)), np.argmax(np.abs(flat), axis=1)]
    signs = np.where(pivots < 0, -1.0, 1.0)
    return fields * signs[:, np.newaxis, np.newaxis]


def covariance_eigen(
    logs: LogFieldMatrix, max_components: int
) -> Tuple[EigenSystem, ScoreMatrix]:
    """
    Eigenpairs of C through the Gram matrix G = K / n.

    Components whose eigenvalue is numerically zero are not returned, so the
    system may hold fewer than `max_components` pairs.

    :param logs: log-fields of the sample around the base curve.
    :param max_components: maximum number of eigenpairs, at most n.
    """
    n = logs.n
    if max_components < 1 or max_components > n:
        raise RankError(f"max_components must lie in [1, {n}], got {max_components}")
    gram = logs.gram() / n
    values, vectors = scipy.linalg.eigh(gram)
    order = np.argsort(-values, kind="stable")
    values = np.clip(values[order], 0.0, None)
    vectors = vectors[:, order]
    keep = int(np.sum(values > RANK_TOLERANCE * max(values[0], np.finfo(float).tiny)))
    keep = min(keep, max_components)
    values = values[:keep]
    vectors = vectors[:, :keep]
    # ||sum_i a_i row_i||^2 = a' K a = n * lambda
    lifted = np.tensordot(vectors, logs.rows, axes=(0, 0)) / np.sqrt(n * values)[
        :, np.newaxis, np.newaxis
    ]
    eigenfields = _fix_sign(lifted)
    eigen = EigenSystem(eigenvalues=values, eigenfields=eigenfields, base=logs.base)
    weight = quadrature_weight(logs.grid)
    scores = weight * logs.flat @ eigenfields.reshape(keep, logs.flat.shape[1]).T
    return eigen, ScoreMatrix(s=scores)


@dataclass(frozen=True, eq=False)
class Decomposition:
    """
    Everything the estimators need from one sample: its Frechet mean curve,
    log-fields around it, and the leading covariance eigensystem with scores.
    """

    mean: DistributionCurve
    logs: LogFieldMatrix
    eigen: EigenSystem
    scores: ScoreMatrix


def decompose(sample: Sample, max_components: Optional[int] = None) -> Decomposition:
    mean = frechet_mean_curve(sample)
    logs = log_fields(sample, mean)
    limit = sample.n if max_components is None else min(max_components, sample.n)
    eigen, scores = covariance_eigen(logs, limit)
    return Decomposition(mean=mean, logs=logs, eigen=eigen, scores=scores)


def cross_covariance_scores(scores_x: ScoreMatrix, scores_y: ScoreMatrix) -> np.ndarray:
    """
    gamma[j][k] = (1/n) sum_i s_x[i][j] s_y[i][k].
    """
    if scores_x.n != scores_y.n:
        raise SampleMismatch(f"score matrices hold {scores_x.n} and {scores_y.n} subjects")
    return scores_x.s.T @ scores_y.s / scores_x.n


def alignment_diagnostic(
    gamma: np.ndarray,
    lambda_x: Sequence[float],
    lambda_y: Sequence[float],
    k_x: int,
    k_y: int,
) -> Tuple[float, float]:
    """
    Truncated sums of gamma^2/(lambda_X^2 lambda_Y) and gamma^2/(lambda_X lambda_Y^2).

    Advisory only: a sum that keeps growing with k suggests the
    cross-covariance is poorly aligned with the leading eigenfields.
    """
    block = np.asarray(gamma, dtype=float)[:k_x, :k_y] ** 2
    lx = np.asarray(lambda_x, dtype=float)[:k_x, np.newaxis]
    ly = np.asarray(lambda_y, dtype=float)[np.newaxis, :k_y]
    with np.errstate(divide="ignore", invalid="ignore"):
        first = np.where(block > 0, block / (lx ** 2 * ly), 0.0)
        second = np.where(block > 0, block / (lx * ly ** 2), 0.0)
    return float(np.sum(first)), float(np.sum(second))


__all__ = [
    "Sample",
    "LogFieldMatrix",
    "EigenSystem",
    "ScoreMatrix",
    "gram_matrix",
    "frechet_mean_curve",
    "log_fields",
    "covariance_operator",
    "covariance_eigen",
    "Decomposition",
    "decompose",
    "cross_covariance_scores",
    "alignment_diagnostic",
]
