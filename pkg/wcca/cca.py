"""
Intrinsic Wasserstein canonical correlation: FPCA-truncated and
Tikhonov-regularized estimators, cross-validated tuning and a permutation null.

Both estimators reduce to the singular value decomposition of a whitened
score cross-covariance W = D_X gamma D_Y, where gamma holds the cross
covariance of the eigen-scores and D_X, D_Y are diagonal whitening factors:
lambda^{-1/2} on the leading k eigencomponents for FPCA and
(lambda + eps)^{-1/2} on every nonzero component for Tikhonov.
"""
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from sklearn.model_selection import KFold

from .config import DEFAULT_EPS_CANDIDATES, DEFAULT_K_CANDIDATES, thread_count
from .exceptions import (
    CandidateSkippedWarning,
    CorrelationClipWarning,
    DomainError,
    FoldError,
    RankError,
    SampleMismatch,
    SingularTruncation,
    TruncationWarning,
    WccaException,
)
from .estimation import (
    Decomposition,
    EigenSystem,
    LogFieldMatrix,
    Sample,
    ScoreMatrix,
    covariance_eigen,
    decompose,
    frechet_mean_curve,
    log_fields,
)
from .fields import TangentField, quadrature_weight, transport_field
from .geometry import check_grids

# Correlations above 1 by more than this are reported as clipped.
CLIP_TOLERANCE = 1e-12

# CV scores closer than this count as a tie.
TIE_TOLERANCE = 1e-12

Tuning = Union[int, float]


class Method(Enum):
    fpca = "fpca"
    tikhonov = "tikhonov"


@dataclass(frozen=True, eq=False)
class CanonicalPair:
    rho: float
    u_field: TangentField
    v_field: TangentField


@dataclass(frozen=True, eq=False)
class CcaEstimate:
    """
    Leading canonical correlation and weight fields, plus any further pairs
    that were requested.

    `tuning` is (k_X, k_Y) for the FPCA estimator and (eps_X, eps_Y) for
    the Tikhonov estimator.
    """

    rho: float
    u_field: TangentField
    v_field: TangentField
    method: Method
    tuning: Tuple[Tuning, Tuning]
    higher: List[CanonicalPair] = field(default_factory=list)
    clipped: bool = False

    @property
    def pairs(self) -> List[CanonicalPair]:
        return [CanonicalPair(self.rho, self.u_field, self.v_field)] + list(self.higher)

    @property
    def correlations(self) -> List[float]:
        return [pair.rho for pair in self.pairs]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rho": self.rho,
            "method": self.method.value,
            "tuning": list(self.tuning),
            "correlations": self.correlations,
            "clipped": self.clipped,
        }


def _check_pairing(first: Union[ScoreMatrix, LogFieldMatrix], second) -> None:
    if first.n != second.n:
        raise SampleMismatch(f"X holds {first.n} subjects but Y holds {second.n}")


def _whitened_cca(
    eigen_x: EigenSystem,
    scores_x: np.ndarray,
    scale_x: np.ndarray,
    eigen_y: EigenSystem,
    scores_y: np.ndarray,
    scale_y: np.ndarray,
    *,
    r: int,
    method: Method,
    tuning: Tuple[Tuning, Tuning],
) -> CcaEstimate:
    if r < 1:
        raise DomainError(f"r must be positive, got {r}")
    n = scores_x.shape[0]
    gamma = scores_x.T @ scores_y / n
    whitened = scale_x[:, np.newaxis] * gamma * scale_y[np.newaxis, :]
    left, values, right_t = scipy.linalg.svd(whitened, full_matrices=False)

    available = len(values)
    if r > available:
        warnings.warn(
            f"only {available} canonical pairs available, {r} requested",
            TruncationWarning,
            stacklevel=3,
        )
        r = available

    fields_x = eigen_x.eigenfields[: len(scale_x)]
    fields_y = eigen_y.eigenfields[: len(scale_y)]
    pairs = []
    clipped = False
    for index in range(r):
        a = scale_x * left[:, index]
        # C_{YX} U in eigen coordinates of Y, then V = C_Y^{-1} C_{YX} U / ||C_Y^{-1/2} C_{YX} U||
        cross = gamma.T @ a
        norm = float(np.linalg.norm(scale_y * cross))
        if norm > np.finfo(float).tiny:
            b = scale_y ** 2 * cross / norm
        else:
            b = scale_y * right_t[index]
        u = np.tensordot(a, fields_x, axes=(0, 0))
        v = np.tensordot(b, fields_y, axes=(0, 0))

        pivot = a[0]
        if abs(pivot) <= 1e-12 * max(float(np.max(np.abs(a))), np.finfo(float).tiny):
            pivot = u.flat[int(np.argmax(np.abs(u)))]
        if pivot < 0:
            u, v = -u, -v

        rho = float(values[index])
        if rho > 1.0 + CLIP_TOLERANCE:
            warnings.warn(
                f"canonical correlation {rho!r} exceeds 1 and was clipped",
                CorrelationClipWarning,
                stacklevel=3,
            )
            clipped = True
        rho = min(rho, 1.0)
        pairs.append(
            CanonicalPair(
                rho=rho,
                u_field=TangentField(z=u, base=eigen_x.base),
                v_field=TangentField(z=v, base=eigen_y.base),
            )
        )

    first = pairs[0]
    return CcaEstimate(
        rho=first.rho,
        u_field=first.u_field,
        v_field=first.v_field,
        method=method,
        tuning=tuning,
        higher=pairs[1:],
        clipped=clipped,
    )


def fpca_cca(
    eigen_x: EigenSystem,
    scores_x: ScoreMatrix,
    eigen_y: EigenSystem,
    scores_y: ScoreMatrix,
    *,
    k_x: int,
    k_y: int,
    r: int = 1,
) -> CcaEstimate:
    """
    FPCA estimator: covariance inverses truncated at k_X and k_Y components.

    :param eigen_x: covariance eigensystem of X.
    :param scores_x: scores of X against `eigen_x`.
    :param eigen_y: covariance eigensystem of Y.
    :param scores_y: scores of Y against `eigen_y`.
    :param k_x: truncation level for X.
    :param k_y: truncation level for Y.
    :param r: number of canonical pairs to return.
    """
    _check_pairing(scores_x, scores_y)
    for name, k, eigen in (("k_X", k_x, eigen_x), ("k_Y", k_y, eigen_y)):
        if k < 1 or k > eigen.k:
            raise RankError(f"{name}={k} outside the available rank 1..{eigen.k}")
    lambda_x = eigen_x.eigenvalues[:k_x]
    lambda_y = eigen_y.eigenvalues[:k_y]
    if np.any(lambda_x <= 0) or np.any(lambda_y <= 0):
        raise SingularTruncation("zero eigenvalue inside the truncation range")
    return _whitened_cca(
        eigen_x,
        scores_x.s[:, :k_x],
        lambda_x ** -0.5,
        eigen_y,
        scores_y.s[:, :k_y],
        lambda_y ** -0.5,
        r=r,
        method=Method.fpca,
        tuning=(int(k_x), int(k_y)),
    )


def tikhonov_cca(
    logs_x: LogFieldMatrix,
    logs_y: LogFieldMatrix,
    eps_x: float,
    eps_y: float,
    r: int = 1,
) -> CcaEstimate:
    """
    Tikhonov estimator with (C_X + eps_X id)^{-1} and (C_Y + eps_Y id)^{-1}.

    Solved from the n x n Gram matrices: the regularized inverse acts as
    1/(lambda + eps) on the span of the log-fields, which holds every weight
    field the estimator can produce.
    """
    if not (eps_x > 0 and eps_y > 0):
        raise DomainError(f"eps must be positive, got ({eps_x}, {eps_y})")
    _check_pairing(logs_x, logs_y)
    eigen_x, scores_x = covariance_eigen(logs_x, logs_x.n)
    eigen_y, scores_y = covariance_eigen(logs_y, logs_y.n)
    return _tikhonov_from_eigen(eigen_x, scores_x, eigen_y, scores_y, eps_x, eps_y, r)


def _tikhonov_from_eigen(
    eigen_x: EigenSystem,
    scores_x: ScoreMatrix,
    eigen_y: EigenSystem,
    scores_y: ScoreMatrix,
    eps_x: float,
    eps_y: float,
    r: int,
) -> CcaEstimate:
    if eigen_x.k == 0 or eigen_y.k == 0:
        raise RankError("a sample has no variation around its mean")
    return _whitened_cca(
        eigen_x,
        scores_x.s,
        (eigen_x.eigenvalues + eps_x) ** -0.5,
        eigen_y,
        scores_y.s,
        (eigen_y.eigenvalues + eps_y) ** -0.5,
        r=r,
        method=Method.tikhonov,
        tuning=(float(eps_x), float(eps_y)),
    )


def _estimate(
    side_x: Decomposition, side_y: Decomposition, method: Method, value: Tuning, r: int = 1
) -> CcaEstimate:
    if method is Method.fpca:
        return fpca_cca(
            side_x.eigen, side_x.scores, side_y.eigen, side_y.scores, k_x=int(value), k_y=int(value), r=r
        )
    return _tikhonov_from_eigen(
        side_x.eigen, side_x.scores, side_y.eigen, side_y.scores, float(value), float(value), r
    )


def _component_limit(method: Method, candidates: Sequence[Tuning], n: int) -> int:
    if method is Method.fpca:
        return min(max(int(k) for k in candidates), n)
    return n


def fit(
    sample_x: Sample,
    sample_y: Sample,
    method: Method,
    tuning: Union[Tuning, Tuple[Tuning, Tuning]],
    r: int = 1,
) -> CcaEstimate:
    """
    Run either estimator from raw samples.

    :param tuning: k (FPCA) or eps (Tikhonov), shared by X and Y, or an
        explicit (X, Y) pair.
    """
    if sample_x.n != sample_y.n:
        raise SampleMismatch(f"X holds {sample_x.n} subjects but Y holds {sample_y.n}")
    tuning_x, tuning_y = tuning if isinstance(tuning, tuple) else (tuning, tuning)
    if method is Method.fpca:
        side_x = decompose(sample_x, int(tuning_x))
        side_y = decompose(sample_y, int(tuning_y))
        return fpca_cca(
            side_x.eigen,
            side_x.scores,
            side_y.eigen,
            side_y.scores,
            k_x=int(tuning_x),
            k_y=int(tuning_y),
            r=r,
        )
    mean_x, mean_y = frechet_mean_curve(sample_x), frechet_mean_curve(sample_y)
    return tikhonov_cca(
        log_fields(sample_x, mean_x), log_fields(sample_y, mean_y), float(tuning_x), float(tuning_y), r
    )


def default_candidates(method: Method) -> List[Tuning]:
    if method is Method.fpca:
        return list(DEFAULT_K_CANDIDATES)
    return list(DEFAULT_EPS_CANDIDATES)


def _preference_order(method: Method, candidates: Sequence[Tuning]) -> List[int]:
    """
    Candidate indices from most to least preferred under a tie: smaller k
    first for FPCA, larger eps first for Tikhonov.
    """
    if method is Method.fpca:
        return sorted(range(len(candidates)), key=lambda i: (candidates[i], i))
    return sorted(range(len(candidates)), key=lambda i: (-candidates[i], i))


def squared_pearson(x: np.ndarray, y: np.ndarray) -> float:
    """
    Squared Pearson correlation in the single-sum form used for CV scores;
    zero when either projection has no spread.
    """
    n = len(x)
    sx, sy = float(np.sum(x)), float(np.sum(y))
    numerator = n * float(np.dot(x, y)) - sx * sy
    spread_x = n * float(np.dot(x, x)) - sx ** 2
    spread_y = n * float(np.dot(y, y)) - sy ** 2
    if spread_x <= 0 or spread_y <= 0:
        return 0.0
    return float(min(numerator ** 2 / (spread_x * spread_y), 1.0))


@dataclass
class _FoldResult:
    projections: Dict[int, Tuple[np.ndarray, np.ndarray, np.ndarray]]
    skipped: Dict[int, str]


def _run_fold(
    train: np.ndarray,
    test: np.ndarray,
    sample_x: Sample,
    sample_y: Sample,
    full_x: LogFieldMatrix,
    full_y: LogFieldMatrix,
    method: Method,
    candidates: Sequence[Tuning],
) -> _FoldResult:
    limit = _component_limit(method, candidates, len(train))
    side_x = decompose(sample_x.subset(train), limit)
    side_y = decompose(sample_y.subset(train), limit)
    weight = quadrature_weight(full_x.grid)
    projections = {}
    skipped = {}
    for index, value in enumerate(candidates):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", CorrelationClipWarning)
                estimate = _estimate(side_x, side_y, method, value)
        except WccaException as error:
            skipped[index] = str(error)
            continue
        u = transport_field(estimate.u_field, full_x.base)
        v = transport_field(estimate.v_field, full_y.base)
        x = weight * full_x.flat[test] @ u.z.ravel()
        y = weight * full_y.flat[test] @ v.z.ravel()
        projections[index] = (x, y, u.z)
    return _FoldResult(projections=projections, skipped=skipped)


def cv_scores(
    sample_x: Sample,
    sample_y: Sample,
    method: Method,
    candidates: Sequence[Tuning],
    folds: int = 5,
    seed: int = 0,
) -> List[float]:
    """
    Pooled squared-Pearson CV score of every candidate.

    Held-out subjects are projected at the full-sample Frechet means onto
    weight fields fitted without them. Candidates that cannot be fitted on
    some fold score NaN.
    """
    if not candidates:
        raise DomainError("candidate list is empty")
    if folds < 2:
        raise DomainError(f"folds must be at least 2, got {folds}")
    if sample_x.n != sample_y.n:
        raise SampleMismatch(f"X holds {sample_x.n} subjects but Y holds {sample_y.n}")
    check_grids(sample_x.grid, sample_y.grid)
    n = sample_x.n
    if n < 2 * folds:
        raise FoldError(f"{n} subjects cannot fill {folds} folds with at least 2 each")

    full_x = log_fields(sample_x, frechet_mean_curve(sample_x))
    full_y = log_fields(sample_y, frechet_mean_curve(sample_y))
    splits = list(KFold(n_splits=folds, shuffle=True, random_state=seed).split(np.arange(n)))

    def work(split):
        train, test = split
        return _run_fold(train, test, sample_x, sample_y, full_x, full_y, method, candidates)

    threads = min(thread_count(), folds)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, splits))
    else:
        results = [work(split) for split in splits]

    scores = []
    for index, value in enumerate(candidates):
        reasons = [result.skipped[index] for result in results if index in result.skipped]
        if reasons:
            warnings.warn(
                f"candidate {value!r} skipped: {reasons[0]}", CandidateSkippedWarning, stacklevel=2
            )
            scores.append(float("nan"))
            continue
        xs, ys = np.empty(n), np.empty(n)
        reference = None
        for (_, test), result in zip(splits, results):
            x, y, u = result.projections[index]
            # weight fields are defined up to a joint sign; align every fold with the first
            if reference is None:
                reference = u
            elif float(np.sum(u * reference)) < 0:
                x, y = -x, -y
            xs[test], ys[test] = x, y
        scores.append(squared_pearson(xs, ys))
    return scores


def cv_select(
    sample_x: Sample,
    sample_y: Sample,
    method: Method,
    candidates: Optional[Sequence[Tuning]] = None,
    folds: int = 5,
    seed: int = 0,
) -> Tuple[Tuning, List[float]]:
    """
    Choose the tuning value with the largest CV score.

    :param candidates: k values (FPCA) or eps values (Tikhonov) applied to
        both X and Y; defaults to k = 1..10 or eps = 1e-10..1e-2.
    :returns: the chosen value and the score of every candidate, in order.
    """
    if candidates is None:
        candidates = default_candidates(method)
    candidates = list(candidates)
    scores = cv_scores(sample_x, sample_y, method, candidates, folds=folds, seed=seed)
    best = None
    for index in _preference_order(method, candidates):
        if np.isnan(scores[index]):
            continue
        if best is None or scores[index] > scores[best] + TIE_TOLERANCE:
            best = index
    if best is None:
        raise RankError("no tuning candidate could be fitted on every fold")
    return candidates[best], scores


def permutation_null(
    sample_x: Sample,
    sample_y: Sample,
    method: Method,
    tuning: Tuning,
    permutations: int = 99,
    seed: int = 0,
) -> np.ndarray:
    """
    Leading correlation after randomly re-pairing the Y subjects.

    Permuting subjects leaves both eigensystems unchanged and only permutes
    score rows, so each draw costs one small SVD.
    """
    if permutations < 1:
        raise DomainError(f"permutations must be positive, got {permutations}")
    if sample_x.n != sample_y.n:
        raise SampleMismatch(f"X holds {sample_x.n} subjects but Y holds {sample_y.n}")
    limit = _component_limit(method, [tuning], sample_x.n)
    side_x = decompose(sample_x, limit)
    side_y = decompose(sample_y, limit)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    null = np.empty(permutations)
    for draw in range(permutations):
        order = rng.permutation(sample_y.n)
        shuffled = Decomposition(
            mean=side_y.mean,
            logs=side_y.logs.subset(order),
            eigen=side_y.eigen,
            scores=ScoreMatrix(s=side_y.scores.s[order]),
        )
        null[draw] = _estimate(side_x, shuffled, method, tuning).rho
    return null


__all__ = [
    "Method",
    "CanonicalPair",
    "CcaEstimate",
    "fpca_cca",
    "tikhonov_cca",
    "fit",
    "default_candidates",
    "squared_pearson",
    "cv_scores",
    "cv_select",
    "permutation_null",
]
