"""
Synthetic distribution-valued curves with a known canonical structure, and
the Monte Carlo machinery that measures estimator error against it.

Mean curves are time-varying Beta laws on [0, 1]:
mu_X(t) = Beta(2 + t, 3 - (t^2 + t)/2) and mu_Y(t) = Beta(3 - t, 2 + (t^2 + t)/2).
Subjects are Exp_mu(sum_k xi_k Phi_k) with Phi_k = sqrt(2) sin(pi k u) in
quantile coordinates and bounded scores, so the map stays monotone.
"""
import functools
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from dataclasses import fields as dataclass_fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from typing_extensions import Protocol

from .cca import CcaEstimate, Method, Tuning, cv_select, fit
from .config import thread_count
from .estimation import Sample, frechet_mean_curve
from .exceptions import DomainError
from .fields import (
    DistributionCurve,
    FieldOperator,
    TangentField,
    transport_field,
)
from .geometry import ExpMode, GridConfig, exp_quantiles, from_density_grid

SCORE_DECAY = 2.0  # v_k = 2^-k
DENSITY_BOUND = 1.78  # exceeds the largest density of every mean frame
DENSITY_POINTS = 8193


class NoiseScale(Enum):
    """
    Scale c of the coupling noise in eta_2 = 0.5 (xi_1 + xi_2) + sigma c theta,
    with s = E(xi_1^2 + xi_2^2).
    """

    literal = "literal"  # c = s
    root = "root"  # c = sqrt(s)
    standardized = "standardized"  # c = sqrt(s) / sd(theta)


class ProgressCallback(Protocol):
    def __call__(self, *, total: int, completed: int) -> None:
        pass


@dataclass(frozen=True)
class SimConfig:
    """
    :param n: subjects per replicate.
    :param sigma: noise level of the coupled Y score.
    :param case: 1 for truncated-normal scores, 2 for uniform scores.
    :param basis_size: number K of sine basis fields.
    :param exp_mode: how subject curves are formed from their log-fields.
    """

    n: int = 200
    sigma: float = 0.1
    case: int = 1
    basis_size: int = 20
    grid: GridConfig = field(default_factory=lambda: GridConfig(m_levels=64, t_points=50))
    seed: int = 0
    replicates: int = 50
    noise_scale: NoiseScale = NoiseScale.literal
    exp_mode: ExpMode = ExpMode.strict

    def __post_init__(self):
        if not self.sigma >= 0:
            raise DomainError(f"sigma must be nonnegative, got {self.sigma}")
        if self.case not in (1, 2):
            raise DomainError(f"case must be 1 or 2, got {self.case}")
        if self.basis_size < 2:
            raise DomainError(f"basis size K must be at least 2, got {self.basis_size}")
        if self.n < 1:
            raise DomainError(f"n must be positive, got {self.n}")
        if self.replicates < 1:
            raise DomainError(f"replicates must be positive, got {self.replicates}")
        if self.grid.support != (0.0, 1.0):
            raise DomainError("the Beta generator needs support [0, 1]")
        start, end = self.grid.time_domain
        if start < 0.0 or end > 1.0:
            raise DomainError("the Beta generator needs a time domain inside [0, 1]")
        object.__setattr__(self, "noise_scale", NoiseScale(self.noise_scale))
        object.__setattr__(self, "exp_mode", ExpMode(self.exp_mode))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "sigma": self.sigma,
            "case": self.case,
            "basis_size": self.basis_size,
            "grid": self.grid.to_dict(),
            "seed": self.seed,
            "replicates": self.replicates,
            "noise_scale": self.noise_scale.value,
            "exp_mode": self.exp_mode.value,
        }


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """
    Population canonical correlation and weight fields of the generator.

    `rho` follows from the exact second moments of the chosen noise scale;
    `rho_closed_form` is 0.5 / sqrt(0.25 + sigma^2) for reference.
    """

    rho: float
    u_field: TangentField
    v_field: TangentField
    rho_closed_form: float


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """
    Independent counter-based stream for one replicate.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate])))


def score_bounds(basis_size: int) -> np.ndarray:
    """
    v_k / (V_k M) with v_k = 2^-k, V_k = sup |phi_k'| = sqrt(2) pi k and M = 1.78.
    """
    k = np.arange(1, basis_size + 1, dtype=float)
    return SCORE_DECAY ** -k / (math.sqrt(2.0) * math.pi * k * DENSITY_BOUND)


def standard_score_variance(case: int) -> float:
    """
    Variance of the unit-bounded score law: N(0, 1) truncated to [-1, 1]
    for case 1, Unif[-1, 1] for case 2.
    """
    if case == 1:
        return float(stats.truncnorm(-1.0, 1.0).var())
    return 1.0 / 3.0


def _noise_factor(config: SimConfig) -> float:
    bounds = score_bounds(config.basis_size)
    second_moment = float(np.sum(bounds[:2] ** 2)) * standard_score_variance(config.case)
    if config.noise_scale is NoiseScale.literal:
        return second_moment
    if config.noise_scale is NoiseScale.root:
        return math.sqrt(second_moment)
    return math.sqrt(second_moment / standard_score_variance(config.case))


def score_variances(config: SimConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact variances of xi_k and eta_k.
    """
    unit = standard_score_variance(config.case)
    var_x = score_bounds(config.basis_size) ** 2 * unit
    var_y = var_x.copy()
    coupled = var_x[0] + var_x[1]
    var_y[1] = 0.25 * coupled + (config.sigma * _noise_factor(config)) ** 2 * unit
    return var_x, var_y


def _beta_quantiles(a: float, b: float, grid: GridConfig):
    x = np.linspace(grid.support[0], grid.support[1], DENSITY_POINTS)
    return from_density_grid(x, grid, values=stats.beta.pdf(x, a, b)).q


@functools.lru_cache(maxsize=8)
def _beta_surfaces(grid: GridConfig) -> Tuple[np.ndarray, np.ndarray]:
    x_rows, y_rows = [], []
    for t in grid.times:
        drift = (t * t + t) / 2.0
        x_rows.append(_beta_quantiles(2.0 + t, 3.0 - drift, grid))
        y_rows.append(_beta_quantiles(3.0 - t, 2.0 + drift, grid))
    return np.stack(x_rows), np.stack(y_rows)


def beta_mean_surfaces(grid: GridConfig) -> Tuple[DistributionCurve, DistributionCurve]:
    """
    mu_X and mu_Y on the grid, by inverting the trapezoid CDF of each Beta density.
    """
    if grid.support != (0.0, 1.0):
        raise DomainError("Beta mean curves need support [0, 1]")
    x_surface, y_surface = _beta_surfaces(grid)
    return DistributionCurve(q=x_surface, grid=grid), DistributionCurve(q=y_surface, grid=grid)


def sine_basis(grid: GridConfig, basis_size: int) -> np.ndarray:
    """
    (K x m_levels) array with rows sqrt(2) sin(pi k u_j).
    """
    k = np.arange(1, basis_size + 1, dtype=float)[:, np.newaxis]
    return math.sqrt(2.0) * np.sin(math.pi * k * grid.levels[np.newaxis, :])


def basis_fields(mean: DistributionCurve, basis_size: int) -> List[TangentField]:
    """
    Phi_k(t) = phi_k o F_{mu(t)}, which in quantile coordinates does not
    depend on t or on the shape of mu.
    """
    if basis_size < 1:
        raise DomainError(f"basis size must be positive, got {basis_size}")
    rows = sine_basis(mean.grid, basis_size)
    t_points = mean.grid.t_points
    return [TangentField(z=np.tile(row, (t_points, 1)), base=mean) for row in rows]


def true_covariance(
    mean: DistributionCurve, basis_size: int, variances: Sequence[float]
) -> FieldOperator:
    """
    C = sum_k Var(score_k) Phi_k (x) Phi_k.
    """
    fields = basis_fields(mean, basis_size)
    return FieldOperator.from_fields([(f, f) for f in fields], coefficients=variances)


def _unit_scores(case: int, size: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    if case == 1:
        return stats.truncnorm.rvs(-1.0, 1.0, size=size, random_state=rng)
    return rng.uniform(-1.0, 1.0, size=size)


def sample_scores(config: SimConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Draw (xi, eta), both n x K. Every score is its bound times a unit-bounded
    draw, except eta_2 = 0.5 (xi_1 + xi_2) + sigma c theta_2.
    """
    shape = (config.n, config.basis_size)
    bounds = score_bounds(config.basis_size)
    theta_x = _unit_scores(config.case, shape, rng)
    theta_y = _unit_scores(config.case, shape, rng)
    xi = bounds * theta_x
    eta = bounds * theta_y
    eta[:, 1] = 0.5 * (xi[:, 0] + xi[:, 1]) + config.sigma * _noise_factor(config) * theta_y[:, 1]
    return xi, eta


def _surfaces(mean: DistributionCurve, scores: np.ndarray, mode: ExpMode) -> np.ndarray:
    displacement = scores @ sine_basis(mean.grid, scores.shape[1])
    candidate = mean.q[np.newaxis, :, :] + displacement[:, np.newaxis, :]
    return exp_quantiles(candidate, mean.grid, mode)


def ground_truth(config: SimConfig) -> GroundTruth:
    mean_x, mean_y = beta_mean_surfaces(config.grid)
    var_x, var_y = score_variances(config)
    phi_x = basis_fields(mean_x, 2)
    phi_y = basis_fields(mean_y, 2)
    coupled = var_x[0] + var_x[1]
    rho = 0.5 * math.sqrt(coupled) / math.sqrt(var_y[1])
    return GroundTruth(
        rho=min(rho, 1.0),
        u_field=(phi_x[0] + phi_x[1]) * (1.0 / math.sqrt(coupled)),
        v_field=phi_y[1] * (1.0 / math.sqrt(var_y[1])),
        rho_closed_form=0.5 / math.sqrt(0.25 + config.sigma ** 2),
    )


def generate_dataset(
    config: SimConfig, rng: np.random.Generator
) -> Tuple[Sample, Sample, GroundTruth]:
    mean_x, mean_y = beta_mean_surfaces(config.grid)
    xi, eta = sample_scores(config, rng)
    sample_x = Sample(q=_surfaces(mean_x, xi, config.exp_mode), grid=config.grid)
    sample_y = Sample(q=_surfaces(mean_y, eta, config.exp_mode), grid=config.grid)
    return sample_x, sample_y, ground_truth(config)


def _direction(z: TangentField) -> TangentField:
    norm = z.norm()
    return z * (1.0 / norm) if norm > 0 else z


def _aligned_distance(estimate: TangentField, truth: TangentField) -> float:
    moved = _direction(transport_field(estimate, truth.base))
    target = _direction(truth)
    return min((moved - target).norm(), (moved + target).norm())


def error_metrics(est: CcaEstimate, truth: GroundTruth) -> Tuple[float, float, float]:
    """
    |rho_hat - rho| and the sign-aligned distances between unit weight
    directions after transport to the true mean curves.
    """
    return (
        abs(est.rho - truth.rho),
        _aligned_distance(est.u_field, truth.u_field),
        _aligned_distance(est.v_field, truth.v_field),
    )


@dataclass(frozen=True)
class TuningSpec:
    """
    Either a fixed tuning value or cross-validation over `candidates`.
    """

    value: Optional[Tuning] = None
    candidates: Optional[Tuple[Tuning, ...]] = None
    folds: int = 5

    @property
    def cross_validated(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class ReplicateRecord:
    replicate: int
    method: str
    n: int
    sigma: float
    case: int
    k_or_eps: Tuning
    abs_rho_err: float
    imse_u: float
    imse_v: float

    def to_row(self) -> Dict[str, Any]:
        return {
            "replicate": self.replicate,
            "method": self.method,
            "n": self.n,
            "sigma": self.sigma,
            "case": self.case,
            "k_or_eps": self.k_or_eps,
            "abs_rho_err": self.abs_rho_err,
            "imse_u": self.imse_u,
            "imse_v": self.imse_v,
        }


REPLICATE_COLUMNS = [column.name for column in dataclass_fields(ReplicateRecord)]


@dataclass(frozen=True)
class ReplicateReport:
    config: SimConfig
    method: Method
    records: List[ReplicateRecord]
    truth_rho: float
    rho_closed_form: float

    @property
    def mean_abs_rho_err(self) -> float:
        return float(np.mean([r.abs_rho_err for r in self.records]))

    @property
    def imse_u(self) -> float:
        return float(np.sqrt(np.mean([r.imse_u ** 2 for r in self.records])))

    @property
    def imse_v(self) -> float:
        return float(np.sqrt(np.mean([r.imse_v ** 2 for r in self.records])))

    def tuning_histogram(self) -> Dict[str, int]:
        counts = Counter(format(r.k_or_eps, "g") for r in self.records)
        return dict(sorted(counts.items(), key=lambda item: float(item[0])))

    def rows(self) -> List[Dict[str, Any]]:
        return [record.to_row() for record in self.records]

    def summary(self) -> Dict[str, Any]:
        return {
            "case": self.config.case,
            "sigma": self.config.sigma,
            "n": self.config.n,
            "method": self.method.value,
            "replicates": len(self.records),
            "noise_scale": self.config.noise_scale.value,
            "rho": self.truth_rho,
            "rho_closed_form": self.rho_closed_form,
            "abs_rho_err": self.mean_abs_rho_err,
            "imse_u": self.imse_u,
            "imse_v": self.imse_v,
            "tuning_histogram": self.tuning_histogram(),
        }


def run_replicate(
    config: SimConfig, method: Method, tuning: TuningSpec, replicate: int
) -> ReplicateRecord:
    rng = replicate_rng(config.seed, replicate)
    sample_x, sample_y, truth = generate_dataset(config, rng)
    if tuning.cross_validated:
        fold_seed = int(rng.integers(0, 2 ** 32 - 1))
        value, _ = cv_select(
            sample_x,
            sample_y,
            method,
            tuning.candidates,
            folds=tuning.folds,
            seed=fold_seed,
        )
    else:
        value = tuning.value
    estimate = fit(sample_x, sample_y, method, value)
    abs_rho_err, imse_u, imse_v = error_metrics(estimate, truth)
    return ReplicateRecord(
        replicate=replicate,
        method=method.value,
        n=config.n,
        sigma=config.sigma,
        case=config.case,
        k_or_eps=value,
        abs_rho_err=abs_rho_err,
        imse_u=imse_u,
        imse_v=imse_v,
    )


def run_replicates(
    config: SimConfig,
    method: Method,
    tuning: TuningSpec,
    *,
    callback: Optional[ProgressCallback] = None,
) -> ReplicateReport:
    """
    Run `config.replicates` independent replicates, each on its own stream.

    :param callback: called as `callback(total=..., completed=...)` after
        every replicate, in replicate order.
    """
    method = Method(method)
    total = config.replicates
    indices = range(total)

    def work(replicate: int) -> ReplicateRecord:
        return run_replicate(config, method, tuning, replicate)

    records = []
    threads = min(thread_count(), total)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for record in pool.map(work, indices):
                records.append(record)
                if callback:
                    callback(total=total, completed=len(records))
    else:
        for replicate in indices:
            records.append(work(replicate))
            if callback:
                callback(total=total, completed=len(records))

    truth = ground_truth(config)
    return ReplicateReport(
        config=config,
        method=method,
        records=records,
        truth_rho=truth.rho,
        rho_closed_form=truth.rho_closed_form,
    )


def tuning_sweep(
    config: SimConfig,
    method: Method,
    values: Sequence[Tuning],
    *,
    callback: Optional[ProgressCallback] = None,
) -> List[ReplicateReport]:
    """
    Error against a fixed grid of k or eps values, one report per value.

    Every value sees the same replicate datasets, so differences between
    rows come from the tuning alone.

    :param callback: called as `callback(total=..., completed=...)` after
        every finished value.
    """
    if not values:
        raise DomainError("a sweep needs at least one tuning value")
    reports = []
    for value in values:
        reports.append(run_replicates(config, method, TuningSpec(value=value)))
        if callback:
            callback(total=len(values), completed=len(reports))
    return reports


def sweep_rows(reports: Sequence[ReplicateReport]) -> List[Dict[str, Any]]:
    return [
        {
            "k_or_eps": report.records[0].k_or_eps,
            "abs_rho_err": report.mean_abs_rho_err,
            "imse_u": report.imse_u,
            "imse_v": report.imse_v,
        }
        for report in reports
    ]


def mean_rate(
    config: SimConfig, sizes: Sequence[int], replicates: int
) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Mean integrated squared distance between the sample and true Frechet
    mean curves of X at each sample size, and its log-log slope in n.
    """
    if replicates < 1:
        raise DomainError(f"replicates must be positive, got {replicates}")
    if len(sizes) < 2:
        raise DomainError("the rate needs at least two sample sizes")
    mean_x, _ = beta_mean_surfaces(config.grid)
    bounds = score_bounds(config.basis_size)
    sizes = np.asarray(sizes, dtype=int)
    errors = np.empty(len(sizes))
    for position, n in enumerate(sizes):
        total = 0.0
        for replicate in range(replicates):
            rng = np.random.Generator(
                np.random.Philox(np.random.SeedSequence([config.seed, int(n), replicate]))
            )
            xi = bounds * _unit_scores(config.case, (int(n), config.basis_size), rng)
            sample = Sample(q=_surfaces(mean_x, xi, config.exp_mode), grid=config.grid)
            estimate = frechet_mean_curve(sample)
            total += TangentField(z=estimate.q - mean_x.q, base=mean_x).norm() ** 2
        errors[position] = total / replicates
    slope = float(np.polyfit(np.log(sizes), np.log(errors), 1)[0])
    return sizes, errors, slope


def export_dataset(
    sample_x: Sample,
    sample_y: Sample,
    out_dir: Union[str, Path],
    *,
    samples_per_frame: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[Path]:
    """
    Write X and Y quantile tables, and optionally raw per-frame draws
    from every frame as sample-lists files.
    """
    from .io import write_quantile_table, write_sample_lists

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        write_quantile_table(out / "x_quantiles.csv", sample_x),
        write_quantile_table(out / "y_quantiles.csv", sample_y),
    ]
    if samples_per_frame is not None:
        if rng is None:
            raise DomainError("exporting raw samples needs a random generator")
        written.append(write_sample_lists(out / "x_samples.jsonl", sample_x, samples_per_frame, rng))
        written.append(write_sample_lists(out / "y_samples.jsonl", sample_y, samples_per_frame, rng))
    return written


__all__ = [
    "NoiseScale",
    "ProgressCallback",
    "SimConfig",
    "GroundTruth",
    "TuningSpec",
    "ReplicateRecord",
    "ReplicateReport",
    "REPLICATE_COLUMNS",
    "replicate_rng",
    "score_bounds",
    "standard_score_variance",
    "score_variances",
    "beta_mean_surfaces",
    "sine_basis",
    "basis_fields",
    "true_covariance",
    "sample_scores",
    "ground_truth",
    "generate_dataset",
    "error_metrics",
    "run_replicate",
    "run_replicates",
    "tuning_sweep",
    "sweep_rows",
    "mean_rate",
    "export_dataset",
]
