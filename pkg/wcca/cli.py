"""
Command-line entry points: simulate, estimate, ingest and cv.

Exit codes: 0 on success, 1 on a data error, 2 on a usage error.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from . import __version__
from .cca import Method, Tuning, cv_select, fit
from .config import Settings, candidate_list, resolve_settings
from .estimation import Sample, decompose
from .exceptions import DomainError, WccaException
from .geometry import ExpMode, GridConfig
from .io import (
    RunManifest,
    align_subjects,
    file_digest,
    read_quantile_table,
    read_sample_lists,
    write_cv_scores,
    write_eigensystem,
    write_estimate,
    write_json,
    write_manifest,
    write_quantile_table,
    write_replicate_report,
    write_scores,
    write_sweep,
)
from .simulation import (
    NoiseScale,
    SimConfig,
    TuningSpec,
    export_dataset,
    generate_dataset,
    replicate_rng,
    run_replicates,
    sweep_rows,
    tuning_sweep,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DATA_ERROR = 1
EXIT_USAGE_ERROR = 2

# argparse destinations that map one-to-one onto Settings fields
SETTING_FLAGS = (
    "grid_m",
    "grid_t",
    "support",
    "method",
    "k",
    "eps",
    "cv",
    "folds",
    "top",
    "seed",
    "replicates",
    "case",
    "sigma",
    "n",
    "basis_size",
    "noise_scale",
    "exp_mode",
    "out_dir",
    "clip",
)


def _interval(text: str) -> Tuple[float, float]:
    try:
        first, second = (float(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b', got {text!r}")
    return first, second


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file of settings; flags take precedence")
    parser.add_argument("--seed", type=int, help="master random seed")
    parser.add_argument("--out-dir", dest="out_dir", help="directory for every output file")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")


def _add_grid(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--grid-m", dest="grid_m", type=int, help="number of quantile levels")
    parser.add_argument("--grid-t", dest="grid_t", type=int, help="number of time points")
    parser.add_argument("--support", type=_interval, help="support interval as 'a,b'")


def _add_method(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--method", choices=[m.value for m in Method])
    parser.add_argument("--folds", type=int, help="number of cross-validation folds")


def _add_tuning(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, help="FPCA truncation level for X and Y")
    parser.add_argument("--eps", type=float, help="Tikhonov ridge for X and Y")
    parser.add_argument(
        "--cv", action="store_const", const=True, help="choose k or eps by cross-validation"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wcca", description="Canonical correlation analysis of distribution-valued curves."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Monte Carlo replicates of the Beta generator")
    _add_common(simulate)
    _add_grid(simulate)
    _add_method(simulate)
    _add_tuning(simulate)
    simulate.add_argument("--case", type=int, choices=[1, 2], help="1: truncated normal, 2: uniform")
    simulate.add_argument("--sigma", type=float, help="noise level of the coupled score")
    simulate.add_argument("--n", type=int, help="subjects per replicate")
    simulate.add_argument("--replicates", type=int, help="number of replicates")
    simulate.add_argument("--basis-size", dest="basis_size", type=int, help="number of basis fields")
    simulate.add_argument(
        "--noise-scale", dest="noise_scale", choices=[s.value for s in NoiseScale]
    )
    simulate.add_argument("--exp-mode", dest="exp_mode", choices=[m.value for m in ExpMode])
    simulate.add_argument(
        "--export", action="store_true", help="also write the first replicate's dataset"
    )
    simulate.add_argument(
        "--export-samples",
        dest="export_samples",
        type=int,
        help="with --export, also write this many raw draws per frame",
    )
    simulate.add_argument(
        "--sweep",
        action="store_true",
        help="write mean errors for every candidate k or eps instead of one tuning",
    )

    estimate = commands.add_parser("estimate", help="fit CCA to two quantile tables")
    estimate.add_argument("x", help="quantile table of X")
    estimate.add_argument("y", help="quantile table of Y")
    _add_common(estimate)
    _add_method(estimate)
    _add_tuning(estimate)
    estimate.add_argument("--top", type=int, help="number of canonical correlations to report")

    ingest = commands.add_parser("ingest", help="convert sample lists to a quantile table")
    ingest.add_argument("input", help="sample-lists JSON-lines file")
    ingest.add_argument("output", help="quantile table to write")
    _add_common(ingest)
    _add_grid(ingest)
    ingest.add_argument(
        "--clip", action="store_const", const=True, help="clip samples outside the support"
    )

    cv = commands.add_parser("cv", help="cross-validation scores only")
    cv.add_argument("x", help="quantile table of X")
    cv.add_argument("y", help="quantile table of Y")
    _add_common(cv)
    _add_method(cv)
    return parser


def _flags(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, key, None) for key in SETTING_FLAGS}


def _out_dir(settings: Settings) -> Path:
    out = Path(settings.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tuning_value(settings: Settings, method: Method) -> Optional[Tuning]:
    value = settings.k if method is Method.fpca else settings.eps
    if value is None and not settings.cv:
        flag = "--k" if method is Method.fpca else "--eps"
        raise DomainError(f"give {flag} or --cv")
    return None if settings.cv else value


def _manifest(
    command: str, settings: Settings, inputs: Sequence[str], outputs: Sequence[Path]
) -> RunManifest:
    return RunManifest(
        command=command,
        config=settings.to_dict(),
        seed=settings.seed,
        version=__version__,
        inputs={Path(path).name: file_digest(path) for path in inputs},
        outputs=[path.name for path in outputs],
    )


def _progress(*, total: int, completed: int) -> None:
    logger.info("replicate %d/%d done", completed, total)


def _sweep_progress(*, total: int, completed: int) -> None:
    logger.info("tuning value %d/%d done", completed, total)


def _simulate_sweep(config: SimConfig, method: Method, settings: Settings) -> int:
    candidates = candidate_list(settings)
    logger.debug("sweeping %s over %s", method.value, candidates)
    reports = tuning_sweep(config, method, candidates, callback=_sweep_progress)
    out = _out_dir(settings)
    written = [write_sweep(out / "sweep.csv", sweep_rows(reports))]
    write_manifest(out / "manifest.json", _manifest("simulate", settings, [], written))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, settings: Settings) -> int:
    grid = GridConfig(
        m_levels=settings.grid_m,
        t_points=settings.grid_t,
        support=settings.support_or_default(),
        time_domain=settings.time_domain,
    )
    config = SimConfig(
        n=settings.n,
        sigma=settings.sigma,
        case=settings.case,
        basis_size=settings.basis_size,
        grid=grid,
        seed=settings.seed,
        replicates=settings.replicates,
        noise_scale=NoiseScale(settings.noise_scale),
        exp_mode=ExpMode(settings.exp_mode),
    )
    method = Method(settings.method)
    if args.sweep:
        return _simulate_sweep(config, method, settings)
    value = _tuning_value(settings, method)
    tuning = TuningSpec(
        value=value,
        candidates=tuple(candidate_list(settings)),
        folds=settings.folds,
    )
    logger.debug("simulating with %s", config.to_dict())
    report = run_replicates(config, method, tuning, callback=_progress)

    out = _out_dir(settings)
    written = write_replicate_report(out, report)
    if args.export:
        rng = replicate_rng(settings.seed, 0)
        sample_x, sample_y, _ = generate_dataset(config, rng)
        written += export_dataset(
            sample_x, sample_y, out / "dataset", samples_per_frame=args.export_samples, rng=rng
        )
    write_manifest(out / "manifest.json", _manifest("simulate", settings, [], written))
    summary = report.summary()
    logger.info(
        "mean |rho_hat - rho| = %.6g, IMSE(U) = %.6g, IMSE(V) = %.6g",
        summary["abs_rho_err"],
        summary["imse_u"],
        summary["imse_v"],
    )
    return EXIT_OK


def _paired_samples(args: argparse.Namespace) -> Tuple[Sample, Sample, List[str]]:
    x_file = read_quantile_table(args.x)
    y_file = read_quantile_table(args.y)
    sample_x, sample_y = align_subjects(x_file, y_file)
    return sample_x, sample_y, x_file.subjects


def cmd_estimate(args: argparse.Namespace, settings: Settings) -> int:
    sample_x, sample_y, subjects = _paired_samples(args)
    method = Method(settings.method)
    value = _tuning_value(settings, method)
    out = _out_dir(settings)
    written: List[Path] = []
    if value is None:
        candidates = candidate_list(settings)
        value, scores = cv_select(
            sample_x, sample_y, method, candidates, folds=settings.folds, seed=settings.seed
        )
        written.append(write_cv_scores(out / "cv_scores.csv", candidates, scores))
        logger.info("cross-validation chose %s", value)

    estimate = fit(sample_x, sample_y, method, value, r=settings.top)
    written += write_estimate(out, estimate, top=settings.top)
    limit = int(value) if method is Method.fpca else None
    for name, sample in (("x", sample_x), ("y", sample_y)):
        side = decompose(sample, limit)
        written.append(write_eigensystem(out / f"eigen_{name}.csv", side.eigen))
        written.append(write_scores(out / f"scores_{name}.csv", side.scores, subjects))
    write_manifest(out / "manifest.json", _manifest("estimate", settings, [args.x, args.y], written))
    logger.info("rho_hat = %.17g", estimate.rho)
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace, settings: Settings) -> int:
    dataset, stats = read_sample_lists(
        args.input, settings.grid_m, support=settings.support, clip=settings.clip
    )
    written = [write_quantile_table(args.output, dataset.sample, dataset.subjects)]
    out = _out_dir(settings)
    written.append(write_json(out / "ingest_stats.json", stats.to_dict()))
    write_manifest(out / "manifest.json", _manifest("ingest", settings, [args.input], written))
    logger.info(
        "ingested %d frames, %d-%d samples per frame, %d clipped",
        stats.frames,
        stats.min_samples,
        stats.max_samples,
        stats.clipped_samples,
    )
    return EXIT_OK


def cmd_cv(args: argparse.Namespace, settings: Settings) -> int:
    sample_x, sample_y, _ = _paired_samples(args)
    method = Method(settings.method)
    candidates = candidate_list(settings)
    choice, scores = cv_select(
        sample_x, sample_y, method, candidates, folds=settings.folds, seed=settings.seed
    )
    out = _out_dir(settings)
    written = [
        write_cv_scores(out / "cv_scores.csv", candidates, scores),
        write_json(
            out / "cv_choice.json",
            {"method": method.value, "choice": choice, "folds": settings.folds, "seed": settings.seed},
        ),
    ]
    write_manifest(out / "manifest.json", _manifest("cv", settings, [args.x, args.y], written))
    logger.info("cross-validation chose %s", choice)
    return EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace, Settings], int]] = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "ingest": cmd_ingest,
    "cv": cmd_cv,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as error:
        return EXIT_OK if error.code == 0 else EXIT_USAGE_ERROR
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)
    try:
        settings = resolve_settings(_flags(args), args.config)
        return COMMANDS[args.command](args, settings)
    except DomainError as error:
        logger.error("%s", error)
        return EXIT_USAGE_ERROR
    except WccaException as error:
        logger.error("%s", error)
        return EXIT_DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
