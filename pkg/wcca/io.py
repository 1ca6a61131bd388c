"""
Dataset files, result tables and run manifests.

Quantile tables are CSV files with a tag line
``#wcca quantile-table v1 support=a,b time=c,d`` followed by the header
``subject,t_index,q_1,...,q_m`` and one row per (subject, time index).
Sample lists are JSON lines, one ``{"subject", "t_index", "values"}``
object per frame, optionally preceded by a header object carrying
``schema``, ``support`` and ``time_domain``.
"""
import csv
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .cca import CcaEstimate
from .config import without_nulls
from .estimation import EigenSystem, Sample, ScoreMatrix
from .exceptions import (
    EmptyInput,
    GridMismatch,
    InvalidDistribution,
    ParseError,
    SampleMismatch,
    SupportViolation,
)
from .fields import TangentField
from .geometry import GridConfig, check_grids, from_samples, monotone_quantiles

SCHEMA_VERSION = "v1"
QUANTILE_TABLE_TAG = "#wcca quantile-table"
SAMPLE_LISTS_SCHEMA = "wcca sample-lists"

PathLike = Union[str, Path]


class DatasetFormat(Enum):
    quantile_table = "quantile-table"
    sample_lists = "sample-lists"


@dataclass(frozen=True, eq=False)
class DatasetFile:
    """
    A paired-analysis input: subject labels and their curves, in file order.
    """

    format: DatasetFormat
    subjects: List[str]
    sample: Sample
    version: str = SCHEMA_VERSION

    def __post_init__(self):
        if len(self.subjects) != self.sample.n:
            raise SampleMismatch(
                f"{len(self.subjects)} subject labels for {self.sample.n} curves"
            )
        if len(set(self.subjects)) != len(self.subjects):
            raise SampleMismatch("subject labels are not unique")

    @property
    def n(self) -> int:
        return self.sample.n

    @property
    def grid(self) -> GridConfig:
        return self.sample.grid


@dataclass(frozen=True)
class IngestStats:
    frames: int
    total_samples: int
    min_samples: int
    max_samples: int
    clipped_samples: int

    def to_dict(self) -> Dict[str, int]:
        return {
            "frames": self.frames,
            "total_samples": self.total_samples,
            "min_samples": self.min_samples,
            "max_samples": self.max_samples,
            "clipped_samples": self.clipped_samples,
        }


@dataclass(frozen=True)
class RunManifest:
    """
    Everything needed to rerun a command: no timestamps or host details, so
    the manifest itself is reproducible.
    """

    command: str
    config: Dict[str, Any]
    seed: int
    version: str
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return without_nulls(
            {
                "command": self.command,
                "config": self.config,
                "seed": self.seed,
                "version": self.version,
                "inputs": self.inputs,
                "outputs": sorted(self.outputs),
            }
        )


def format_value(value: Any) -> str:
    """
    Text form used in every table: 17 significant digits for floats.
    """
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def file_digest(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as stream:
        for chunk in iter(lambda: stream.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path: PathLike, data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n")
    return path


def write_rows(path: PathLike, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(value) for value in row])
    return path


def default_subjects(n: int) -> List[str]:
    return [f"subject-{index:04d}" for index in range(1, n + 1)]


def _pair(value: str, what: str, path: str, line: int) -> Tuple[float, float]:
    try:
        first, second = (float(part) for part in value.split(","))
    except ValueError:
        raise ParseError(f"malformed {what} {value!r}", path=path, line=line)
    return first, second


def _parse_tag(text: str, path: str) -> Dict[str, Tuple[float, float]]:
    parts = text.strip().split()
    expected = QUANTILE_TABLE_TAG.split()
    if parts[:2] != expected:
        raise ParseError(f"missing {QUANTILE_TABLE_TAG!r} tag line", path=path, line=1)
    if len(parts) < 3 or parts[2] != SCHEMA_VERSION:
        raise ParseError(f"unsupported quantile-table version, expected {SCHEMA_VERSION}", path=path, line=1)
    options = {}
    for option in parts[3:]:
        key, _, value = option.partition("=")
        if key == "support":
            options["support"] = _pair(value, "support", path, 1)
        elif key == "time":
            options["time_domain"] = _pair(value, "time domain", path, 1)
        else:
            raise ParseError(f"unknown tag option {key!r}", path=path, line=1)
    return options


def read_quantile_table(path: PathLike, grid: Optional[GridConfig] = None) -> DatasetFile:
    """
    Read a quantile table; every subject must supply every time index.

    :param grid: expected grid; when omitted it is taken from the file.
    """
    name = str(path)
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as error:
        raise ParseError(f"cannot read dataset: {error}", path=name)
    if len(lines) < 2:
        raise ParseError("file needs a tag line and a header", path=name, line=len(lines) + 1)
    options = _parse_tag(lines[0], name)
    header = next(csv.reader([lines[1]]))
    m_levels = len(header) - 2
    if header[:2] != ["subject", "t_index"] or header[2:] != [
        f"q_{j}" for j in range(1, m_levels + 1)
    ]:
        raise ParseError("header must be subject,t_index,q_1..q_m", path=name, line=2)
    if m_levels < 2:
        raise ParseError("a quantile table needs at least two levels", path=name, line=2)

    frames: Dict[str, Dict[int, Tuple[int, np.ndarray]]] = {}
    for number, row in enumerate(csv.reader(lines[2:]), start=3):
        if not row:
            continue
        if len(row) != m_levels + 2:
            raise ParseError(f"expected {m_levels + 2} fields, got {len(row)}", path=name, line=number)
        subject = row[0]
        try:
            t_index = int(row[1])
            q = np.array([float(value) for value in row[2:]])
        except ValueError as error:
            raise ParseError(str(error), path=name, line=number)
        if t_index < 0:
            raise ParseError(f"negative t_index {t_index}", path=name, line=number)
        per_subject = frames.setdefault(subject, {})
        if t_index in per_subject:
            raise ParseError(f"duplicate frame {subject!r}/{t_index}", path=name, line=number)
        per_subject[t_index] = (number, q)
    if not frames:
        raise ParseError("dataset holds no rows", path=name, line=3)

    t_points = max(max(per_subject) for per_subject in frames.values()) + 1
    if grid is None:
        try:
            grid = GridConfig(m_levels=m_levels, t_points=t_points, **options)
        except ValueError as error:
            raise ParseError(str(error), path=name, line=1)
    elif (grid.m_levels, grid.t_points) != (m_levels, t_points):
        raise GridMismatch(
            f"{name} holds {t_points} x {m_levels} frames, expected {grid.t_points} x {grid.m_levels}"
        )
    elif options.get("support", grid.support) != grid.support:
        raise GridMismatch(f"{name} has support {options['support']}, expected {grid.support}")

    subjects = list(frames)
    surfaces = np.empty((len(subjects), t_points, m_levels))
    for i, subject in enumerate(subjects):
        per_subject = frames[subject]
        missing = [t for t in range(t_points) if t not in per_subject]
        if missing:
            raise ParseError(f"subject {subject!r} lacks time indices {missing}", path=name)
        for t_index, (number, q) in per_subject.items():
            try:
                surfaces[i, t_index] = monotone_quantiles(q, grid)
            except InvalidDistribution as error:
                raise ParseError(str(error), path=name, line=number)
    return DatasetFile(
        format=DatasetFormat.quantile_table,
        subjects=subjects,
        sample=Sample(q=surfaces, grid=grid),
    )


def write_quantile_table(
    path: PathLike, sample: Sample, subjects: Optional[Sequence[str]] = None
) -> Path:
    grid = sample.grid
    subjects = list(subjects) if subjects is not None else default_subjects(sample.n)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    support = ",".join(format_value(v) for v in grid.support)
    time = ",".join(format_value(v) for v in grid.time_domain)
    columns = ["subject", "t_index"] + [f"q_{j}" for j in range(1, grid.m_levels + 1)]
    with open(path, "w", newline="") as stream:
        stream.write(f"{QUANTILE_TABLE_TAG} {SCHEMA_VERSION} support={support} time={time}\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(columns)
        for subject, surface in zip(subjects, sample.q):
            for t_index, row in enumerate(surface):
                writer.writerow([subject, t_index] + [format_value(v) for v in row])
    return path


def read_sample_lists(
    path: PathLike,
    m_levels: int,
    *,
    support: Optional[Tuple[float, float]] = None,
    clip: bool = False,
) -> Tuple[DatasetFile, IngestStats]:
    """
    Convert raw per-frame samples into empirical quantile curves.

    :param m_levels: number of quantile levels of the target grid.
    :param support: overrides the support named in the header, [0, 1] if neither.
    :param clip: clip samples outside the support instead of failing.
    """
    name = str(path)
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as error:
        raise ParseError(f"cannot read dataset: {error}", path=name)

    header: Dict[str, Any] = {}
    header_line = 1
    records: Dict[str, Dict[int, Tuple[int, List[float]]]] = {}
    for number, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            entry = json.loads(text)
        except json.JSONDecodeError as error:
            raise ParseError(error.msg, path=name, line=number)
        if not isinstance(entry, dict):
            raise ParseError("each line must hold a JSON object", path=name, line=number)
        if "schema" in entry:
            if header or records:
                raise ParseError("header object must come first", path=name, line=number)
            if not str(entry["schema"]).startswith(SAMPLE_LISTS_SCHEMA):
                raise ParseError(f"unknown schema {entry['schema']!r}", path=name, line=number)
            header = entry
            header_line = number
            continue
        try:
            subject = str(entry["subject"])
            t_index = int(entry["t_index"])
            values = [float(value) for value in entry["values"]]
        except (KeyError, TypeError, ValueError) as error:
            raise ParseError(f"malformed frame record: {error}", path=name, line=number)
        if t_index < 0:
            raise ParseError(f"negative t_index {t_index}", path=name, line=number)
        per_subject = records.setdefault(subject, {})
        if t_index in per_subject:
            raise ParseError(f"duplicate frame {subject!r}/{t_index}", path=name, line=number)
        per_subject[t_index] = (number, values)
    if not records:
        raise ParseError("dataset holds no frames", path=name)

    t_points = max(max(per_subject) for per_subject in records.values()) + 1
    try:
        grid = GridConfig(
            m_levels=m_levels,
            t_points=t_points,
            support=tuple(support if support is not None else header.get("support", (0.0, 1.0))),
            time_domain=tuple(header.get("time_domain", (0.0, 1.0))),
        )
    except (TypeError, ValueError) as error:
        raise ParseError(f"invalid grid: {error}", path=name, line=header_line)
    a, b = grid.support
    subjects = list(records)
    surfaces = np.empty((len(subjects), t_points, m_levels))
    counts = []
    clipped = 0
    for i, subject in enumerate(subjects):
        per_subject = records[subject]
        missing = [t for t in range(t_points) if t not in per_subject]
        if missing:
            raise ParseError(f"subject {subject!r} lacks time indices {missing}", path=name)
        for t_index, (number, values) in sorted(per_subject.items()):
            try:
                surfaces[i, t_index] = from_samples(values, grid, clip=clip).q
            except EmptyInput:
                raise EmptyInput(f"{name}:{number}: subject {subject!r} frame {t_index} has no samples")
            except SupportViolation as error:
                raise SupportViolation(f"{name}:{number}: subject {subject!r} frame {t_index}: {error}")
            except ValueError as error:
                raise ParseError(
                    f"subject {subject!r} frame {t_index}: {error}", path=name, line=number
                )
            array = np.asarray(values)
            counts.append(len(values))
            clipped += int(np.sum((array < a) | (array > b)))
    stats = IngestStats(
        frames=len(counts),
        total_samples=int(sum(counts)),
        min_samples=int(min(counts)),
        max_samples=int(max(counts)),
        clipped_samples=clipped,
    )
    dataset = DatasetFile(
        format=DatasetFormat.sample_lists,
        subjects=subjects,
        sample=Sample(q=surfaces, grid=grid),
    )
    return dataset, stats


def write_sample_lists(
    path: PathLike,
    sample: Sample,
    per_frame: int,
    rng: np.random.Generator,
    subjects: Optional[Sequence[str]] = None,
) -> Path:
    """
    Draw `per_frame` values from every frame by inverse-transform sampling.
    """
    grid = sample.grid
    subjects = list(subjects) if subjects is not None else default_subjects(sample.n)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "schema": f"{SAMPLE_LISTS_SCHEMA} {SCHEMA_VERSION}",
        "support": list(grid.support),
        "time_domain": list(grid.time_domain),
    }
    with open(path, "w") as stream:
        stream.write(json.dumps(header, sort_keys=True) + "\n")
        for subject, curve in zip(subjects, sample.curves):
            for t_index, frame in enumerate(curve.frames):
                record = {
                    "subject": subject,
                    "t_index": t_index,
                    "values": [float(v) for v in frame.sample(per_frame, rng)],
                }
                stream.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def align_subjects(x: DatasetFile, y: DatasetFile) -> Tuple[Sample, Sample]:
    """
    Pair X and Y curves by subject label, in the order of the X file.
    """
    check_grids(x.grid, y.grid)
    if set(x.subjects) != set(y.subjects):
        only_x = sorted(set(x.subjects) - set(y.subjects))
        only_y = sorted(set(y.subjects) - set(x.subjects))
        raise SampleMismatch(f"subjects differ: only in X {only_x[:5]}, only in Y {only_y[:5]}")
    position = {subject: index for index, subject in enumerate(y.subjects)}
    return x.sample, y.sample.subset([position[subject] for subject in x.subjects])


def field_rows(z: TangentField) -> List[Tuple[int, float, float, float, float]]:
    """
    Long-format heatmap rows (t_index, t, u, x, value) with x the base
    curve's quantile at level u.
    """
    grid = z.grid
    rows = []
    for t_index, t in enumerate(grid.times):
        for j, u in enumerate(grid.levels):
            rows.append((t_index, float(t), float(u), float(z.base.q[t_index, j]), float(z.z[t_index, j])))
    return rows


def write_field(path: PathLike, z: TangentField) -> Path:
    return write_rows(path, ["t_index", "t", "u", "x", "value"], field_rows(z))


def write_estimate(out_dir: PathLike, estimate: CcaEstimate, *, top: int = 5) -> List[Path]:
    """
    estimate.json plus weight-field heatmaps and the top-r correlation table.
    """
    out = Path(out_dir)
    u_path = write_field(out / "u_field.csv", estimate.u_field)
    v_path = write_field(out / "v_field.csv", estimate.v_field)
    table = write_rows(
        out / "top_correlations.csv",
        ["rank", "rho"],
        [(rank, rho) for rank, rho in enumerate(estimate.correlations[:top], start=1)],
    )
    data = estimate.to_dict()
    data["files"] = {"u_field": u_path.name, "v_field": v_path.name, "top_correlations": table.name}
    return [write_json(out / "estimate.json", data), u_path, v_path, table]


def write_eigensystem(path: PathLike, eigen: EigenSystem) -> Path:
    return write_rows(
        path,
        ["component", "eigenvalue"],
        [(k, value) for k, value in enumerate(eigen.eigenvalues, start=1)],
    )


def write_scores(path: PathLike, scores: ScoreMatrix, subjects: Sequence[str]) -> Path:
    columns = ["subject"] + [f"s_{k}" for k in range(1, scores.k + 1)]
    return write_rows(path, columns, [[subject] + list(row) for subject, row in zip(subjects, scores.s)])


def write_cv_scores(path: PathLike, candidates: Sequence[Any], scores: Sequence[float]) -> Path:
    return write_rows(path, ["candidate", "score"], zip(candidates, scores))


def write_replicate_report(out_dir: PathLike, report) -> List[Path]:
    """
    replicates.csv (one row per replicate) and summary.json (aggregate cell).
    """
    out = Path(out_dir)
    rows = report.rows()
    columns = list(rows[0]) if rows else []
    table = write_rows(out / "replicates.csv", columns, [[row[c] for c in columns] for row in rows])
    return [table, write_json(out / "summary.json", report.summary())]


def write_sweep(path: PathLike, rows: Sequence[Dict[str, Any]]) -> Path:
    """
    sweep.csv: one row of mean errors per fixed tuning value.
    """
    columns = ["k_or_eps", "abs_rho_err", "imse_u", "imse_v"]
    return write_rows(path, columns, [[row[c] for c in columns] for row in rows])


def write_manifest(path: PathLike, manifest: RunManifest) -> Path:
    return write_json(path, manifest.to_dict())


__all__ = [
    "SCHEMA_VERSION",
    "DatasetFormat",
    "DatasetFile",
    "IngestStats",
    "RunManifest",
    "format_value",
    "file_digest",
    "write_json",
    "write_rows",
    "default_subjects",
    "read_quantile_table",
    "write_quantile_table",
    "read_sample_lists",
    "write_sample_lists",
    "align_subjects",
    "field_rows",
    "write_field",
    "write_estimate",
    "write_eigensystem",
    "write_scores",
    "write_cv_scores",
    "write_replicate_report",
    "write_sweep",
    "write_manifest",
]
