"""
Run settings with the precedence: command-line flags > JSON config file > defaults.
"""
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from .exceptions import DomainError, ParseError

THREADS_ENV = "WCCA_THREADS"

DEFAULT_K_CANDIDATES: Tuple[int, ...] = tuple(range(1, 11))
DEFAULT_EPS_CANDIDATES: Tuple[float, ...] = tuple(10.0 ** -e for e in range(10, 1, -1))
DEFAULT_SUPPORT: Tuple[float, float] = (0.0, 1.0)


def thread_count() -> int:
    """
    Worker threads for Gram products, CV folds and replicates (default 1).
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise DomainError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    if value < 1:
        raise DomainError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def without_nulls(params: Dict[str, Any]) -> Dict[str, Any]:
    """
    Filter out `None` values from params
    """
    return {key: val for key, val in params.items() if val is not None}


@dataclass(frozen=True)
class Settings:
    grid_m: int = 64
    grid_t: int = 50
    support: Optional[Tuple[float, float]] = None
    time_domain: Tuple[float, float] = (0.0, 1.0)
    method: str = "fpca"
    k: Optional[int] = None
    eps: Optional[float] = None
    cv: bool = False
    folds: int = 5
    k_candidates: Tuple[int, ...] = DEFAULT_K_CANDIDATES
    eps_candidates: Tuple[float, ...] = DEFAULT_EPS_CANDIDATES
    top: int = 5
    seed: int = 0
    replicates: int = 50
    case: int = 1
    sigma: float = 0.1
    n: int = 200
    basis_size: int = 20
    noise_scale: str = "literal"
    exp_mode: str = "strict"
    out_dir: str = "."
    clip: bool = False

    def __post_init__(self):
        if self.grid_m < 2 or self.grid_t < 2:
            raise DomainError(f"grids need at least 2 points, got m={self.grid_m} t={self.grid_t}")
        support = self.support
        if support is not None and not (len(support) == 2 and support[0] < support[1]):
            raise DomainError(f"support must be an interval a < b, got {list(support)}")
        if self.method not in ("fpca", "tikhonov"):
            raise DomainError(f"method must be 'fpca' or 'tikhonov', got {self.method!r}")
        if self.sigma < 0:
            raise DomainError(f"sigma must be nonnegative, got {self.sigma}")
        if self.case not in (1, 2):
            raise DomainError(f"case must be 1 or 2, got {self.case}")
        if self.folds < 2:
            raise DomainError(f"folds must be at least 2, got {self.folds}")
        if self.replicates < 1:
            raise DomainError(f"replicates must be at least 1, got {self.replicates}")
        if self.n < 2:
            raise DomainError(f"n must be at least 2, got {self.n}")
        if self.basis_size < 2:
            raise DomainError(f"basis size K must be at least 2, got {self.basis_size}")
        if self.k is not None and self.k < 1:
            raise DomainError(f"k must be positive, got {self.k}")
        if self.eps is not None and not self.eps > 0:
            raise DomainError(f"eps must be positive, got {self.eps}")
        if self.noise_scale not in ("literal", "root", "standardized"):
            raise DomainError(f"unknown noise scale {self.noise_scale!r}")
        if self.exp_mode not in ("strict", "project"):
            raise DomainError(f"unknown exp mode {self.exp_mode!r}")
        if self.top < 1:
            raise DomainError(f"top must be positive, got {self.top}")
        if not self.k_candidates or not self.eps_candidates:
            raise DomainError("candidate lists must be nonempty")

    def support_or_default(self) -> Tuple[float, float]:
        return self.support if self.support is not None else DEFAULT_SUPPORT

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return without_nulls(data)


_TUPLE_KEYS = {"support", "time_domain", "k_candidates", "eps_candidates"}


def _coerce(values: Dict[str, Any]) -> Dict[str, Any]:
    known = {f.name for f in fields(Settings)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise DomainError(f"unknown settings: {', '.join(unknown)}")
    return {
        key: tuple(value) if key in _TUPLE_KEYS and value is not None else value
        for key, value in values.items()
    }


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as error:
        raise ParseError(f"cannot read config file: {error}", path=str(path))
    try:
        data = json.loads(text)
    except json.JSONDecodeError as error:
        raise ParseError(error.msg, path=str(path), line=error.lineno)
    if not isinstance(data, dict):
        raise ParseError("config file must hold a JSON object", path=str(path), line=1)
    return data


def resolve_settings(
    flags: Dict[str, Any], config_path: Optional[Union[str, Path]] = None
) -> Settings:
    """
    Merge defaults, an optional JSON config file and explicit flags.

    :param flags: values given on the command line; `None` means "not given".
    :param config_path: optional JSON file whose keys are Settings fields.
    """
    merged: Dict[str, Any] = {}
    if config_path is not None:
        merged.update(_coerce(load_config_file(config_path)))
    merged.update(_coerce(without_nulls(flags)))
    return replace(Settings(), **merged)


def candidate_list(settings: Settings) -> List[Union[int, float]]:
    if settings.method == "fpca":
        return list(settings.k_candidates)
    return list(settings.eps_candidates)


__all__ = [
    "THREADS_ENV",
    "DEFAULT_K_CANDIDATES",
    "DEFAULT_EPS_CANDIDATES",
    "DEFAULT_SUPPORT",
    "Settings",
    "thread_count",
    "without_nulls",
    "load_config_file",
    "resolve_settings",
    "candidate_list",
]
