__version__ = "0.1.0"

from .cca import CcaEstimate, Method, cv_select, fit, fpca_cca, tikhonov_cca  # noqa: E402
from .estimation import Sample, covariance_eigen, decompose, frechet_mean_curve, log_fields  # noqa: E402
from .exceptions import WccaException  # noqa: E402
from .geometry import Distribution, GridConfig  # noqa: E402

__all__ = [
    "__version__",
    "CcaEstimate",
    "Distribution",
    "GridConfig",
    "Method",
    "Sample",
    "WccaException",
    "covariance_eigen",
    "cv_select",
    "decompose",
    "fit",
    "fpca_cca",
    "frechet_mean_curve",
    "log_fields",
    "tikhonov_cca",
]
