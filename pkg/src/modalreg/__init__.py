"""Modal regression by direct estimation of the log-density derivative.

Submodules
----------
kernel     Gaussian kernels, their output derivatives and Gram matrices.
lsld       Kernel least-squares log-density-derivative estimator, LOOCV.
dmrk       Kernel modal regression by fixed-point iteration.
baselines  Kernel ridge, kernel LAD and KDE-based modal regression.
nn         Score network and neural modal regression with Adam.
data       Synthetic generators, table I/O, standardisation, metrics.
io         JSON model files.
pipeline   Fitting recipes used by the command line and benchmarks.
"""

from .errors import ConfigError, DataError, ModalRegError, NumericalError, StorageError

__version__ = "0.1.0"

__all__ = [
    "ModalRegError",
    "ConfigError",
    "DataError",
    "NumericalError",
    "StorageError",
    "__version__",
]
