"""Memory-augmented multi-task recurrent networks for transit demand forecasting."""

import os as _os

# Pin BLAS to one thread unless the caller configured otherwise. Multi-threaded
# reductions can reorder float sums, which would break bitwise run-to-run
# reproducibility. Must happen before numpy loads its BLAS backend.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

from .autodiff import Parameter, Tensor, grad_check  # noqa: F401
from .errors import (  # noqa: F401
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    DivergenceError,
    MatureError,
    SpecError,
)
