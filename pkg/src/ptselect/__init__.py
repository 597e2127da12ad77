"""Pointwise adaptive kernel selection in the Gaussian white noise model."""

__version__ = "0.1.0"

from .kernels import KernelParam, ThetaGrid, make_base_kernel  # noqa: E402
from .majorant import MajorantSpec, build_majorant, e_mc  # noqa: E402
from .selector import SelectionResult, select  # noqa: E402
from .wgn_sim import Grid, make_grid, sample_field  # noqa: E402

__all__ = [
    "__version__",
    "Grid",
    "make_grid",
    "sample_field",
    "KernelParam",
    "ThetaGrid",
    "make_base_kernel",
    "MajorantSpec",
    "build_majorant",
    "e_mc",
    "SelectionResult",
    "select",
]
