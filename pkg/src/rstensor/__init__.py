"""Range-separated tensor summation of long-range potentials on 3D grids."""

from ._accel import BACKEND
from .grid_kernels import (
    GridSpec,
    KernelSpec,
    KernelTensor,
    QuadratureError,
    QuadratureRule,
    build_quadrature,
    build_reference_kernel,
    grid_quadrature,
    kernel_pointwise_error,
    project_gaussian_mode,
    vertex_reads,
)
from .tensor_core import (
    CanonicalTensor,
    SizeGuardError,
    TuckerTensor,
    add_and_compress,
    canonical_inner,
    canonical_sum,
    canonical_to_tucker,
    full_assemble,
    rhosvd,
    tucker_to_canonical,
)

__version__ = "0.1.0"
