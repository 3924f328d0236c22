"""feklab: a desk-scale lab for high-order finite element kernel models.

Sum-factorized tensor contractions with cyclic index ordering, a scalar
emulation of the FP64 m8n8k4 warp MMA with per-lane fragment maps, a
shared-memory bank-conflict model with a conflict-free mapping search, a
byte/FLOP cost model, and a small acoustic-gravity wave solver whose block
operator runs under interchangeable evaluation strategies and contraction
backends.
"""

from .counters import Counters
from .mma import FragmentLayout, GemmShape, IndexMapping, dmma_m8n8k4, tiled_gemm
from .tensor import Basis1D, Tensor3, apply_basis_3d, apply_basis_transpose_3d, contract_cyclic

__version__ = "0.1.0"

__all__ = [
    "Basis1D",
    "Counters",
    "FragmentLayout",
    "GemmShape",
    "IndexMapping",
    "Tensor3",
    "apply_basis_3d",
    "apply_basis_transpose_3d",
    "contract_cyclic",
    "dmma_m8n8k4",
    "tiled_gemm",
    "__version__",
]
