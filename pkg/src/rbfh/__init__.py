"""RBF interpolation with polyharmonic-spline and Matérn kernels, H-matrix
compression of the system matrix and its inverse, and an H-Cholesky solver.
"""

from rbfh.geometry import (
    AxisBox,
    PointCloud,
    bounding_box,
    box_diam,
    box_dist,
    generate_graded_grid,
    generate_uniform_grid,
    separation_distance,
)
from rbfh.kernels import KernelSpec, eval_kernel, matern_sigmas, poly_space_dim
from rbfh.polybasis import (
    PolyBasis,
    build_lagrange_basis,
    enumerate_multi_indices,
    eval_poly_basis,
    select_unisolvent_subset,
)
from rbfh.assembly import (
    SaddleSystem,
    assemble_saddle_matrix,
    assemble_system,
    augmented_lagrangian,
)
from rbfh.clustering import (
    BlockPartition,
    ClusterTree,
    build_block_partition,
    build_cluster_tree,
    norm_upper_bound,
    validate_partition,
)
from rbfh.hmatrix import (
    HMatrix,
    LowRankBlock,
    apply_inverse,
    compress,
    est_spectral_norm,
    hcholesky,
    matvec,
    solve_triangular,
    storage_entries,
)
from rbfh.oracle import InverseBlocks, SpectrumReport, blockwise_spectra, decay_fit, dense_inverse
from rbfh.solver import Interpolant, energy, evaluate, solve

__version__ = "0.1.0"
