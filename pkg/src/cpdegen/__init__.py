"""Low-CP-rank tensor regression with CP degeneracy diagnostics."""

from ._accel import backend
from .degeneracy import (
    DEFAULT_CUTOFFS,
    DivergenceVerdict,
    EigenDiagnostics,
    border_sequence,
    classify_divergence,
    degenerate_target,
    eigen_diagnostics,
    fit_power_law,
    gradient_proxies,
)
from .regression import (
    CpRidge,
    FitConfig,
    FitTrace,
    LeastSquares,
    RegressionDataset,
    TensorRidge,
    block_design,
    block_update,
    fit_multi_start,
    fit_single,
    loss_f,
    objective,
)
from .synth import SynthSpec, generate_case
from .tensor import (
    CpFactors,
    DenseTensor,
    cp_reconstruct,
    frobenius_norm,
    inner_product,
    khatri_rao,
    magnitude,
    rebalance,
    unfold_mode,
    vec_row_major,
)

__version__ = "0.1.0"
