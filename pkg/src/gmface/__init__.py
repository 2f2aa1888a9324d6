"""Grayscale images as weighted sums of anisotropic 2-D Gaussians."""

from .core import (
    CholFactor,
    GaussianComponent,
    GmModel,
    ImageGrid,
    SymMatrix2,
    Vec2,
    eval_gaussian,
    eval_model,
    parameter_size,
    pixel_coords,
    precision_matrix,
    render,
)
from .train import (
    FitConfig,
    FitResult,
    GradientSet,
    LossReport,
    compute_gradients,
    compute_loss,
    finite_diff_gradients,
    fit,
    init_model,
)
from .transform import RotationSpec, cholesky2, rotate, scale, top_k, translate

__version__ = "0.1.0"
