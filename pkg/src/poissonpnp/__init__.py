"""Plug-and-play Langevin sampling for Poisson inverse problems."""

from .diagnostics import MultiscaleStd, TraceBuffer, WelfordAccumulator, acf, psnr, ssim
from .likelihood import PoissonModel, default_beta, simulate
from .mirror import BurgMap, QuadraticMap
from .priors import (
    BregmanDenoiser, EquivarianceGroup, EquivariantDenoiser, GaussianDenoiser, GMMDenoiser,
    bregman_score, tweedie_score,
)
from .samplers import (
    KERNELS, BoxConstraint, ChainConfig, ChainDivergence, ChainState, run_chain, skrock_coeffs,
)
from .tensor import BlurOperator, IdentityOperator, MatrixOperator, load_kernel

__version__ = "0.1.0"
