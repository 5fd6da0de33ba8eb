"""Inverse-kernel deconvolution (KPAC, RKAC, R2KAC) and a toy SR-R2KAC network in numpy."""

from .composition import (
    DeconvConfig,
    ExperimentRecord,
    Method,
    WeightMode,
    approximation_accuracy,
    branch_kernels,
    kpac_deconv,
    r2kac_deconv,
    rkac_deconv,
    single_deconv,
    sweep_fig1,
)
from .imagekernel import (
    Kernel,
    KernelRole,
    ParameterError,
    PNMFormatError,
    disc_kernel,
    gaussian_kernel,
    lanczos_rescale,
    read_pnm,
    synth_image,
    write_pnm,
)
from .metrics import MetricReport, mae, psnr, report, ssim
from .spectral import (
    Boundary,
    SingularityError,
    dft2,
    fft_convolve,
    idft2,
    pseudo_inverse_kernel,
    scale_property_check,
)

__version__ = "0.1.0"

__all__ = [
    "Boundary",
    "DeconvConfig",
    "ExperimentRecord",
    "Kernel",
    "KernelRole",
    "Method",
    "MetricReport",
    "PNMFormatError",
    "ParameterError",
    "SingularityError",
    "WeightMode",
    "approximation_accuracy",
    "branch_kernels",
    "dft2",
    "disc_kernel",
    "fft_convolve",
    "gaussian_kernel",
    "idft2",
    "kpac_deconv",
    "lanczos_rescale",
    "mae",
    "pseudo_inverse_kernel",
    "psnr",
    "r2kac_deconv",
    "read_pnm",
    "report",
    "rkac_deconv",
    "scale_property_check",
    "single_deconv",
    "ssim",
    "sweep_fig1",
    "synth_image",
    "write_pnm",
]
