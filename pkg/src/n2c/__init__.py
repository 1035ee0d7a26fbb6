"""Self-supervised multi-contrast denoising toolkit.

Core pieces: a differentiable bilateral filter stack (the denoiser), a
small encoder-decoder translation network, four self-supervised training
schemes plus two ablations, PSNR/SSIM metrics, a synthetic multi-contrast
phantom generator, and a reproducible experiment CLI (``n2c``).
"""

from ._version import __version__
from .bilateral import (
    BilateralLayerParams,
    BilateralStackParams,
    FilterWindow,
    bf_backward,
    bf_forward,
    stack_backward,
    stack_forward,
)
from .errors import (
    ConfigurationError,
    ContractError,
    DataError,
    N2CError,
    NumericalError,
)
from .image import Contrast, Image, add_correlated_noise, add_gaussian_noise, read_image, write_image
from .metrics import MetricConfig, psnr, ssim
from .modelio import load_model, save_model, write_report
from .optim import AdamState, ParamVector, adam_step, finite_diff_gradient, gradient_check
from .phantom import MultiContrastVolume, PhantomConfig, VolumeSlice, generate_phantom
from .training import (
    ModelBundle,
    TrainConfig,
    TrainReport,
    mse_loss,
    train,
    train_ablations,
    train_n2c_known,
    train_n2c_network,
    train_n2neighbor,
    train_n2v,
)
from .unet import DomainNetParams, NetConfig, freeze, net_backward, net_forward, net_init

__all__ = [
    "__version__",
    "AdamState",
    "BilateralLayerParams",
    "BilateralStackParams",
    "ConfigurationError",
    "Contrast",
    "ContractError",
    "DataError",
    "DomainNetParams",
    "FilterWindow",
    "Image",
    "MetricConfig",
    "ModelBundle",
    "MultiContrastVolume",
    "N2CError",
    "NetConfig",
    "NumericalError",
    "ParamVector",
    "PhantomConfig",
    "TrainConfig",
    "TrainReport",
    "VolumeSlice",
    "adam_step",
    "add_correlated_noise",
    "add_gaussian_noise",
    "bf_backward",
    "bf_forward",
    "finite_diff_gradient",
    "freeze",
    "generate_phantom",
    "gradient_check",
    "load_model",
    "mse_loss",
    "net_backward",
    "net_forward",
    "net_init",
    "psnr",
    "read_image",
    "save_model",
    "ssim",
    "stack_backward",
    "stack_forward",
    "train",
    "train_ablations",
    "train_n2c_known",
    "train_n2c_network",
    "train_n2neighbor",
    "train_n2v",
    "write_image",
    "write_report",
]
