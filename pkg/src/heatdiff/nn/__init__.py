from .autodiff import Tensor
from .checkpoint import load_checkpoint, load_model, restore_model, save_checkpoint
from .modules import Module
from .optim import Adam
from .unet import Denoiser, UNetConfig, meta_vector, timestep_embedding

__all__ = [
    "Adam",
    "Denoiser",
    "Module",
    "Tensor",
    "UNetConfig",
    "load_checkpoint",
    "load_model",
    "meta_vector",
    "restore_model",
    "save_checkpoint",
    "timestep_embedding",
]
