"""facesr: 8x face hallucination from unaligned low-resolution video
snapshots, with a from-scratch autodiff core, a token-transformer model
and a deterministic training harness."""

from .decoder import DetokenUpsampler, DeuConfig
from .encoder import EncoderConfig, TokenEncoder, TokenGrid, spatial_pos_encoding
from .losses import LossWeights, charbonnier, smooth_l1, total_loss
from .metrics import psnr, ssim
from .model import ModelConfig, SRModel
from .nn import ModelParams
from .optim import AdamW, Lookahead, TrainConfig, clip_grad_norm, cosine_lr, train_loop
from .refiner import LandmarkRefiner, RefinerConfig, landmark_distance_field
from .tensor import Tensor, backward, checked, no_grad
from .vision import PatchSpec, bicubic_resize, fold, rgb_to_ycbcr_y, token_count, unfold

__version__ = "0.1.0"

__all__ = [
    "AdamW", "DetokenUpsampler", "DeuConfig", "EncoderConfig", "LandmarkRefiner",
    "Lookahead", "LossWeights", "ModelConfig", "ModelParams", "PatchSpec",
    "RefinerConfig", "SRModel", "Tensor", "TokenEncoder", "TokenGrid", "TrainConfig",
    "backward", "bicubic_resize", "charbonnier", "checked", "clip_grad_norm",
    "cosine_lr", "fold", "landmark_distance_field", "no_grad", "psnr",
    "rgb_to_ycbcr_y", "smooth_l1", "spatial_pos_encoding", "ssim", "token_count",
    "total_loss", "train_loop", "unfold",
]
