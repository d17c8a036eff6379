"""Full reconstruction model: encoder -> landmark refiner -> upsampler."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .decoder import DetokenUpsampler, DeuConfig
from .encoder import EncoderConfig, TokenEncoder, TokenGrid
from .errors import ConfigError
from .nn import ModelParams
from .refiner import LandmarkRefiner, RefinerConfig
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    input_h: int = 16
    input_w: int = 12
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    decoder: DeuConfig = field(default_factory=DeuConfig)

    def __post_init__(self):
        if self.input_h < 1 or self.input_w < 1:
            raise ConfigError("input extents must be >= 1")

    def to_dict(self) -> dict:
        e, r, d = self.encoder, self.refiner, self.decoder
        return {
            "input_h": self.input_h,
            "input_w": self.input_w,
            "encoder": {
                "d_model": e.d_model, "n_heads": e.n_heads, "n_iters": e.n_iters,
                "depth": e.depth, "ffn_ratio": e.ffn_ratio,
                "patch": {"k": e.patch.k, "s": e.patch.s, "p": e.patch.p},
            },
            "refiner": {
                "d_small": r.d_small, "mlp_hidden": r.mlp_hidden,
                "recurrences": r.recurrences, "n_heads": r.n_heads,
                "ffn_ratio": r.ffn_ratio,
            },
            "decoder": {
                "d_q": d.d_q, "d_k": d.d_k, "d_v": d.d_v, "n_heads": d.n_heads,
                "d_out": d.d_out, "out_scale": d.out_scale,
                "fold_spec": {"k": d.fold_spec.k, "s": d.fold_spec.s, "p": d.fold_spec.p},
            },
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class SRModel:
    """Reconstructs N aligned-at-8x frames from N unaligned snapshots.

    Inputs and outputs use the [0, 1] value scale; conversion to the
    0..255 display range happens at export and metric time.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=None):
        dtype = np.dtype(dtype) if dtype is not None else np.dtype(np.float32)
        self.cfg = cfg
        self.params = ModelParams()
        self.encoder = TokenEncoder(self.params, cfg.encoder, cfg.input_h, cfg.input_w, rng, dtype)
        self.refiner = LandmarkRefiner(self.params, cfg.refiner, cfg.encoder.d_model,
                                       self.encoder.rows, self.encoder.cols, rng, dtype)
        self.decoder = DetokenUpsampler(self.params, cfg.decoder, cfg.encoder.d_model, rng, dtype)
        self.dtype = dtype

    @property
    def out_h(self) -> int:
        return self.cfg.decoder.out_scale * self.encoder.rows

    @property
    def out_w(self) -> int:
        return self.cfg.decoder.out_scale * self.encoder.cols

    def forward(self, lr_frames: np.ndarray, capture_rlpe: list | None = None
                ) -> tuple[Tensor, list[Tensor], TokenGrid]:
        """(N, h, w, 3) snapshots in [0, 1] -> reconstructions, per-recurrence
        landmark predictions, and the refined token grid."""
        grid = self.encoder.encode(lr_frames)
        grid, landmarks = self.refiner.refine(grid, capture_rlpe=capture_rlpe)
        pred = self.decoder.decode(grid)
        return pred, landmarks, grid

    def fingerprint(self) -> str:
        return self.cfg.fingerprint()
