"""Detoken upsampling decoder.

A feed-forward-free multi-head attention block dilates every token to
d_out * k * k channels (the attention output is added to the projected
value stream rather than re-projected), and an overlapped fold turns
each snapshot's dilated tokens into an 8x-resolution feature map. A
per-pixel linear map then produces RGB. No output activation: the
training loss handles unbounded values and export clamps to 0..255.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Linear, ModelParams, _uniform_init
from .encoder import TokenGrid
from .tensor import Tensor
from .vision import PatchSpec, fold, token_count


@dataclass(frozen=True)
class DeuConfig:
    d_q: int = 32
    d_k: int = 32
    d_v: int = 256
    n_heads: int = 4
    d_out: int = 4
    fold_spec: PatchSpec = field(default_factory=lambda: PatchSpec(16, 8, 4))
    out_scale: int = 8

    def __post_init__(self):
        if self.d_q != self.d_k:
            raise ConfigError(f"d_q={self.d_q} must equal d_k={self.d_k}")
        k2 = self.fold_spec.k * self.fold_spec.k
        if self.n_heads * self.d_v != self.d_out * k2:
            raise ConfigError(
                f"token dilation arithmetic violated: n_heads*d_v = "
                f"{self.n_heads}*{self.d_v} = {self.n_heads * self.d_v} "
                f"!= d_out*k^2 = {self.d_out}*{k2} = {self.d_out * k2}"
            )
        if self.fold_spec.s != self.out_scale:
            raise ConfigError(
                f"fold stride {self.fold_spec.s} must equal the upscale factor {self.out_scale}"
            )
        if self.fold_spec.k != self.fold_spec.s + 2 * self.fold_spec.p:
            raise ConfigError(
                f"fold geometry k={self.fold_spec.k} must equal s+2p="
                f"{self.fold_spec.s + 2 * self.fold_spec.p} so the canvas is exactly "
                f"{self.out_scale}x the token grid"
            )


class DetokenUpsampler:
    def __init__(self, params: ModelParams, cfg: DeuConfig, d_model: int,
                 rng: np.random.Generator, dtype=None, name: str = "decoder"):
        self.cfg = cfg
        self.d_model = d_model
        h = cfg.n_heads
        self.wq = params.register(f"{name}.wq", _uniform_init(rng, d_model, (d_model, h * cfg.d_q)), dtype)
        self.wk = params.register(f"{name}.wk", _uniform_init(rng, d_model, (d_model, h * cfg.d_k)), dtype)
        self.wv = params.register(f"{name}.wv", _uniform_init(rng, d_model, (d_model, h * cfg.d_v)), dtype)
        self.out_mlp = Linear(params, f"{name}.out_mlp", cfg.d_out, 3, rng, dtype)

    def detoken_attention(self, tokens: Tensor) -> Tensor:
        """Dilate (L, d_model) tokens to (L, n_heads * d_v).

        Per head: softmax(Q K^T / sqrt(d_k)) V; the concatenated head
        outputs are added to the concatenated value projections. There
        is no feed-forward layer, keeping the receptive field global.
        """
        cfg = self.cfg
        n = tokens.shape[0]
        h = cfg.n_heads

        def heads(x: Tensor, d: int) -> Tensor:
            return T.transpose(T.reshape(x, (n, h, d)), (1, 0, 2))

        q = T.mul(heads(T.matmul(tokens, self.wq), cfg.d_q), 1.0 / np.sqrt(cfg.d_k))
        k = heads(T.matmul(tokens, self.wk), cfg.d_k)
        values = T.matmul(tokens, self.wv)                       # (L, h*d_v)
        v = heads(values, cfg.d_v)
        attn = T.softmax(T.matmul(q, T.transpose(k, (0, 2, 1))), axis=-1)
        out = T.matmul(attn, v)                                  # (h, L, d_v)
        out = T.reshape(T.transpose(out, (1, 0, 2)), (n, h * cfg.d_v))
        return T.add(out, values)

    def tokens_to_image(self, snapshot_tokens: Tensor, rows: int, cols: int) -> Tensor:
        """Fold one snapshot's dilated tokens into an upscaled feature map."""
        cfg = self.cfg
        out_h, out_w = cfg.out_scale * rows, cfg.out_scale * cols
        fr, fc, fl = token_count(out_h, out_w, cfg.fold_spec)
        if (fr, fc) != (rows, cols):
            raise ShapeError(
                f"fold grid {(fr, fc)} does not match the {rows}x{cols} token grid"
            )
        if snapshot_tokens.shape[0] != fl:
            raise ShapeError(
                f"got {snapshot_tokens.shape[0]} tokens, fold geometry implies {fl}"
            )
        return fold(snapshot_tokens, out_h, out_w, cfg.fold_spec, normalize=True)

    def decode(self, grid: TokenGrid) -> Tensor:
        """TokenGrid -> (N, out_scale*h, out_scale*w, 3) reconstructions."""
        cfg = self.cfg
        dilated = self.detoken_attention(grid.tokens)
        l = grid.per_snapshot
        out_h = cfg.out_scale * grid.rows
        out_w = cfg.out_scale * grid.cols
        frames = []
        for j in range(grid.n_snapshots):
            fmap = self.tokens_to_image(dilated[j * l:(j + 1) * l], grid.rows, grid.cols)
            rgb = self.out_mlp(T.reshape(fmap, (out_h * out_w, cfg.d_out)))
            frames.append(T.reshape(rgb, (out_h, out_w, 3)))
        return T.stack(frames, axis=0)
