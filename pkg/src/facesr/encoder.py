"""Token-to-token encoder.

Each iteration restructures the current tokens into per-snapshot
feature images, re-splits them into overlapped patches, projects to
the model width and runs a transformer layer over the tokens of all
snapshots jointly, so attention aggregates across space and time at
once. The grid never shrinks: every iteration must preserve the
(rows, cols) token lattice. Outputs of all iterations are stacked on
the channel axis and projected back to the model width.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Linear, ModelParams, TransformerLayer
from .tensor import Tensor
from .vision import PatchSpec, token_count, unfold


@dataclass
class TokenGrid:
    """Tokens of a clip plus their lattice layout.

    Token order is snapshot-major, then row-major within a snapshot:
    L = n_snapshots * rows * cols.
    """

    tokens: Tensor
    n_snapshots: int
    rows: int
    cols: int

    def __post_init__(self):
        l = self.n_snapshots * self.rows * self.cols
        if self.tokens.shape[0] != l:
            raise ShapeError(
                f"token grid claims {l} tokens, tensor has {self.tokens.shape[0]}"
            )

    @property
    def per_snapshot(self) -> int:
        return self.rows * self.cols

    def snapshot_tokens(self, n: int) -> Tensor:
        l = self.per_snapshot
        return self.tokens[n * l:(n + 1) * l]

    def positions(self) -> np.ndarray:
        """Patch-center (x, y) per token of one snapshot, normalized to [0, 1]."""
        r = (np.arange(self.rows) + 0.5) / self.rows
        c = (np.arange(self.cols) + 0.5) / self.cols
        yy, xx = np.meshgrid(r, c, indexing="ij")
        return np.stack([xx.reshape(-1), yy.reshape(-1)], axis=1)


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    n_heads: int = 4
    n_iters: int = 2
    depth: int = 1
    ffn_ratio: int = 2
    patch: PatchSpec = field(default_factory=lambda: PatchSpec(3, 1, 1))

    def __post_init__(self):
        if self.d_model % 4 != 0:
            raise ConfigError(f"d_model={self.d_model} must be divisible by 4")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.n_iters < 1 or self.depth < 1:
            raise ConfigError("n_iters and depth must be >= 1")


@lru_cache(maxsize=16)
def spatial_pos_encoding(rows: int, cols: int, d_model: int) -> np.ndarray:
    """2-D sinusoidal position table, (rows*cols, d_model).

    Half the channels encode the row index, half the column index;
    snapshots share the same table (their order carries no signal).
    """
    if d_model % 4 != 0:
        raise ConfigError(f"position encoding needs d_model divisible by 4, got {d_model}")
    half = d_model // 2
    n_freq = half // 2
    inv_freq = 1.0 / (10000.0 ** (np.arange(n_freq) / n_freq))
    out = np.zeros((rows * cols, d_model))
    rr = np.repeat(np.arange(rows), cols)
    cc = np.tile(np.arange(cols), rows)
    for base, pos in ((0, rr), (half, cc)):
        ang = pos[:, None] * inv_freq[None, :]
        out[:, base:base + half:2] = np.sin(ang)
        out[:, base + 1:base + half:2] = np.cos(ang)
    out.setflags(write=False)
    return out


class TokenEncoder:
    def __init__(self, params: ModelParams, cfg: EncoderConfig, h: int, w: int,
                 rng: np.random.Generator, dtype=None, name: str = "encoder"):
        self.cfg = cfg
        self.h, self.w = h, w
        self.rows, self.cols, _ = token_count(h, w, cfg.patch)
        r2, c2, _ = token_count(self.rows, self.cols, cfg.patch)
        if (r2, c2) != (self.rows, self.cols):
            raise ConfigError(
                f"patch spec {cfg.patch} changes the token grid "
                f"{(self.rows, self.cols)} -> {(r2, c2)}; encoder iterations must preserve it"
            )
        k2 = cfg.patch.k * cfg.patch.k
        self.projs = []
        self.layers = []
        for i in range(cfg.n_iters):
            d_in = (3 if i == 0 else cfg.d_model) * k2
            self.projs.append(Linear(params, f"{name}.iter{i}.proj", d_in, cfg.d_model, rng, dtype))
            self.layers.append([
                TransformerLayer(params, f"{name}.iter{i}.layer{j}", cfg.d_model,
                                 cfg.n_heads, cfg.ffn_ratio, rng, dtype)
                for j in range(cfg.depth)
            ])
        self.stack_proj = Linear(params, f"{name}.stack_proj",
                                 cfg.n_iters * cfg.d_model, cfg.d_model, rng, dtype)
        self.dtype = dtype

    def encode(self, snapshots: np.ndarray) -> TokenGrid:
        """Encode N same-sized snapshots (N, h, w, 3) into a token grid."""
        if snapshots.ndim != 4 or snapshots.shape[1:] != (self.h, self.w, 3):
            raise ShapeError(
                f"expected snapshots of shape (N, {self.h}, {self.w}, 3), got {snapshots.shape}"
            )
        n = snapshots.shape[0]
        cfg = self.cfg
        pos = spatial_pos_encoding(self.rows, self.cols, cfg.d_model)
        pos_all = Tensor(np.tile(pos, (n, 1)), dtype=self.dtype)
        images = T.as_tensor(np.asarray(snapshots, dtype=self.dtype or np.float32))
        iteration_tokens = []
        for i in range(cfg.n_iters):
            per_snap = [unfold(images[j], cfg.patch) for j in range(n)]
            tokens = T.concat(per_snap, axis=0)
            tokens = self.projs[i](tokens)
            if i == 0:
                tokens = T.add(tokens, pos_all)
            for layer in self.layers[i]:
                tokens = layer(tokens)
            iteration_tokens.append(tokens)
            images = T.reshape(tokens, (n, self.rows, self.cols, cfg.d_model))
        stacked = iteration_tokens[0] if cfg.n_iters == 1 else T.concat(iteration_tokens, axis=1)
        out = self.stack_proj(stacked)
        return TokenGrid(out, n, self.rows, self.cols)
