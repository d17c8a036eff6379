"""Recurrent landmark refiner.

A small head predicts 5 facial landmarks per snapshot from that
snapshot's tokens. The landmarks are turned into a per-token distance
field (L1-normalized Euclidean distances to the 5 points), concatenated
onto the tokens, projected back to the model width and passed through a
transformer layer. The loop repeats with shared weights so landmark
estimates and token features improve together; every intermediate
landmark set is returned for supervision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import Linear, ModelParams, TransformerLayer
from .encoder import TokenGrid
from .tensor import Tensor

N_LANDMARKS = 5
DEGENERATE_L1 = 1e-8


@dataclass(frozen=True)
class RefinerConfig:
    d_small: int = 8
    mlp_hidden: int = 128
    recurrences: int = 2
    n_heads: int = 4
    ffn_ratio: int = 2

    def __post_init__(self):
        if self.recurrences < 1:
            raise ConfigError(f"recurrences must be >= 1, got {self.recurrences}")
        if self.d_small < 1 or self.mlp_hidden < 1:
            raise ConfigError("d_small and mlp_hidden must be >= 1")


def landmark_distance_field(positions: np.ndarray, landmarks: Tensor) -> Tensor:
    """Per-token L1-normalized distances to the 5 landmarks.

    positions: (l, 2) constant token centers, same normalized frame as
    the landmarks. Entry j is zero exactly when the token sits on
    landmark j; a vector whose raw L1 norm is below 1e-8 falls back to
    the uniform 0.2 split.
    """
    pos = Tensor(positions[:, None, :], dtype=landmarks.dtype)      # (l, 1, 2)
    lm = T.reshape(landmarks, (1, N_LANDMARKS, 2))
    diff = T.sub(pos, lm)
    dist = T.sqrt(T.sum_(T.mul(diff, diff), axis=-1))               # (l, 5)
    l1 = T.sum_(dist, axis=-1, keepdims=True)
    degenerate = (l1.data < DEGENERATE_L1).astype(l1.dtype)
    keep = 1.0 - degenerate
    safe = T.add(l1, Tensor(degenerate, dtype=l1.dtype))
    normalized = T.div(dist, safe)
    uniform = Tensor(np.full((1, N_LANDMARKS), 1.0 / N_LANDMARKS), dtype=l1.dtype)
    return T.add(T.mul(normalized, Tensor(keep, dtype=l1.dtype)),
                 T.mul(uniform, Tensor(degenerate, dtype=l1.dtype)))


class LandmarkRefiner:
    def __init__(self, params: ModelParams, cfg: RefinerConfig, d_model: int,
                 rows: int, cols: int, rng: np.random.Generator, dtype=None,
                 name: str = "refiner"):
        self.cfg = cfg
        self.d_model = d_model
        l = rows * cols
        self.token_proj = Linear(params, f"{name}.token_proj", d_model, cfg.d_small, rng, dtype)
        self.mlp = Linear(params, f"{name}.mlp", l * cfg.d_small, cfg.mlp_hidden, rng, dtype)
        self.head = Linear(params, f"{name}.head", cfg.mlp_hidden, 2 * N_LANDMARKS, rng, dtype)
        self.mix_proj = Linear(params, f"{name}.mix_proj", d_model + N_LANDMARKS, d_model, rng, dtype)
        self.layer = TransformerLayer(params, f"{name}.layer", d_model,
                                      cfg.n_heads, cfg.ffn_ratio, rng, dtype)

    def predict_landmarks(self, snapshot_tokens: Tensor) -> Tensor:
        """(l, d_model) tokens of one snapshot -> (5, 2) points in [0, 1]."""
        x = self.token_proj(snapshot_tokens)
        x = T.reshape(x, (1, x.size))
        x = T.gelu(self.mlp(x))
        x = T.sigmoid(self.head(x))
        return T.reshape(x, (N_LANDMARKS, 2))

    def refine(self, grid: TokenGrid, capture_rlpe: list | None = None
               ) -> tuple[TokenGrid, list[Tensor]]:
        """Run the recurrent loop; returns the refined grid and one
        (N, 5, 2) landmark tensor per recurrence."""
        positions = grid.positions()
        tokens = grid.tokens
        n, l = grid.n_snapshots, grid.per_snapshot
        landmark_history: list[Tensor] = []
        for _ in range(self.cfg.recurrences):
            lms = []
            fields = []
            for j in range(n):
                lm = self.predict_landmarks(tokens[j * l:(j + 1) * l])
                lms.append(lm)
                field = landmark_distance_field(positions, lm)
                if capture_rlpe is not None:
                    capture_rlpe.append(field.data.copy())
                fields.append(field)
            landmark_history.append(T.stack(lms, axis=0))
            rlpe = T.concat(fields, axis=0)                          # (L, 5)
            tokens = self.mix_proj(T.concat([tokens, rlpe], axis=1))
            tokens = self.layer(tokens)
        return TokenGrid(tokens, n, grid.rows, grid.cols), landmark_history
