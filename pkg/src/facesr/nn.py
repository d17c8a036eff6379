"""Parameter registry and the small set of trainable layers."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError, UsageError
from .tensor import Tensor


class ModelParams:
    """Ordered name -> Tensor registry of all learnable weights.

    The registry is the unit of checkpointing, optimizer-state pairing
    and cloning; insertion order is the canonical serialization order.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, value: np.ndarray, dtype=None) -> Tensor:
        if name in self._params:
            raise UsageError(f"duplicate parameter name: {name}")
        t = Tensor(value, requires_grad=True, dtype=dtype or T.DEFAULT_DTYPE)
        self._params[name] = t
        return t

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def clone_data(self) -> dict[str, np.ndarray]:
        """Detached copies of all parameter arrays (immutable snapshot)."""
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_data(self, arrays: dict[str, np.ndarray]):
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise ShapeError(f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, t in self._params.items():
            a = arrays[k]
            if tuple(a.shape) != t.shape:
                raise ShapeError(f"parameter {k}: shape {tuple(a.shape)} != expected {t.shape}")
            t.data[...] = a


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Affine map on the last axis."""

    def __init__(self, params: ModelParams, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, dtype=None, bias: bool = True):
        self.w = params.register(f"{name}.w", _uniform_init(rng, d_in, (d_in, d_out)), dtype)
        self.b = params.register(f"{name}.b", np.zeros(d_out), dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.w)
        if self.b is not None:
            y = T.add(y, self.b)
        return y


class LayerNorm:
    def __init__(self, params: ModelParams, name: str, d: int, dtype=None):
        self.gain = params.register(f"{name}.gain", np.ones(d), dtype)
        self.bias = params.register(f"{name}.bias", np.zeros(d), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class MultiHeadAttention:
    """Scaled dot-product self-attention over all tokens jointly."""

    def __init__(self, params: ModelParams, name: str, d_model: int, n_heads: int,
                 rng: np.random.Generator, dtype=None):
        if d_model % n_heads != 0:
            raise ConfigError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(params, f"{name}.wq", d_model, d_model, rng, dtype)
        self.wk = Linear(params, f"{name}.wk", d_model, d_model, rng, dtype)
        self.wv = Linear(params, f"{name}.wv", d_model, d_model, rng, dtype)
        self.wo = Linear(params, f"{name}.wo", d_model, d_model, rng, dtype)

    def _split_heads(self, x: Tensor, n: int) -> Tensor:
        x = T.reshape(x, (n, self.n_heads, self.d_head))
        return T.transpose(x, (1, 0, 2))

    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        # Scale q instead of the L x L score matrix; same math, smaller array.
        q = T.mul(self._split_heads(self.wq(x), n), 1.0 / np.sqrt(self.d_head))
        k = self._split_heads(self.wk(x), n)
        v = self._split_heads(self.wv(x), n)
        attn = T.softmax(T.matmul(q, T.transpose(k, (0, 2, 1))), axis=-1)
        out = T.matmul(attn, v)
        out = T.reshape(T.transpose(out, (1, 0, 2)), (n, self.d_model))
        return self.wo(out)


class TransformerLayer:
    """Pre-norm block: x + MHA(LN(x)), then x + FFN(LN(x)) with GELU."""

    def __init__(self, params: ModelParams, name: str, d_model: int, n_heads: int,
                 ffn_ratio: int, rng: np.random.Generator, dtype=None):
        self.ln1 = LayerNorm(params, f"{name}.ln1", d_model, dtype)
        self.attn = MultiHeadAttention(params, f"{name}.attn", d_model, n_heads, rng, dtype)
        self.ln2 = LayerNorm(params, f"{name}.ln2", d_model, dtype)
        hidden = d_model * ffn_ratio
        self.ffn1 = Linear(params, f"{name}.ffn1", d_model, hidden, rng, dtype)
        self.ffn2 = Linear(params, f"{name}.ffn2", hidden, d_model, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = T.add(x, self.attn(self.ln1(x)))
        return T.add(x, self.ffn2(T.gelu(self.ffn1(self.ln2(x)))))
