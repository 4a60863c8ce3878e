"""Neural building blocks on top of :mod:`slotalign.tensor`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ("name", "frozen")

    def __init__(self, data, name: str = "", frozen: bool = False):
        super().__init__(data, requires_grad=not frozen)
        self.name = name
        self.frozen = frozen

    def set_frozen(self, frozen: bool) -> None:
        self.frozen = frozen
        self.requires_grad = not frozen
        if frozen:
            self.grad = None


class Module:
    """Parameter container; attributes holding Parameters, Modules or lists of Modules are discovered."""

    def named_parameters(self, prefix: str = "", _seen: set | None = None) -> Iterator[tuple[str, Parameter]]:
        seen = set() if _seen is None else _seen
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.", seen)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = "") -> None:
        for name, p in self.named_parameters(prefix):
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_frozen(self, frozen: bool) -> None:
        for p in self.parameters():
            p.set_frozen(frozen)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = Parameter(_xavier(rng, d_in, d_out))
        self.bias = Parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, std: float | None = None):
        std = 1.0 / np.sqrt(d) if std is None else std
        self.weight = Parameter(rng.normal(0.0, std, size=(n, d)))

    def __call__(self, ids: np.ndarray) -> Tensor:
        return self.weight[np.asarray(ids)]


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int
    num_heads: int

    def __post_init__(self):
        if self.model_dim <= 0 or self.num_heads <= 0:
            raise ValueError("model_dim and num_heads must be positive")
        if self.model_dim % self.num_heads:
            raise ValueError(
                f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


class MultiHeadAttention(Module):
    """Scaled dot-product attention with learned query/key/value/output projections.

    Inputs may carry arbitrary leading batch dimensions; queries broadcast
    against keys. ``key_mask`` is a boolean array broadcastable to the
    score tensor ``[..., heads, Lq, Lk]``.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.model_dim
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.o = Linear(d, d, rng)
        self._last_weights: np.ndarray | None = None

    def split_heads(self, x: Tensor) -> Tensor:
        h, dh = self.cfg.num_heads, self.cfg.head_dim
        return x.reshape(x.shape[:-1] + (h, dh)).swapaxes(-2, -3)

    def merge_heads(self, x: Tensor) -> Tensor:
        x = x.swapaxes(-2, -3)
        return x.reshape(x.shape[:-2] + (self.cfg.model_dim,))

    def attend(self, q: Tensor, k: Tensor, v: Tensor, key_mask=None) -> Tensor:
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.cfg.head_dim))
        weights = T.softmax(scores, axis=-1, mask=key_mask)
        self._last_weights = weights.data
        return weights @ v

    def __call__(self, query: Tensor, key: Tensor, value: Tensor, key_mask=None) -> Tensor:
        if key.shape[-2] == 0:
            raise ValueError("multi-head attention over an empty key set")
        q = self.split_heads(self.q(query))
        k = self.split_heads(self.k(key))
        v = self.split_heads(self.v(value))
        return self.o(self.merge_heads(self.attend(q, k, v, key_mask)))

    @property
    def last_weights(self) -> np.ndarray | None:
        """Attention weights ``[..., heads, Lq, Lk]`` from the most recent call."""
        return self._last_weights


class FeedForward(Module):
    def __init__(self, d: int, rng: np.random.Generator, inner_mult: int = 4):
        self.inner = Linear(d, inner_mult * d, rng)
        self.outer = Linear(inner_mult * d, d, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(T.relu(self.inner(x)))


class TransformerBlock(Module):
    """Post-norm block: ``x = LN(x + MHA(x)); x = LN(x + FFN(x))``."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dropout: float = 0.0):
        self.attn = MultiHeadAttention(cfg, rng)
        self.norm1 = LayerNorm(cfg.model_dim)
        self.ffn = FeedForward(cfg.model_dim, rng)
        self.norm2 = LayerNorm(cfg.model_dim)
        self.dropout = dropout

    def __call__(self, x: Tensor, key_mask=None, rng: np.random.Generator | None = None) -> Tensor:
        a = T.dropout(self.attn(x, x, x, key_mask), self.dropout, rng)
        x = self.norm1(x + a)
        f = T.dropout(self.ffn(x), self.dropout, rng)
        return self.norm2(x + f)


# functional forms


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return T.matmul(a, b)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return T.softmax(x, axis=axis)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    return T.layer_norm(x, gain, bias, eps)


def feed_forward(x: Tensor, params: FeedForward) -> Tensor:
    return params(x)


def multi_head_attention(query: Tensor, key: Tensor, value: Tensor, cfg: AttentionConfig,
                         params: MultiHeadAttention, key_mask=None) -> Tensor:
    if params.cfg != cfg:
        raise ValueError(f"attention parameters built for {params.cfg}, called with {cfg}")
    return params(query, key, value, key_mask)
