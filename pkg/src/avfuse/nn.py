"""Layers built on the autodiff tape: Linear, LayerNorm, Embedding, LSTM.

Modules hold parameters as ``Tensor`` attributes (or lists of sub-modules).
Parameter traversal is sorted by attribute name so checkpoint order, optimizer
order, and gradient-check order are all reproducible.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["Module", "Linear", "LayerNorm", "Embedding", "LstmLayer", "Blstm", "FcBlock"]


class Module:
    def named_parameters(self, prefix: str = ""):
        """Yield (dotted_name, tensor) pairs in sorted-attribute order."""
        for attr in sorted(vars(self)):
            val = vars(self)[attr]
            path = f"{prefix}{attr}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield path, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{path}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{path}.{i}", item

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def set_requires_grad(self, flag: bool):
        for p in _all_tensors(self):
            p.requires_grad = flag

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in _all_named_tensors(self)}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        own = dict(_all_named_tensors(self))
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = arrays[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.astype(np.float64, copy=True)


def _all_named_tensors(mod: Module, prefix: str = ""):
    """Like named_parameters but includes frozen tensors, for checkpointing."""
    for attr in sorted(vars(mod)):
        val = vars(mod)[attr]
        path = f"{prefix}{attr}"
        if isinstance(val, Tensor):
            yield path, val
        elif isinstance(val, Module):
            yield from _all_named_tensors(val, f"{path}.")
        elif isinstance(val, (list, tuple)):
            for i, item in enumerate(val):
                if isinstance(item, Module):
                    yield from _all_named_tensors(item, f"{path}.{i}.")
                elif isinstance(item, Tensor):
                    yield f"{path}.{i}", item


def _all_tensors(mod: Module):
    return [t for _, t in _all_named_tensors(mod)]


def glorot(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = ad.parameter(glorot(rng, d_in, d_out))
        self.bias = ad.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    """Normalize over the last axis, then scale and shift."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = ad.parameter(np.ones(dim))
        self.beta = ad.parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        inv = (var + self.eps) ** -0.5
        return centered * inv * self.gamma + self.beta


class Embedding(Module):
    def __init__(self, n_tokens: int, dim: int, rng: np.random.Generator):
        # dim**-0.5 so a sqrt(dim)-scaled lookup has unit variance, comparable
        # to a sinusoidal position signal added on top of it.
        self.table = ad.parameter(rng.normal(scale=dim ** -0.5, size=(n_tokens, dim)))

    def __call__(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        return self.table[ids]


class LstmLayer(Module):
    """Single-direction LSTM over a (T, d_in) sequence.

    Gate layout along the 4H axis is [input, forget, cell, output]; the
    forget-gate bias starts at 1 so early training does not wipe state.
    """

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.w_x = ad.parameter(glorot(rng, d_in, 4 * d_hidden))
        self.w_h = ad.parameter(glorot(rng, d_hidden, 4 * d_hidden))
        b = np.zeros(4 * d_hidden)
        b[d_hidden : 2 * d_hidden] = 1.0
        self.b = ad.parameter(b)
        self.d_hidden = d_hidden

    def __call__(self, x: Tensor, reverse: bool = False) -> Tensor:
        T = x.shape[0]
        H = self.d_hidden
        h = Tensor(np.zeros((1, H)))
        c = Tensor(np.zeros((1, H)))
        order = range(T - 1, -1, -1) if reverse else range(T)
        outs: list[Tensor | None] = [None] * T
        for t in order:
            gates = x[t : t + 1] @ self.w_x + h @ self.w_h + self.b
            i = ad.sigmoid(gates[:, 0 * H : 1 * H])
            f = ad.sigmoid(gates[:, 1 * H : 2 * H])
            g = ad.tanh(gates[:, 2 * H : 3 * H])
            o = ad.sigmoid(gates[:, 3 * H : 4 * H])
            c = f * c + i * g
            h = o * ad.tanh(c)
            outs[t] = h
        return ad.concat(outs, axis=0)


class Blstm(Module):
    """Bidirectional LSTM; output is (T, 2*d_hidden), forward half first."""

    def __init__(self, d_in: int, d_hidden: int, rng: np.random.Generator):
        self.fwd = LstmLayer(d_in, d_hidden, rng)
        self.bwd = LstmLayer(d_in, d_hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.concat([self.fwd(x), self.bwd(x, reverse=True)], axis=1)


class FcBlock(Module):
    """Linear -> LayerNorm -> ReLU -> Dropout, the repeated fusion-net block."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, drop_rate: float = 0.15):
        self.fc = Linear(d_in, d_out, rng)
        self.norm = LayerNorm(d_out)
        self.drop_rate = drop_rate

    def __call__(self, x: Tensor, rng: ad.CounterRng | None = None) -> Tensor:
        return ad.dropout(ad.relu(self.norm(self.fc(x))), self.drop_rate, rng)
