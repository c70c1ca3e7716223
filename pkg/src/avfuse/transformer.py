"""Encoder/decoder stacks with exposed per-head attention transforms.

Every attention head keeps its row-stochastic transform matrix (the softmax
of scaled query-key products) available to callers, because the fusion stage
re-uses the final decoder block's cross-attention transforms to map
frame-rate reliability embeddings onto token positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Linear, LayerNorm, Embedding, Module
from .streams import FeatureStream
from .vocab import SOS_ID

__all__ = [
    "ModelConfig",
    "AttentionTransform",
    "attention_transform",
    "attention_apply",
    "MultiHeadAttention",
    "Encoder",
    "ReliabilityEncoder",
    "S2sDecoder",
    "CtcDecoder",
    "causal_mask",
    "positional_encoding",
]

MASK_NEG = -1e30


@dataclass
class ModelConfig:
    d_att: int = 32
    heads: int = 4
    encoder_blocks: int = 2
    decoder_blocks: int = 2
    ff_dim: int = 64
    vocab_size: int = 0
    ctc_linear_readout: bool = False

    def __post_init__(self):
        if self.d_att % self.heads != 0:
            raise ValueError(f"d_att={self.d_att} not divisible by heads={self.heads}")
        if self.encoder_blocks < 1 or self.decoder_blocks < 1:
            raise ValueError("need at least one block per stack")
        if self.vocab_size < 4:
            raise ValueError("vocab must hold blank/sos/eos plus at least one unit")

    @property
    def d_k(self) -> int:
        return self.d_att // self.heads


@dataclass
class AttentionTransform:
    matrix: Tensor  # (N_Q, N_K), rows sum to 1
    head: int
    block: int


def attention_transform(q: Tensor, k: Tensor, wq: Linear, wk: Linear,
                        mask: np.ndarray | None = None) -> Tensor:
    """Row-stochastic relevance of each key to each query: softmax over keys
    of (q Wq)(k Wk)^T / sqrt(d_k). ``mask`` is added to the logits."""
    if q.shape[1] != wq.weight.shape[0] or k.shape[1] != wk.weight.shape[0]:
        raise ValueError(
            f"projection mismatch: q {q.shape} for Wq {wq.weight.shape}, "
            f"k {k.shape} for Wk {wk.weight.shape}"
        )
    d_k = wq.weight.shape[1]
    logits = (wq(q) @ wk(k).T) * (1.0 / np.sqrt(d_k))
    if mask is not None:
        logits = logits + Tensor(mask)
    return ad.softmax(logits, axis=-1)


def attention_apply(transform: Tensor, v: Tensor, wv: Linear) -> Tensor:
    """Mix projected values by the transform rows: alpha = T (v Wv)."""
    if transform.shape[1] != v.shape[0]:
        raise ValueError(f"transform {transform.shape} cannot mix {v.shape[0]} values")
    return transform @ wv(v)


class MultiHeadAttention(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.wq = [Linear(cfg.d_att, cfg.d_k, rng, bias=False) for _ in range(cfg.heads)]
        self.wk = [Linear(cfg.d_att, cfg.d_k, rng, bias=False) for _ in range(cfg.heads)]
        self.wv = [Linear(cfg.d_att, cfg.d_k, rng, bias=False) for _ in range(cfg.heads)]
        self.wo = Linear(cfg.d_att, cfg.d_att, rng)
        self.heads = cfg.heads

    def __call__(self, q: Tensor, k: Tensor, v: Tensor,
                 mask: np.ndarray | None = None,
                 block: int = 0) -> tuple[Tensor, list[AttentionTransform]]:
        outs, transforms = [], []
        for j in range(self.heads):
            t = attention_transform(q, k, self.wq[j], self.wk[j], mask)
            outs.append(attention_apply(t, v, self.wv[j]))
            transforms.append(AttentionTransform(t, head=j, block=block))
        return self.wo(ad.concat(outs, axis=1)), transforms


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Interleaved sine/cosine position table."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (i // 2)) / dim)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe


def causal_mask(n: int) -> np.ndarray:
    """Additive mask: position t may not look at positions > t."""
    return np.triu(np.full((n, n), MASK_NEG), k=1)


class FeedForward(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.inner = Linear(cfg.d_att, cfg.ff_dim, rng)
        self.outer = Linear(cfg.ff_dim, cfg.d_att, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(ad.relu(self.inner(x)))


class EncoderBlock(Module):
    """Pre-norm residual block; keeps gradients usable at batch size 1."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.attn = MultiHeadAttention(cfg, rng)
        self.norm1 = LayerNorm(cfg.d_att)
        self.ff = FeedForward(cfg, rng)
        self.norm2 = LayerNorm(cfg.d_att)

    def __call__(self, x: Tensor, block: int = 0) -> tuple[Tensor, list[AttentionTransform]]:
        h = self.norm1(x)
        attn_out, transforms = self.attn(h, h, h, block=block)
        x = x + attn_out
        x = x + self.ff(self.norm2(x))
        return x, transforms


class SubsampleBlock(Module):
    """Two stride-2 pair-concat projections: length ⌊N/4⌋, width d_att."""

    def __init__(self, d_in: int, d_att: int, rng: np.random.Generator):
        self.stage1 = Linear(2 * d_in, d_att, rng)
        self.stage2 = Linear(2 * d_att, d_att, rng)

    @staticmethod
    def _halve(x: Tensor, lin: Linear) -> Tensor:
        n2 = x.shape[0] // 2
        pairs = ad.concat([x[0 : 2 * n2 : 2], x[1 : 2 * n2 : 2]], axis=1)
        return ad.relu(lin(pairs))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[0] < 4:
            raise ValueError(f"need at least 4 frames to subsample, got {x.shape[0]}")
        return self._halve(self._halve(x, self.stage1), self.stage2)


class Encoder(Module):
    """Subsampling block, positional encoding, then self-attention blocks."""

    def __init__(self, d_in: int, cfg: ModelConfig, rng: np.random.Generator):
        self.subsample = SubsampleBlock(d_in, cfg.d_att, rng)
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.encoder_blocks)]
        self.final_norm = LayerNorm(cfg.d_att)
        self.cfg_d_att = cfg.d_att

    def __call__(self, stream: FeatureStream | np.ndarray,
                 collect_transforms: list | None = None) -> Tensor:
        frames = stream.frames if isinstance(stream, FeatureStream) else stream
        x = self.subsample(Tensor(np.asarray(frames, dtype=np.float64)))
        x = x + Tensor(positional_encoding(x.shape[0], self.cfg_d_att))
        for b, block in enumerate(self.blocks):
            x, transforms = block(x, block=b)
            if collect_transforms is not None:
                collect_transforms.extend(transforms)
        return self.final_norm(x)


class ReliabilityEncoder(Module):
    """Subsample + project only; the reliability stream carries no content
    worth attending over, so there is no self-attention stack here."""

    def __init__(self, d_in: int, cfg: ModelConfig, rng: np.random.Generator):
        self.subsample = SubsampleBlock(d_in, cfg.d_att, rng)
        self.proj = Linear(cfg.d_att, cfg.d_att, rng)

    def __call__(self, measures: np.ndarray | Tensor) -> Tensor:
        x = measures if isinstance(measures, Tensor) else Tensor(np.asarray(measures, dtype=np.float64))
        return self.proj(self.subsample(x))


class DecoderBlock(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(cfg, rng)
        self.norm1 = LayerNorm(cfg.d_att)
        self.cross_attn = MultiHeadAttention(cfg, rng)
        self.norm2 = LayerNorm(cfg.d_att)
        self.ff = FeedForward(cfg, rng)
        self.norm3 = LayerNorm(cfg.d_att)

    def __call__(self, x: Tensor, memory: Tensor, mask: np.ndarray,
                 block: int = 0) -> tuple[Tensor, list[AttentionTransform]]:
        h = self.norm1(x)
        attn_out, _ = self.self_attn(h, h, h, mask=mask, block=block)
        x = x + attn_out
        cross_out, cross_transforms = self.cross_attn(self.norm2(x), memory,
                                                      memory, block=block)
        x = x + cross_out
        x = x + self.ff(self.norm3(x))
        return x, cross_transforms


class S2sDecoder(Module):
    """Autoregressive decoder; returns next-token log-posteriors per input
    position plus the final block's cross-attention transforms."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.embed = Embedding(cfg.vocab_size, cfg.d_att, rng)
        self.blocks = [DecoderBlock(cfg, rng) for _ in range(cfg.decoder_blocks)]
        self.final_norm = LayerNorm(cfg.d_att)
        self.readout = Linear(cfg.d_att, cfg.vocab_size, rng)
        self.d_att = cfg.d_att

    def __call__(self, tokens, memory: Tensor) -> tuple[Tensor, list[AttentionTransform]]:
        tokens = list(tokens)
        if not tokens:
            raise ValueError("decoder needs at least the start token")
        if tokens[0] != SOS_ID:
            raise ValueError(f"token sequence must begin with sos, got {tokens[0]}")
        # sqrt(d) keeps token identity on the same footing as the position
        # signal; without it the embeddings drown and the decoder can only
        # learn a length prior.
        x = self.embed(tokens) * float(np.sqrt(self.d_att)) \
            + Tensor(positional_encoding(len(tokens), self.d_att))
        mask = causal_mask(len(tokens))
        final_transforms: list[AttentionTransform] = []
        for b, block in enumerate(self.blocks):
            x, cross = block(x, memory, mask, block=b)
            final_transforms = cross
        return ad.log_softmax(self.readout(self.final_norm(x)), axis=-1), final_transforms


class CtcDecoder(Module):
    """Frame-synchronous posterior grid over the vocabulary.

    Default: a stack of self-attention blocks plus readout. The linear
    readout mode skips the stack for cheap deterministic tests.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.linear_only = cfg.ctc_linear_readout
        self.blocks = [] if self.linear_only else [
            EncoderBlock(cfg, rng) for _ in range(cfg.decoder_blocks)
        ]
        self.final_norm = None if self.linear_only else LayerNorm(cfg.d_att)
        self.readout = Linear(cfg.d_att, cfg.vocab_size, rng)

    def __call__(self, memory: Tensor,
                 collect_transforms: list | None = None) -> Tensor:
        x = memory
        for b, block in enumerate(self.blocks):
            x, transforms = block(x, block=b)
            if collect_transforms is not None:
                collect_transforms.extend(transforms)
        if self.final_norm is not None:
            x = self.final_norm(x)
        return ad.log_softmax(self.readout(x), axis=-1)
