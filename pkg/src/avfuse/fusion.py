"""Decision fusion of the two streams.

The main path feeds per-frame (CTC) or per-token (sequence) log-posteriors
from both single-modality models, together with reliability embeddings, into
small fusion networks that output the fused log-posterior directly. Token-
level fusion first maps frame-rate reliability embeddings onto token
positions by re-using the final decoder block's cross-attention transforms.

Baselines: sigmoid stream weighting driven by the same reliability rows, and
plain encoder-output concatenation feeding a shared decoder pair.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import CounterRng, Tensor
from .nn import Blstm, FcBlock, Linear, Module
from .transformer import AttentionTransform, ModelConfig

__all__ = [
    "TokenReliabilityAligner",
    "DfnCtc",
    "DfnS2s",
    "WeightNet",
    "stream_weight_fuse",
    "ConcatFusion",
]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class TokenReliabilityAligner(Module):
    """Map a frame-rate reliability embedding onto token positions.

    Per head j, the token view is T_j (W_j xi^T)^T: each token row becomes
    the transform-weighted mix of per-frame projected reliability rows. The
    h head views are concatenated and projected back to d_att.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.w_xi = [Linear(cfg.d_att, cfg.d_k, rng, bias=False) for _ in range(cfg.heads)]
        self.proj = Linear(cfg.d_att, cfg.d_att, rng)
        self.heads = cfg.heads

    def __call__(self, xi: Tensor, transforms: list[AttentionTransform]) -> Tensor:
        if len(transforms) != self.heads:
            raise ValueError(f"expected {self.heads} transforms, got {len(transforms)}")
        views = []
        for j, t in enumerate(transforms):
            m = t.matrix if isinstance(t, AttentionTransform) else t
            if m.shape[1] != xi.shape[0]:
                raise ValueError(
                    f"transform mixes {m.shape[1]} frames but embedding has {xi.shape[0]}"
                )
            views.append(m @ self.w_xi[j](xi))
        return self.proj(ad.concat(views, axis=1))


class DfnCtc(Module):
    """Frame-level fusion net: 3 FC blocks, 3 tanh BLSTM layers, readout.

    Input rows are [p_ctc_audio; p_ctc_video; xi_audio; xi_video], with the
    posterior blocks exponentiated to probabilities: trained log-posteriors
    reach -30 on their floor, which would dominate the bounded reliability
    columns. Widths are construction parameters; the full-scale preset is
    (8192, 4096, 512) with 512 BLSTM cells, desk scale defaults to
    (512, 256, 64) with 64 cells.
    """

    DESK_WIDTHS = (512, 256, 64)
    DESK_BLSTM = 64
    FULL_WIDTHS = (8192, 4096, 512)
    FULL_BLSTM = 512

    def __init__(self, vocab_size: int, d_att: int, rng: np.random.Generator,
                 widths: tuple[int, int, int] = DESK_WIDTHS,
                 blstm_units: int = DESK_BLSTM,
                 drop_rate: float = 0.15):
        d_in = 2 * vocab_size + 2 * d_att
        w1, w2, w3 = widths
        self.fc1 = FcBlock(d_in, w1, rng, drop_rate)
        self.fc2 = FcBlock(w1, w2, rng, drop_rate)
        self.fc3 = FcBlock(w2, w3, rng, drop_rate)
        self.rnn1 = Blstm(w3, blstm_units, rng)
        self.rnn2 = Blstm(2 * blstm_units, blstm_units, rng)
        self.rnn3 = Blstm(2 * blstm_units, blstm_units, rng)
        self.readout = Linear(2 * blstm_units, vocab_size, rng)

    def __call__(self, p_a, p_v, xi_a, xi_v, rng: CounterRng | None = None) -> Tensor:
        p_a, p_v, xi_a, xi_v = map(_as_tensor, (p_a, p_v, xi_a, xi_v))
        lengths = {p_a.shape[0], p_v.shape[0], xi_a.shape[0], xi_v.shape[0]}
        if len(lengths) != 1:
            raise ValueError(
                "all fusion inputs must share the subsampled frame count "
                f"(N_F/4); got lengths {sorted(lengths)}"
            )
        x = ad.concat([ad.exp(p_a), ad.exp(p_v), xi_a, xi_v], axis=1)
        x = self.fc3(self.fc2(self.fc1(x, rng), rng), rng)
        x = ad.tanh(self.rnn1(x))
        x = ad.tanh(self.rnn2(x))
        x = ad.tanh(self.rnn3(x))
        return ad.log_softmax(self.readout(x), axis=-1)


class DfnS2s(Module):
    """Token-level fusion net: purely feed-forward, so each output row is a
    function of its own input row only. Posterior inputs are exponentiated
    to probabilities for the same scale reason as the frame-level net."""

    DESK_WIDTHS = (512, 256, 64)

    def __init__(self, vocab_size: int, d_att: int, rng: np.random.Generator,
                 widths: tuple[int, int, int] = DESK_WIDTHS,
                 drop_rate: float = 0.15):
        d_in = 2 * vocab_size + 2 * d_att
        w1, w2, w3 = widths
        self.fc1 = FcBlock(d_in, w1, rng, drop_rate)
        self.fc2 = FcBlock(w1, w2, rng, drop_rate)
        self.fc3 = FcBlock(w2, w3, rng, drop_rate)
        self.readout = Linear(w3, vocab_size, rng)

    def __call__(self, p_a, p_v, xi_a, xi_v, rng: CounterRng | None = None) -> Tensor:
        p_a, p_v, xi_a, xi_v = map(_as_tensor, (p_a, p_v, xi_a, xi_v))
        lengths = {p_a.shape[0], p_v.shape[0], xi_a.shape[0], xi_v.shape[0]}
        if len(lengths) != 1:
            raise ValueError(f"all token-level inputs must share N_T; got {sorted(lengths)}")
        x = ad.concat([ad.exp(p_a), ad.exp(p_v), xi_a, xi_v], axis=1)
        x = self.fc3(self.fc2(self.fc1(x, rng), rng), rng)
        return ad.log_softmax(self.readout(x), axis=-1)


class WeightNet(Module):
    """Reliability row -> stream weight in (0, 1), two ReLU hidden layers."""

    def __init__(self, d_in: int, rng: np.random.Generator,
                 hidden: tuple[int, int] = (128, 64)):
        self.h1 = Linear(d_in, hidden[0], rng)
        self.h2 = Linear(hidden[0], hidden[1], rng)
        self.out = Linear(hidden[1], 1, rng)

    def __call__(self, rows) -> Tensor:
        x = _as_tensor(rows)
        return ad.sigmoid(self.out(ad.relu(self.h2(ad.relu(self.h1(x))))))


def stream_weight_fuse(logp_a, logp_v, w_a, w_v) -> Tensor:
    """Per-row weighted sum of the two log-posteriors, renormalized so each
    row is a log-distribution again."""
    logp_a, logp_v = _as_tensor(logp_a), _as_tensor(logp_v)
    w_a, w_v = _as_tensor(w_a), _as_tensor(w_v)
    if logp_a.shape != logp_v.shape:
        raise ValueError(f"posterior shapes differ: {logp_a.shape} vs {logp_v.shape}")
    fused = w_a * logp_a + w_v * logp_v
    return ad.log_softmax(fused, axis=-1)


class ConcatFusion(Module):
    """Early fusion baseline: frame-wise concatenation of the two encoder
    outputs projected back to d_att, feeding one shared decoder pair."""

    def __init__(self, d_att: int, rng: np.random.Generator):
        self.proj = Linear(2 * d_att, d_att, rng)

    def __call__(self, h_a: Tensor, h_v: Tensor) -> Tensor:
        if h_a.shape[0] != h_v.shape[0]:
            raise ValueError(f"encoder lengths differ: {h_a.shape[0]} vs {h_v.shape[0]}")
        return self.proj(ad.concat([h_a, h_v], axis=1))
