"""Composite two-stream recognizer: encoders, decoders, fusion, and LM.

One ``AvModel`` owns every trainable piece of the system. Checkpoints store
each piece under a stable section prefix (``encoder.audio``, ``decoder.ctc.v``,
``fusion.dfn.ctc``, ``lm``, ...), so phases can be trained in any order while
sharing one artifact. The per-utterance helpers below wire the pieces into the
five decode modes: the two single-stream systems, the early-concatenation
baseline, the reliability-weighted late fusion, and the decision fusion nets.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import CounterRng, Tensor
from .beam import Hypothesis, joint_beam_search
from .checkpoint import load_tensors, save_tensors
from .config import ConfigError, load_config, save_config
from .ctc import CtcPrefixScorer, ctc_loss
from .fusion import (
    ConcatFusion,
    DfnCtc,
    DfnS2s,
    TokenReliabilityAligner,
    WeightNet,
    stream_weight_fuse,
)
from .lm import LstmLm
from .nn import Module, _all_named_tensors
from .reliability import ReliabilityStream, assemble_reliability
from .streams import FeatureStream, bresenham_align
from .transformer import (
    CtcDecoder,
    Encoder,
    ModelConfig,
    ReliabilityEncoder,
    S2sDecoder,
)
from .vocab import EOS_ID, SOS_ID

__all__ = [
    "AvModelSpec",
    "AvModel",
    "StreamEncoding",
    "DECODE_MODES",
    "encode_streams",
    "sequence_nll",
    "ctc_grid_for_mode",
    "s2s_step_for_mode",
    "decode_utterance",
    "save_model",
    "load_model",
]

DECODE_MODES = ("ao", "vo", "av_concat", "dfn", "stream_weight")


def _parse_widths(value, n: int) -> tuple[int, ...]:
    if isinstance(value, (tuple, list)):
        widths = tuple(int(v) for v in value)
    else:
        try:
            widths = tuple(int(part) for part in str(value).split(","))
        except ValueError as exc:
            raise ConfigError(f"bad width list {value!r}") from exc
    if len(widths) != n or any(w < 1 for w in widths):
        raise ConfigError(f"expected {n} positive widths, got {value!r}")
    return widths


@dataclass
class AvModelSpec:
    """Construction-time hyperparameters; serialized next to checkpoints."""

    vocab_size: int
    audio_dim: int
    video_dim: int
    rel_audio_dim: int = 9
    rel_video_dim: int = 7
    d_att: int = 32
    heads: int = 4
    encoder_blocks: int = 1
    decoder_blocks: int = 1
    ff_dim: int = 64
    ctc_linear_readout: bool = False
    dfn_widths: tuple = DfnCtc.DESK_WIDTHS
    dfn_blstm: int = DfnCtc.DESK_BLSTM
    dfn_s2s_widths: tuple = DfnS2s.DESK_WIDTHS
    weight_hidden: tuple = (128, 64)
    lm_units: int = 64
    lm_layers: int = 1
    drop_rate: float = 0.15
    seed: int = 0

    def __post_init__(self):
        self.dfn_widths = _parse_widths(self.dfn_widths, 3)
        self.dfn_s2s_widths = _parse_widths(self.dfn_s2s_widths, 3)
        self.weight_hidden = _parse_widths(self.weight_hidden, 2)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = ",".join(str(x) for x in v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AvModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown model option(s): {', '.join(unknown)}")
        return cls(**d)


class AvModel(Module):
    # attribute -> checkpoint section prefix
    _SECTIONS = {
        "enc_a": "encoder.audio",
        "enc_v": "encoder.video",
        "rel_a": "encoder.reliability.a",
        "rel_v": "encoder.reliability.v",
        "s2s_a": "decoder.s2s.a",
        "s2s_v": "decoder.s2s.v",
        "ctc_a": "decoder.ctc.a",
        "ctc_v": "decoder.ctc.v",
        "concat": "fusion.concat",
        "s2s_av": "fusion.decoder.s2s",
        "ctc_av": "fusion.decoder.ctc",
        "align_a": "fusion.align.a",
        "align_v": "fusion.align.v",
        "dfn_ctc": "fusion.dfn.ctc",
        "dfn_s2s": "fusion.dfn.s2s",
        "weight_ctc": "fusion.weight.ctc",
        "weight_s2s": "fusion.weight.s2s",
        "lm": "lm",
    }

    def __init__(self, spec: AvModelSpec, rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(spec.seed)
        cfg = ModelConfig(
            d_att=spec.d_att,
            heads=spec.heads,
            encoder_blocks=spec.encoder_blocks,
            decoder_blocks=spec.decoder_blocks,
            ff_dim=spec.ff_dim,
            vocab_size=spec.vocab_size,
            ctc_linear_readout=spec.ctc_linear_readout,
        )
        self.spec = spec
        self.cfg = cfg
        self.enc_a = Encoder(spec.audio_dim, cfg, rng)
        self.enc_v = Encoder(spec.video_dim, cfg, rng)
        self.rel_a = ReliabilityEncoder(spec.rel_audio_dim, cfg, rng)
        self.rel_v = ReliabilityEncoder(spec.rel_video_dim, cfg, rng)
        self.s2s_a = S2sDecoder(cfg, rng)
        self.s2s_v = S2sDecoder(cfg, rng)
        self.ctc_a = CtcDecoder(cfg, rng)
        self.ctc_v = CtcDecoder(cfg, rng)
        self.concat = ConcatFusion(spec.d_att, rng)
        self.s2s_av = S2sDecoder(cfg, rng)
        self.ctc_av = CtcDecoder(cfg, rng)
        self.align_a = TokenReliabilityAligner(cfg, rng)
        self.align_v = TokenReliabilityAligner(cfg, rng)
        self.dfn_ctc = DfnCtc(spec.vocab_size, spec.d_att, rng,
                              widths=spec.dfn_widths, blstm_units=spec.dfn_blstm,
                              drop_rate=spec.drop_rate)
        self.dfn_s2s = DfnS2s(spec.vocab_size, spec.d_att, rng,
                              widths=spec.dfn_s2s_widths, drop_rate=spec.drop_rate)
        self.weight_ctc = WeightNet(spec.d_att, rng, hidden=spec.weight_hidden)
        self.weight_s2s = WeightNet(spec.d_att, rng, hidden=spec.weight_hidden)
        self.lm = LstmLm(spec.vocab_size, spec.lm_units, spec.lm_layers, rng)

    def sections(self) -> dict[str, Module]:
        return {self._SECTIONS[attr]: getattr(self, attr) for attr in self._SECTIONS}

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for section, mod in self.sections().items():
            for name, t in _all_named_tensors(mod):
                out[f"{section}.{name}"] = t.data
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        own = {}
        for section, mod in self.sections().items():
            for name, t in _all_named_tensors(mod):
                own[f"{section}.{name}"] = t
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing[:4]} unexpected={extra[:4]}")
        for name, t in own.items():
            arr = arrays[name]
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
            t.data = arr.astype(np.float64, copy=True)


def save_model(path, model: AvModel) -> None:
    """Checkpoint plus a ``<path>.cfg`` sidecar holding the construction spec."""
    save_tensors(path, model.state_arrays())
    save_config(str(path) + ".cfg", model.spec.to_dict())


def load_model(path) -> AvModel:
    spec = AvModelSpec.from_dict(load_config(str(path) + ".cfg"))
    model = AvModel(spec)
    model.load_state_arrays(load_tensors(path))
    return model


# -- per-utterance forward passes ----------------------------------------------


@dataclass
class StreamEncoding:
    """Everything frame-synchronous that decoding and fusion need. Fields a
    mode does not use stay None."""

    h_a: Tensor | None = None   # (N/4, d_att) audio encoder output
    h_v: Tensor | None = None   # (N/4, d_att) video encoder output (video pre-aligned to audio rate)
    xi_a: Tensor | None = None  # (N/4, d_att) audio reliability embedding
    xi_v: Tensor | None = None  # (N/4, d_att) video reliability embedding


_MODE_NEEDS = {
    "ao": ("h_a",),
    "vo": ("h_v",),
    "av_concat": ("h_a", "h_v"),
    "dfn": ("h_a", "h_v", "xi_a", "xi_v"),
    "stream_weight": ("h_a", "h_v", "xi_a", "xi_v"),
}


def encode_streams(model: AvModel, audio: FeatureStream, video: FeatureStream,
                   rel_a: ReliabilityStream | None = None,
                   rel_v: ReliabilityStream | None = None,
                   mode: str | None = None) -> StreamEncoding:
    """Run the stream encoders (and, for fused modes, the reliability
    encoders) that ``mode`` needs; all of them when mode is None.

    Video frames are repeated up to the audio frame rate first, so both
    encoders subsample the same length and every downstream consumer sees one
    shared grid length.
    """
    if mode is not None and mode not in _MODE_NEEDS:
        raise ConfigError(f"unknown decode mode {mode!r}")
    needs = _MODE_NEEDS.get(mode, ("h_a", "h_v", "xi_a", "xi_v"))
    enc = StreamEncoding()
    if "h_a" in needs:
        enc.h_a = model.enc_a(audio.frames)
    if "h_v" in needs or "xi_a" in needs:
        vmap = bresenham_align(len(video), len(audio))
        if "h_v" in needs:
            enc.h_v = model.enc_v(video.frames[vmap])
        if "xi_a" in needs:
            if rel_a is None or rel_v is None:
                raise ValueError(f"mode {mode!r} needs both reliability streams")
            a_rows, v_rows = assemble_reliability(rel_a, rel_v, len(audio), len(video),
                                                  subsample=False)
            enc.xi_a = model.rel_a(a_rows)
            enc.xi_v = model.rel_v(v_rows)
    return enc


def sequence_nll(rows: Tensor, targets: list[int]) -> Tensor:
    """Sum of negative log-probabilities of ``targets`` under per-position
    log-distributions ``rows``; the autoregressive cross-entropy term."""
    n, v = rows.shape
    if len(targets) != n:
        raise ValueError(f"{n} prediction rows for {len(targets)} targets")
    flat = rows.reshape((n * v,))
    idx = np.arange(n) * v + np.asarray(targets, dtype=np.int64)
    return -ad.tsum(ad.take(flat, idx))


def _teacher_rows(model: AvModel, enc: StreamEncoding, labels: list[int],
                  mode: str, drop_rng: CounterRng | None = None):
    """Token-level log-posterior rows for ``labels + eos`` under teacher
    forcing, for one decode mode."""
    prefix = [SOS_ID] + list(labels)
    if mode == "ao":
        rows, _ = model.s2s_a(prefix, enc.h_a)
        return rows
    if mode == "vo":
        rows, _ = model.s2s_v(prefix, enc.h_v)
        return rows
    if mode == "av_concat":
        rows, _ = model.s2s_av(prefix, model.concat(enc.h_a, enc.h_v))
        return rows
    out_a, tr_a = model.s2s_a(prefix, enc.h_a)
    out_v, tr_v = model.s2s_v(prefix, enc.h_v)
    xt_a = model.align_a(enc.xi_a, [t.matrix for t in tr_a])
    xt_v = model.align_v(enc.xi_v, [t.matrix for t in tr_v])
    if mode == "dfn":
        return model.dfn_s2s(out_a, out_v, xt_a, xt_v, drop_rng)
    if mode == "stream_weight":
        lam_a = model.weight_s2s(xt_a)
        lam_v = model.weight_s2s(xt_v)
        return stream_weight_fuse(out_a, out_v, lam_a, lam_v)
    raise ConfigError(f"unknown decode mode {mode!r}")


def ctc_grid_for_mode(model: AvModel, enc: StreamEncoding, mode: str,
                      drop_rng: CounterRng | None = None) -> Tensor:
    """Frame-synchronous log-posterior grid for one decode mode."""
    if mode == "ao":
        return model.ctc_a(enc.h_a)
    if mode == "vo":
        return model.ctc_v(enc.h_v)
    if mode == "av_concat":
        return model.ctc_av(model.concat(enc.h_a, enc.h_v))
    p_a = model.ctc_a(enc.h_a)
    p_v = model.ctc_v(enc.h_v)
    if mode == "dfn":
        return model.dfn_ctc(p_a, p_v, enc.xi_a, enc.xi_v, drop_rng)
    if mode == "stream_weight":
        gam_a = model.weight_ctc(enc.xi_a)
        gam_v = model.weight_ctc(enc.xi_v)
        return stream_weight_fuse(p_a, p_v, gam_a, gam_v)
    raise ConfigError(f"unknown decode mode {mode!r}")


def utterance_loss(model: AvModel, enc: StreamEncoding, labels: list[int],
                   mode: str, alpha: float = 0.3,
                   drop_rng: CounterRng | None = None) -> tuple[Tensor, dict]:
    """Joint objective alpha * ctc_nll + (1 - alpha) * s2s_nll for one
    utterance. Either branch is skipped entirely at the endpoints, so its
    parameters receive no gradient there."""
    if not labels:
        raise ValueError("empty label sequence")
    parts: dict[str, float] = {}
    loss = Tensor(np.zeros(()))
    if alpha > 0.0:
        grid = ctc_grid_for_mode(model, enc, mode, drop_rng)
        nll_ctc = ctc_loss(grid, labels)
        parts["ctc"] = float(nll_ctc.data)
        loss = loss + alpha * nll_ctc
    if alpha < 1.0:
        rows = _teacher_rows(model, enc, labels, mode, drop_rng)
        nll_s2s = sequence_nll(rows, list(labels) + [EOS_ID])
        parts["s2s"] = float(nll_s2s.data)
        loss = loss + (1.0 - alpha) * nll_s2s
    parts["loss"] = float(loss.data)
    return loss, parts


# -- decoding -------------------------------------------------------------------


def s2s_step_for_mode(model: AvModel, enc: StreamEncoding, mode: str):
    """Next-token scorer ``step(prefix) -> (vocab,) log-distribution`` for the
    beam search, covering single-stream, concatenation, and fused modes."""
    if mode in ("ao", "vo", "av_concat"):
        if mode == "ao":
            dec, memory = model.s2s_a, enc.h_a
        elif mode == "vo":
            dec, memory = model.s2s_v, enc.h_v
        else:
            dec, memory = model.s2s_av, model.concat(enc.h_a, enc.h_v)

        def step(prefix):
            rows, _ = dec([SOS_ID] + list(prefix), memory)
            return rows.data[-1]

        return step

    if mode not in ("dfn", "stream_weight"):
        raise ConfigError(f"unknown decode mode {mode!r}")

    def fused_step(prefix):
        toks = [SOS_ID] + list(prefix)
        out_a, tr_a = model.s2s_a(toks, enc.h_a)
        out_v, tr_v = model.s2s_v(toks, enc.h_v)
        xt_a = model.align_a(enc.xi_a, [t.matrix for t in tr_a])
        xt_v = model.align_v(enc.xi_v, [t.matrix for t in tr_v])
        last = len(toks) - 1
        a, v = out_a[last:], out_v[last:]
        ra, rv = xt_a[last:], xt_v[last:]
        if mode == "dfn":
            fused = model.dfn_s2s(a, v, ra, rv)
        else:
            fused = stream_weight_fuse(a, v, model.weight_s2s(ra), model.weight_s2s(rv))
        return fused.data[0]

    return fused_step


def decode_utterance(model: AvModel, enc: StreamEncoding, mode: str,
                     alpha: float = 0.3, theta: float = 0.0,
                     beam_size: int = 4, max_len: int | None = None,
                     use_lm: bool = False, lm: LstmLm | None = None) -> Hypothesis:
    """Joint beam decode of one encoded utterance in the given mode."""
    grid = ctc_grid_for_mode(model, enc, mode).data if alpha > 0.0 else None
    scorer = CtcPrefixScorer(grid) if grid is not None else None
    if max_len is None:
        ref = enc.h_a if enc.h_a is not None else enc.h_v
        max_len = ref.shape[0]
    session = None
    if use_lm and theta > 0.0:
        session = (lm if lm is not None else model.lm).session()
    return joint_beam_search(
        s2s_step_for_mode(model, enc, mode),
        vocab_size=model.spec.vocab_size,
        alpha=alpha,
        theta=theta,
        beam_size=beam_size,
        max_len=max_len,
        ctc_scorer=scorer,
        lm=session,
    )


def fresh_spec_for_corpus(vocab_size: int, audio_dim: int, video_dim: int,
                          rel_audio_dim: int, rel_video_dim: int,
                          overrides: dict | None = None) -> AvModelSpec:
    """Spec with data-derived dimensions plus config-file overrides."""
    base = dict(vocab_size=vocab_size, audio_dim=audio_dim, video_dim=video_dim,
                rel_audio_dim=rel_audio_dim, rel_video_dim=rel_video_dim)
    base.update(overrides or {})
    return AvModelSpec.from_dict(base)
