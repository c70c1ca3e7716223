"""Phase-wise training over a synthetic corpus.

The single-stream systems are trained first (``ao``, ``vo``); every fusion
phase then starts from that checkpoint and only updates its own parameters,
leaving the pretrained stream models frozen unless joint fine-tuning is
requested. Each phase minimizes the convex combination
``alpha * ctc_nll + (1 - alpha) * s2s_nll`` per utterance with Adam under a
warmup-decay learning-rate schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import CounterRng
from .config import ConfigError
from .corpus import Utterance
from .model import AvModel, encode_streams, save_model, sequence_nll, utterance_loss
from .optim import Adam, NoamSchedule
from .vocab import EOS_ID, SOS_ID

__all__ = ["PHASES", "TrainConfig", "TrainingDivergedError", "train_phase", "phase_mode"]

PHASES = ("ao", "vo", "av_concat", "fusion_dfn", "fusion_stream_weight", "lm")
FUSION_PHASES = ("av_concat", "fusion_dfn", "fusion_stream_weight")

# model attributes updated by each phase
_PHASE_ATTRS = {
    "ao": ("enc_a", "s2s_a", "ctc_a"),
    "vo": ("enc_v", "s2s_v", "ctc_v"),
    "av_concat": ("concat", "s2s_av", "ctc_av"),
    "fusion_dfn": ("rel_a", "rel_v", "align_a", "align_v", "dfn_ctc", "dfn_s2s"),
    "fusion_stream_weight": ("weight_ctc", "weight_s2s"),
    "lm": ("lm",),
}
_STREAM_ATTRS = ("enc_a", "enc_v", "s2s_a", "s2s_v", "ctc_a", "ctc_v")

_PHASE_MODE = {
    "ao": "ao",
    "vo": "vo",
    "av_concat": "av_concat",
    "fusion_dfn": "dfn",
    "fusion_stream_weight": "stream_weight",
}


class TrainingDivergedError(RuntimeError):
    """Raised when the loss or a gradient stops being finite."""


@dataclass
class TrainConfig:
    epochs: int = 5
    alpha: float = 0.3
    warmup: int = 400
    lr_factor: float = 5.0
    batch: int = 8
    joint_finetune: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.warmup < 1 or self.lr_factor <= 0.0:
            raise ConfigError("warmup must be >= 1 and lr_factor positive")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")


def phase_mode(phase: str) -> str:
    return _PHASE_MODE[phase]


def _trainable_attrs(phase: str, joint_finetune: bool) -> tuple[str, ...]:
    attrs = _PHASE_ATTRS[phase]
    if joint_finetune and phase in FUSION_PHASES:
        attrs = attrs + _STREAM_ATTRS
    return attrs


def _lm_loss(model: AvModel, labels: list[int]):
    rows = model.lm.forward_full([SOS_ID] + list(labels))
    return sequence_nll(rows, list(labels) + [EOS_ID])


def train_phase(model: AvModel, utterances: list[Utterance], phase: str,
                cfg: TrainConfig, dump_path=None, log=None) -> list[float]:
    """Train one phase over the utterance list; returns per-epoch mean losses.

    A non-finite loss or gradient aborts the run: the current parameter state
    is dumped to ``dump_path`` (when given) and TrainingDivergedError is
    raised.
    """
    if phase not in PHASES:
        raise ConfigError(f"unknown phase {phase!r}; choose from {', '.join(PHASES)}")
    if not utterances:
        raise ConfigError("no training utterances")

    attrs = _trainable_attrs(phase, cfg.joint_finetune)
    model.set_requires_grad(False)
    for attr in attrs:
        getattr(model, attr).set_requires_grad(True)

    named = []
    for attr in attrs:
        named.extend(getattr(model, attr).named_parameters(prefix=f"{attr}."))
    opt = Adam(named, lr=0.0)
    sched = NoamSchedule(model.spec.d_att, warmup=cfg.warmup, factor=cfg.lr_factor)
    # dropout only regularizes the fusion nets, and only while training them
    drop_rng = CounterRng(cfg.seed * 31 + 17) if phase == "fusion_dfn" else None

    def _abort(reason: str, epoch: int, utt_id: str):
        where = ""
        if dump_path is not None:
            save_model(dump_path, model)
            where = f"; state dumped to {dump_path}"
        raise TrainingDivergedError(
            f"{reason} (phase {phase}, epoch {epoch}, utterance {utt_id}){where}"
        )

    epoch_losses: list[float] = []
    step = 0
    try:
        for epoch in range(cfg.epochs):
            order = np.random.default_rng([cfg.seed, 7, epoch]).permutation(len(utterances))
            total = 0.0
            for start in range(0, len(order), cfg.batch):
                chunk = [utterances[int(p)] for p in order[start : start + cfg.batch]]
                opt.zero_grad()
                for utt in chunk:
                    if phase == "lm":
                        loss = _lm_loss(model, utt.label_ids)
                    else:
                        mode = _PHASE_MODE[phase]
                        enc = encode_streams(model, utt.audio, utt.video,
                                             utt.rel_audio, utt.rel_video, mode=mode)
                        loss, _ = utterance_loss(model, enc, utt.label_ids, mode,
                                                 alpha=cfg.alpha, drop_rng=drop_rng)
                    value = float(loss.data)
                    if not np.isfinite(value):
                        _abort(f"loss became {value}", epoch, utt.utt_id)
                    # 1/k inside backward so accumulated grads average the chunk
                    (loss * (1.0 / len(chunk))).backward()
                    total += value
                step += 1
                opt.lr = sched.lr(step)
                try:
                    opt.step()
                except FloatingPointError as exc:
                    _abort(f"non-finite gradient: {exc}", epoch, chunk[-1].utt_id)
            mean = total / len(utterances)
            epoch_losses.append(mean)
            if log is not None:
                log(f"phase {phase} epoch {epoch + 1}/{cfg.epochs} loss {mean:.4f}")
    finally:
        model.set_requires_grad(True)
    return epoch_losses
