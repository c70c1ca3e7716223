"""Condition sweep: decode the test split under every audio SNR and report
WER per decode mode.

Test utterances are stored clean; this module mixes noise into the stored
waveform at each SNR point, recomputes the audio features and reliability
measures from the corrupted signal, optionally corrupts the video features,
and decodes with every requested mode. Results go to a TSV whose columns are
the SNR points plus ``clean``, and whose ``avg.`` column is the arithmetic
mean of all condition columns. A mode whose checkpoint cannot be loaded is
marked ``failed`` and the run continues.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import ConfigError
from .corpus import (
    SR,
    corrupt_audio,
    load_wave,
    logmel_features,
    visual_reliability,
)
from .corpus import _parse_labels  # sweep and corpus share the label table format
from .model import DECODE_MODES, decode_utterance, encode_streams, load_model
from .reliability import (
    FRAME_SHIFT_S,
    ReliabilityStream,
    VIDEO_LAYOUT,
    compute_audio_reliability,
    load_visual_reliability,
)
from .streams import CLEAN, FeatureStream, load_features, visual_corrupt
from .vocab import Vocab
from .wer import wer_percent

__all__ = [
    "SNR_POINTS",
    "SweepConfig",
    "SweepResult",
    "run_sweep",
    "save_sweep_tsv",
    "load_sweep_tsv",
]

SNR_POINTS = (-12.0, -9.0, -6.0, -3.0, 0.0, 3.0, 6.0, 9.0, 12.0)


def condition_columns() -> list[str]:
    return [str(int(s)) for s in SNR_POINTS] + ["clean"]


@dataclass
class SweepConfig:
    modes: tuple = DECODE_MODES
    noise: str = "music"
    visual: str = "clean"
    visual_strength: float = 0.0
    alpha: float = 0.3
    theta: float = 0.0
    beam: int = 4
    use_lm: bool = False
    max_len: int = 10
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.modes, str):
            self.modes = tuple(m.strip() for m in self.modes.split(",") if m.strip())
        unknown = sorted(set(self.modes) - set(DECODE_MODES))
        if unknown:
            raise ConfigError(f"unknown decode mode(s): {', '.join(unknown)}")
        if self.visual not in ("clean", "gaussian_blur", "salt_pepper"):
            raise ConfigError(f"unknown visual condition {self.visual!r}")
        if self.beam < 1:
            raise ConfigError("beam must be >= 1")


@dataclass
class SweepResult:
    noise: str
    visual: str
    visual_strength: float
    columns: list[str] = field(default_factory=condition_columns)
    rows: dict = field(default_factory=dict)  # mode -> {column or "avg.": float|None}


def _condition_snrs() -> list[tuple[str, float]]:
    return [(str(int(s)), s) for s in SNR_POINTS] + [("clean", CLEAN)]


def _prepare_condition(corpus_dir, rows, cfg: SweepConfig, snr_idx: int, snr: float):
    """Corrupt + re-featurize every test utterance for one condition."""
    prepared = []
    test_dir = Path(corpus_dir) / "test"
    for utt_idx, row in enumerate(rows):
        utt_id = row["id"]
        wave = load_wave(corpus_dir, "test", utt_id)
        mix_seed = cfg.seed * 1000003 + utt_idx * 1009 + snr_idx
        wave_obs = corrupt_audio(wave, snr, cfg.noise, seed=mix_seed)
        audio = FeatureStream(logmel_features(wave_obs), FRAME_SHIFT_S, "audio")
        rel_a = compute_audio_reliability(wave_obs, SR)

        video = load_features(test_dir / f"{utt_id}.video.feat")
        if cfg.visual != "clean":
            clean_frames = video.frames
            video = visual_corrupt(video, cfg.visual, cfg.visual_strength,
                                   seed=cfg.seed * 2000003 + utt_idx)
            rel_v = ReliabilityStream(visual_reliability(clean_frames, video.frames),
                                      VIDEO_LAYOUT)
        else:
            rel_v = load_visual_reliability(test_dir / f"{utt_id}.vrel.tsv",
                                            expected_len=len(video))
        prepared.append((audio, video, rel_a, rel_v, row["words"]))
    return prepared


def run_sweep(checkpoints: dict, corpus_dir, cfg: SweepConfig, log=None) -> SweepResult:
    """Decode the test split per (mode, condition); missing or unreadable
    checkpoints fail only that mode's row."""
    rows = _parse_labels(Path(corpus_dir) / "test" / "labels.tsv")
    vocab = Vocab.load(Path(corpus_dir) / "vocab.txt")

    models = {}
    failed = set()
    for mode in cfg.modes:
        path = checkpoints[mode]
        key = str(path)
        if key not in models:
            try:
                m = load_model(path)
                m.set_requires_grad(False)
                models[key] = m
            except (FileNotFoundError, CheckpointError, KeyError) as exc:
                models[key] = None
                if log is not None:
                    log(f"mode {mode}: checkpoint unusable ({exc}); row marked failed")
        if models[key] is None:
            failed.add(mode)

    result = SweepResult(noise=cfg.noise, visual=cfg.visual,
                         visual_strength=cfg.visual_strength)
    for mode in cfg.modes:
        result.rows[mode] = {}

    for snr_idx, (label, snr) in enumerate(_condition_snrs()):
        prepared = _prepare_condition(corpus_dir, rows, cfg, snr_idx, snr)
        refs = [p[4] for p in prepared]
        for mode in cfg.modes:
            if mode in failed:
                result.rows[mode][label] = None
                continue
            model = models[str(checkpoints[mode])]
            hyps = []
            for audio, video, rel_a, rel_v, _words in prepared:
                enc = encode_streams(model, audio, video, rel_a, rel_v, mode=mode)
                hyp = decode_utterance(model, enc, mode, alpha=cfg.alpha,
                                       theta=cfg.theta, beam_size=cfg.beam,
                                       max_len=cfg.max_len, use_lm=cfg.use_lm)
                hyps.append(vocab.decode(hyp.tokens))
            result.rows[mode][label] = wer_percent(hyps, refs)
        if log is not None:
            cells = ", ".join(
                f"{m}={result.rows[m][label]:.2f}" for m in cfg.modes if m not in failed
            )
            log(f"condition {label}: {cells}")

    for mode in cfg.modes:
        cells = [result.rows[mode][c] for c in result.columns]
        result.rows[mode]["avg."] = (
            None if any(c is None for c in cells) else float(np.mean(cells))
        )
    return result


# -- TSV serialization -----------------------------------------------------------


def _format_cell(value) -> str:
    return "failed" if value is None else repr(float(value))


def save_sweep_tsv(path, result: SweepResult) -> None:
    lines = [
        f"# two-stream sweep; noise={result.noise} visual={result.visual} "
        f"vstrength={result.visual_strength!r}",
        "# avg. = arithmetic mean of the snr and clean columns",
        "\t".join(["mode"] + result.columns + ["avg."]),
    ]
    for mode, cells in result.rows.items():
        lines.append("\t".join(
            [mode] + [_format_cell(cells[c]) for c in result.columns + ["avg."]]
        ))
    Path(path).write_text("\n".join(lines) + "\n")


def load_sweep_tsv(path) -> SweepResult:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    lines = p.read_text().splitlines()
    meta = {"noise": "", "visual": "", "vstrength": "0.0"}
    body = []
    for ln in lines:
        if ln.startswith("# two-stream sweep;"):
            for part in ln.split(";", 1)[1].split():
                key, _, value = part.partition("=")
                meta[key] = value
        elif ln.startswith("#") or not ln.strip():
            continue
        else:
            body.append(ln)
    if not body:
        raise ConfigError(f"{p}: no table found")
    header = body[0].split("\t")
    if header[0] != "mode" or header[-1] != "avg.":
        raise ConfigError(f"{p}: bad sweep header {header}")
    columns = header[1:-1]
    result = SweepResult(noise=meta["noise"], visual=meta["visual"],
                         visual_strength=float(meta["vstrength"]), columns=columns)
    for ln in body[1:]:
        cells = ln.split("\t")
        if len(cells) != len(header):
            raise ConfigError(f"{p}: row with {len(cells)} cells, expected {len(header)}")
        mode, values = cells[0], cells[1:]
        result.rows[mode] = {
            col: (None if v == "failed" else float(v))
            for col, v in zip(columns + ["avg."], values)
        }
    return result
