"""Synthetic two-stream corpus with controllable corruption.

Each vocabulary unit renders a characteristic multi-frame pattern per
modality: a harmonic audio waveform with a unit-specific fundamental and
timbre, and a video feature trajectory drawn from a small pool of base
shapes so that several units look alike (recognition by lips alone is meant
to be harder than by ears alone). Corruption channels are modality-specific:
additive noise mixed at a target SNR on the waveform, blur or salt-and-pepper
on the video features. Ground-truth reliability signals are computed from
the corrupted signals themselves, audio via the DSP front end, video from
the residual against the clean features.

Everything is driven by integer seed chains, so one seed reproduces the
corpus byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, save_config
from .reliability import (
    FRAME_SHIFT_S,
    LOG_FLOOR,
    N_MELS,
    PREEMPH,
    ReliabilityStream,
    audio_layout,
    compute_audio_reliability,
    frame_signal,
    load_visual_reliability,
    mel_filterbank,
    save_visual_reliability,
)
from .streams import (
    CLEAN,
    FeatureStream,
    load_features,
    mix_noise_at_snr,
    save_features,
    visual_corrupt,
)
from .vocab import Vocab

__all__ = [
    "SR",
    "VIDEO_SHIFT",
    "VIDEO_DIM",
    "WORDLIST",
    "NOISE_KINDS",
    "VISUAL_KINDS",
    "CorpusSpec",
    "Prototypes",
    "Utterance",
    "build_prototypes",
    "render_utterance_audio",
    "render_utterance_video",
    "token_spans",
    "logmel_features",
    "visual_reliability",
    "make_noise",
    "corrupt_audio",
    "gen_corpus",
    "load_split",
    "load_utterance",
    "load_wave",
]

SR = 8000
VIDEO_SHIFT = 0.04
VIDEO_DIM = 10
GAP_S = 0.03   # inter-token silence
PAD_S = 0.06   # leading/trailing silence
N_HARMONICS = 4
# units sharing a base mouth shape differ only by this jitter, which sets
# how much weaker the video stream is than the audio stream
VIDEO_JITTER = 0.22

WORDLIST = (
    "ash", "bell", "code", "dawn", "echo", "fern", "gale", "hill",
    "iris", "jade", "kelp", "lark", "moss", "nova", "opal", "pine",
)
NOISE_KINDS = ("music", "ambient")
VISUAL_KINDS = ("clean", "gaussian_blur", "salt_pepper")
TRAIN_SNRS = (CLEAN, 9.0, 6.0, 3.0, 0.0, -3.0, -6.0, -9.0)


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(list(keys))


@dataclass
class CorpusSpec:
    seed: int = 0
    n_units: int = 9
    train_utts: int = 200
    dev_utts: int = 20
    test_utts: int = 40
    min_len: int = 3
    max_len: int = 7

    def __post_init__(self):
        if not 1 <= self.n_units <= len(WORDLIST):
            raise ConfigError(f"n_units must be in 1..{len(WORDLIST)}, got {self.n_units}")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError(f"bad utterance length range {self.min_len}..{self.max_len}")
        for name in ("train_utts", "dev_utts", "test_utts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown corpus option(s): {', '.join(unknown)}")
        return cls(**d)


@dataclass
class Prototypes:
    """Fixed per-unit render parameters, drawn once from the corpus seed."""

    f0: np.ndarray          # (n_units,) fundamental frequencies
    timbre: np.ndarray      # (n_units, N_HARMONICS) harmonic amplitudes
    dur: np.ndarray         # (n_units,) token durations in samples
    video_shape: np.ndarray  # (n_units, VIDEO_DIM) articulation direction
    n_units: int


def build_prototypes(spec: CorpusSpec) -> Prototypes:
    rng = _rng(spec.seed, 1)
    n = spec.n_units
    f0 = 130.0 + 26.0 * np.arange(n) + rng.uniform(-5.0, 5.0, size=n)
    timbre = (0.85 ** np.arange(N_HARMONICS))[None, :] * rng.uniform(0.5, 1.0, (n, N_HARMONICS))
    dur = np.round((0.12 + 0.02 * (np.arange(n) % 4) + rng.uniform(0.0, 0.01, n)) * SR).astype(int)
    # a small pool of base mouth shapes shared between units keeps the video
    # patterns overlapping, so the video stream is the weaker one
    n_base = max(2, int(np.ceil(n / 3)))
    pool = rng.normal(size=(n_base, VIDEO_DIM))
    video_shape = pool[np.arange(n) % n_base] + VIDEO_JITTER * rng.normal(size=(n, VIDEO_DIM))
    return Prototypes(f0=f0, timbre=timbre, dur=dur, video_shape=video_shape, n_units=n)


def token_spans(labels: list[int], protos: Prototypes) -> list[tuple[int, int]]:
    """Sample index span of each token in the rendered waveform."""
    pad = int(round(PAD_S * SR))
    gap = int(round(GAP_S * SR))
    spans = []
    pos = pad
    for u in labels:
        d = int(protos.dur[u])
        spans.append((pos, pos + d))
        pos += d + gap
    return spans


def _utterance_samples(labels: list[int], protos: Prototypes) -> int:
    pad = int(round(PAD_S * SR))
    gap = int(round(GAP_S * SR))
    return 2 * pad + int(sum(int(protos.dur[u]) for u in labels)) + gap * (len(labels) - 1)


def render_unit_audio(protos: Prototypes, unit: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """One token's waveform: harmonic stack with an attack/decay envelope.
    Without an rng the render is the canonical zero-phase prototype."""
    d = int(protos.dur[unit])
    t = np.arange(d) / SR
    amp_jit = 1.0 if rng is None else float(rng.uniform(0.9, 1.1))
    wave = np.zeros(d)
    for k in range(N_HARMONICS):
        phase = 0.0 if rng is None else float(rng.uniform(0.0, 2.0 * np.pi))
        wave += protos.timbre[unit, k] * np.sin(2.0 * np.pi * protos.f0[unit] * (k + 1) * t + phase)
    ramp = np.minimum(1.0, np.minimum(t / 0.015, (t[-1] - t) / 0.02 + 1e-9))
    return amp_jit * wave * np.maximum(ramp, 0.0)


def render_utterance_audio(protos: Prototypes, labels: list[int],
                           rng: np.random.Generator | None = None) -> np.ndarray:
    """Concatenated token waveforms with silences, plus a tiny noise floor so
    no analysis frame is exactly zero."""
    wave = np.zeros(_utterance_samples(labels, protos))
    for u, (s, e) in zip(labels, token_spans(labels, protos)):
        wave[s:e] = render_unit_audio(protos, u, rng)
    floor_rng = rng if rng is not None else _rng(0, 2)
    wave += 1e-4 * floor_rng.standard_normal(wave.shape[0])
    return wave


def render_utterance_video(protos: Prototypes, labels: list[int],
                           rng: np.random.Generator | None = None) -> np.ndarray:
    """Video feature rows on the coarse frame grid: each token traces its
    shape vector under a rise-and-fall envelope; silence is the rest pose."""
    n_samples = _utterance_samples(labels, protos)
    n_frames = n_samples // int(round(VIDEO_SHIFT * SR))
    spans = token_spans(labels, protos)
    out = np.zeros((n_frames, VIDEO_DIM))
    step = int(round(VIDEO_SHIFT * SR))
    for i in range(n_frames):
        center = i * step + step // 2
        for u, (s, e) in zip(labels, spans):
            if s <= center < e:
                rel = (center - s) / max(e - s, 1)
                out[i] = np.sin(np.pi * rel) * protos.video_shape[u]
                break
    if rng is not None:
        out += 0.05 * rng.standard_normal(out.shape)
    return out


def logmel_features(wave: np.ndarray, sample_rate: int = SR) -> np.ndarray:
    """Log mel filterbank energies, one row per 10 ms frame; shares the
    framing of the reliability front end so row counts always agree."""
    frames = frame_signal(wave, sample_rate)
    emph = np.empty_like(frames)
    emph[:, 0] = frames[:, 0] * (1.0 - PREEMPH)
    emph[:, 1:] = frames[:, 1:] - PREEMPH * frames[:, :-1]
    L = frames.shape[1]
    window = 0.54 - 0.46 * np.cos(2.0 * np.pi * np.arange(L) / (L - 1))
    spec = np.fft.rfft(emph * window, axis=1)
    power = spec.real**2 + spec.imag**2
    fb = mel_filterbank(power.shape[1], sample_rate, N_MELS)
    return np.log(np.maximum(power @ fb.T, LOG_FLOOR))


# -- reliability ground truth ----------------------------------------------------

# fixed projections standing in for an action-unit detector; global so every
# corpus shares the same detector
_AU_RNG = np.random.default_rng(771122)
_AU_W = 0.8 * _AU_RNG.normal(size=(VIDEO_DIM, 6))
_AU_B = 0.1 * _AU_RNG.normal(size=6)


def visual_reliability(clean_frames: np.ndarray, observed_frames: np.ndarray) -> np.ndarray:
    """Per-frame confidence plus six detector activations.

    Confidence is a saturating function of the residual between observed and
    clean features, so it is exactly 1 when the video is unharmed and decays
    with corruption strength. The detector activations are computed from the
    observed features, so they too wash out under corruption.
    """
    clean_frames = np.asarray(clean_frames, dtype=np.float64)
    observed_frames = np.asarray(observed_frames, dtype=np.float64)
    if clean_frames.shape != observed_frames.shape:
        raise ValueError(f"frame shapes differ: {clean_frames.shape} vs {observed_frames.shape}")
    resid = np.mean((observed_frames - clean_frames) ** 2, axis=1)
    conf = np.clip(1.0 / (1.0 + 8.0 * resid), 0.0, 1.0)
    aus = np.tanh(observed_frames @ _AU_W + _AU_B)
    return np.concatenate([conf[:, None], aus], axis=1)


# -- corruption channels ----------------------------------------------------------


def make_noise(kind: str, n_samples: int, seed: int, sample_rate: int = SR) -> np.ndarray:
    """Deterministic noise source, unit RMS.

    music: a loop of decaying harmonic notes on a pentatonic-ish grid.
    ambient: low-passed Gaussian noise.
    """
    if kind not in NOISE_KINDS:
        raise ConfigError(f"unknown noise kind {kind!r}")
    rng = _rng(seed, 101 if kind == "music" else 102)
    t = np.arange(n_samples) / sample_rate
    if kind == "music":
        semitones = rng.choice(np.array([0, 3, 5, 7, 10, 12, 15]), size=6, replace=True)
        wave = np.zeros(n_samples)
        for k, s in enumerate(semitones):
            f = 180.0 * 2.0 ** (float(s) / 12.0)
            period = float(rng.uniform(0.25, 0.6))
            tau = period * float(rng.uniform(0.3, 0.6))
            env = np.exp(-np.mod(t + rng.uniform(0, period), period) / tau)
            gain = float(rng.uniform(0.4, 1.0))
            # each note carries a harmonic stack; a bare fundamental would
            # leave most mel channels clean and barely mask anything
            for h in range(1, 5):
                wave += gain * 0.7 ** (h - 1) * env * np.sin(2.0 * np.pi * h * f * t)
    else:
        white = rng.standard_normal(n_samples + 32)
        kernel = np.ones(32) / 32.0
        wave = np.convolve(white, kernel, mode="valid")[:n_samples]
    rms = float(np.sqrt(np.mean(wave**2)))
    return wave / max(rms, 1e-12)


def corrupt_audio(wave: np.ndarray, snr_db: float, noise_kind: str, seed: int) -> np.ndarray:
    """Mix generated noise into the waveform at the requested SNR; the clean
    sentinel passes the signal through untouched."""
    if not np.isfinite(snr_db):
        return np.asarray(wave, dtype=np.float64).copy()
    noise = make_noise(noise_kind, 2 * wave.shape[0], seed)
    return mix_noise_at_snr(wave, noise, snr_db, seed)


# -- dataset records and files -----------------------------------------------------


@dataclass
class Utterance:
    utt_id: str
    words: list[str]
    label_ids: list[int]
    audio: FeatureStream
    video: FeatureStream
    rel_audio: ReliabilityStream
    rel_video: ReliabilityStream
    condition: dict


SPLITS = ("train", "dev", "test")


def _sample_conditions(split: str, idx: int, seed: int) -> dict:
    """Per-utterance corruption descriptor. Training data is augmented across
    the SNR range and visual conditions; dev and test stay clean (the sweep
    corrupts test audio on the fly)."""
    if split != "train":
        return {"snr": CLEAN, "noise": "music", "visual": "clean", "vstrength": 0.0}
    rng = _rng(seed, 3, idx)
    snr = float(TRAIN_SNRS[int(rng.integers(0, len(TRAIN_SNRS)))])
    noise = NOISE_KINDS[int(rng.integers(0, len(NOISE_KINDS)))]
    roll = float(rng.random())
    if roll < 0.5:
        visual, strength = "clean", 0.0
    elif roll < 0.75:
        visual, strength = "gaussian_blur", float(rng.uniform(0.5, 2.0))
    else:
        visual, strength = "salt_pepper", float(rng.uniform(0.05, 0.3))
    return {"snr": snr, "noise": noise, "visual": visual, "vstrength": strength}


def _write_labels(path: Path, rows: list[tuple]) -> None:
    lines = ["id\tsnr\tnoise\tvisual\tvstrength\twords"]
    for utt_id, cond, words in rows:
        lines.append("\t".join([
            utt_id,
            repr(float(cond["snr"])),
            cond["noise"],
            cond["visual"],
            repr(float(cond["vstrength"])),
            " ".join(words),
        ]))
    path.write_text("\n".join(lines) + "\n")


def gen_corpus(spec: CorpusSpec, out_dir) -> dict:
    """Write a full train/dev/test corpus; returns per-split utterance counts.

    Label sequences are unique across the whole corpus, which keeps the
    splits disjoint.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    units = sorted(WORDLIST[: spec.n_units])
    vocab = Vocab(units)
    vocab.save(out / "vocab.txt")
    save_config(out / "corpus.cfg", spec.to_dict())
    protos = build_prototypes(spec)

    counts = {}
    seen: set[tuple[int, ...]] = set()
    sizes = {"train": spec.train_utts, "dev": spec.dev_utts, "test": spec.test_utts}
    for split in SPLITS:
        split_dir = out / split
        split_dir.mkdir(exist_ok=True)
        label_rows = []
        draw = _rng(spec.seed, 4, SPLITS.index(split))
        for idx in range(sizes[split]):
            # rejection-sample an unseen label sequence
            while True:
                n_tok = int(draw.integers(spec.min_len, spec.max_len + 1))
                labels = tuple(int(x) for x in draw.integers(0, spec.n_units, size=n_tok))
                if labels not in seen:
                    seen.add(labels)
                    break
            utt_id = f"{split}{idx:05d}"
            words = [units[u] for u in labels]
            cond = _sample_conditions(split, idx, spec.seed)
            jitter = _rng(spec.seed, 5, SPLITS.index(split), idx)
            wave_clean = render_utterance_audio(protos, list(labels), jitter)
            video_clean = render_utterance_video(protos, list(labels), jitter)

            wave_obs = corrupt_audio(wave_clean, cond["snr"], cond["noise"],
                                     seed=spec.seed * 1000003 + idx)
            vstream = FeatureStream(video_clean, VIDEO_SHIFT, "video")
            if cond["visual"] != "clean":
                vstream = visual_corrupt(vstream, cond["visual"], cond["vstrength"],
                                         seed=spec.seed * 2000003 + idx)

            audio_feat = logmel_features(wave_obs)
            arel = compute_audio_reliability(wave_obs, SR)
            vrel = visual_reliability(video_clean, vstream.frames)

            save_features(split_dir / f"{utt_id}.audio.feat",
                          FeatureStream(audio_feat, FRAME_SHIFT_S, "audio"))
            save_features(split_dir / f"{utt_id}.video.feat", vstream)
            save_features(split_dir / f"{utt_id}.arel.feat",
                          FeatureStream(arel.frames, FRAME_SHIFT_S, "audio"))
            save_visual_reliability(split_dir / f"{utt_id}.vrel.tsv", vrel)
            if split == "test":
                save_features(split_dir / f"{utt_id}.wave.feat",
                              FeatureStream(wave_clean[:, None], 1.0 / SR, "audio"))
            label_rows.append((utt_id, cond, words))
        _write_labels(split_dir / "labels.tsv", label_rows)
        counts[split] = sizes[split]
    return counts


def _parse_labels(path: Path) -> list[dict]:
    if not path.exists():
        raise FileNotFoundError(str(path))
    lines = path.read_text().splitlines()
    header = lines[0].split("\t")
    expected = ["id", "snr", "noise", "visual", "vstrength", "words"]
    if header != expected:
        raise ConfigError(f"{path}: bad label header {header}")
    rows = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        utt_id, snr, noise, visual, vstrength, words = ln.split("\t")
        rows.append({
            "id": utt_id,
            "snr": float(snr),
            "noise": noise,
            "visual": visual,
            "vstrength": float(vstrength),
            "words": words.split(),
        })
    return rows


def load_utterance(corpus_dir, split: str, row: dict, vocab: Vocab) -> Utterance:
    d = Path(corpus_dir) / split
    utt_id = row["id"]
    audio = load_features(d / f"{utt_id}.audio.feat")
    video = load_features(d / f"{utt_id}.video.feat")
    arel_stream = load_features(d / f"{utt_id}.arel.feat")
    rel_audio = ReliabilityStream(arel_stream.frames, audio_layout(5))
    rel_video = load_visual_reliability(d / f"{utt_id}.vrel.tsv", expected_len=len(video))
    return Utterance(
        utt_id=utt_id,
        words=row["words"],
        label_ids=vocab.encode(row["words"]),
        audio=audio,
        video=video,
        rel_audio=rel_audio,
        rel_video=rel_video,
        condition={k: row[k] for k in ("snr", "noise", "visual", "vstrength")},
    )


def load_split(corpus_dir, split: str) -> list[Utterance]:
    root = Path(corpus_dir)
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}")
    vocab = Vocab.load(root / "vocab.txt")
    rows = _parse_labels(root / split / "labels.tsv")
    return [load_utterance(root, split, row, vocab) for row in rows]


def load_wave(corpus_dir, split: str, utt_id: str) -> np.ndarray:
    stream = load_features(Path(corpus_dir) / split / f"{utt_id}.wave.feat")
    return stream.frames[:, 0]
