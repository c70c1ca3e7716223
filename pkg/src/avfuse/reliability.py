"""Signal-based reliability measures for both streams.

The audio side derives everything from the waveform: low-order cepstral
coefficients, a percentile-tracking per-frame SNR estimate, and a pitch
tracker (f0, delta-f0, probability of voicing). The video side carries face
detector confidence plus six action-unit intensities, loaded from TSV
sidecars. ``assemble_reliability`` time-aligns both to the subsampled
posterior grid the fusion net runs on.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .streams import FeatureStream, bresenham_align, subsample4_fixed, subsampled_len

__all__ = [
    "AUDIO_LAYOUT",
    "VIDEO_LAYOUT",
    "ReliabilityStream",
    "VisualSchemaError",
    "frame_signal",
    "compute_mfcc",
    "mel_filterbank",
    "estimate_pitch_pov",
    "estimate_snr_proxy",
    "compute_audio_reliability",
    "save_visual_reliability",
    "load_visual_reliability",
    "normalize_reliability",
    "assemble_reliability",
]

def audio_layout(mfcc_count: int = 5) -> tuple[str, ...]:
    return tuple(f"mfcc{i}" for i in range(1, mfcc_count + 1)) + (
        "snr_est", "f0", "delta_f0", "pov")


AUDIO_LAYOUT = audio_layout(5)
VIDEO_LAYOUT = ("confidence", "AU12", "AU15", "AU17", "AU23", "AU25", "AU26")

FRAME_LEN_S = 0.025
FRAME_SHIFT_S = 0.010
PREEMPH = 0.97
LOG_FLOOR = 1e-10
N_MELS = 23


class VisualSchemaError(ValueError):
    pass


@dataclass
class ReliabilityStream:
    frames: np.ndarray  # (N, r)
    layout: tuple[str, ...]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValueError("reliability frames must be a matrix")
        if self.layout != VIDEO_LAYOUT and self.layout != audio_layout(len(self.layout) - 4):
            raise ValueError(f"unknown reliability layout {self.layout}")
        if self.frames.shape[1] != len(self.layout):
            raise ValueError(
                f"{self.frames.shape[1]} columns but layout names {len(self.layout)}"
            )

    def __len__(self) -> int:
        return self.frames.shape[0]


def frame_signal(signal: np.ndarray, sample_rate: int,
                 frame_len_s: float = FRAME_LEN_S,
                 frame_shift_s: float = FRAME_SHIFT_S) -> np.ndarray:
    """Slice a waveform into overlapping frames, one per analysis step."""
    signal = np.asarray(signal, dtype=np.float64)
    L = int(round(frame_len_s * sample_rate))
    S = int(round(frame_shift_s * sample_rate))
    if signal.shape[0] < L:
        raise ValueError(f"signal shorter than one frame ({signal.shape[0]} < {L})")
    T = 1 + (signal.shape[0] - L) // S
    idx = np.arange(L)[None, :] + S * np.arange(T)[:, None]
    return signal[idx]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_fft_bins: int, sample_rate: int, n_mels: int = N_MELS,
                   fmin: float = 20.0) -> np.ndarray:
    """Triangular filters over rfft bins, rows = filters."""
    fmax = sample_rate / 2.0
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    edges = mel_to_hz(mels)
    bin_freqs = np.arange(n_fft_bins) * (sample_rate / 2.0) / (n_fft_bins - 1)
    fb = np.zeros((n_mels, n_fft_bins))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_freqs - lo) / (mid - lo)
        down = (hi - bin_freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def compute_mfcc(frame: np.ndarray, sample_rate: int, mfcc_count: int = 5) -> np.ndarray:
    """Cepstral coefficients c1..c_mfcc_count for one 25 ms frame.

    Pipeline: pre-emphasis, Hamming window, rfft power spectrum, triangular
    mel filterbank, floored log, plain DCT-II sum with c0 dropped. All-zero
    frames land on the log floor and stay finite.
    """
    frame = np.asarray(frame, dtype=np.float64)
    L = int(round(FRAME_LEN_S * sample_rate))
    if frame.shape != (L,):
        raise ValueError(f"expected one {L}-sample frame, got {frame.shape}")
    emph = np.empty_like(frame)
    emph[0] = frame[0] * (1.0 - PREEMPH)
    emph[1:] = frame[1:] - PREEMPH * frame[:-1]
    n = np.arange(L)
    window = 0.54 - 0.46 * np.cos(2.0 * np.pi * n / (L - 1))
    spec = np.fft.rfft(emph * window)
    power = spec.real**2 + spec.imag**2
    fb = mel_filterbank(power.shape[0], sample_rate)
    logE = np.log(np.maximum(fb @ power, LOG_FLOOR))
    M = logE.shape[0]
    ks = np.arange(1, mfcc_count + 1)
    basis = np.cos(np.pi * ks[:, None] * (2.0 * np.arange(M)[None, :] + 1.0) / (2.0 * M))
    return basis @ logE


LAG_FMIN = 50.0
LAG_FMAX = 400.0
POV_VOICED = 0.45


def estimate_pitch_pov(signal: np.ndarray, sample_rate: int) -> np.ndarray:
    """Per-frame (f0, delta_f0, pov) from normalized autocorrelation.

    The search range is 50..400 Hz. pov is the clipped peak correlation.
    Unvoiced frames (pov below threshold) hold the last voiced f0; leading
    unvoiced frames borrow the first voiced value, and a fully unvoiced
    signal reports a flat 100 Hz track with its low pov.
    """
    frames = frame_signal(signal, sample_rate)
    T, L = frames.shape
    lag_min = max(1, int(np.floor(sample_rate / LAG_FMAX)))
    lag_max = min(L - 2, int(np.ceil(sample_rate / LAG_FMIN)))
    if lag_max <= lag_min:
        raise ValueError("frame too short for the pitch search range")

    f0 = np.zeros(T)
    pov = np.zeros(T)
    voiced = np.zeros(T, dtype=bool)
    for t in range(T):
        x = frames[t] - frames[t].mean()
        e0 = float(x @ x)
        if e0 <= 0.0:
            continue
        rs = {}
        for lag in range(lag_min, lag_max + 1):
            a = x[:-lag]
            b = x[lag:]
            denom = np.sqrt(float(a @ a) * float(b @ b))
            rs[lag] = float(a @ b) / denom if denom > 0 else 0.0
        best_r = max(rs.values())
        # periodic signals peak equally at every lag multiple; the true
        # period is the smallest lag within a whisker of the maximum
        thresh = best_r - 0.01 * abs(best_r)
        best_lag = min(lag for lag, r in rs.items() if r >= thresh)
        # parabolic refinement of the peak lag
        lag = float(best_lag)
        if lag_min < best_lag < lag_max:
            rm, r0, rp = rs[best_lag - 1], rs[best_lag], rs[best_lag + 1]
            denom = rm - 2.0 * r0 + rp
            if abs(denom) > 1e-12:
                lag += 0.5 * (rm - rp) / denom
        pov[t] = min(1.0, max(0.0, best_r))
        f0[t] = sample_rate / lag
        voiced[t] = pov[t] >= POV_VOICED

    if voiced.any():
        hold = f0[voiced.argmax()]  # first voiced value seeds the leading gap
        for t in range(T):
            if voiced[t]:
                hold = f0[t]
            else:
                f0[t] = hold
    else:
        f0[:] = 100.0

    df0 = np.zeros(T)
    if T >= 3:
        df0[1:-1] = 0.5 * (f0[2:] - f0[:-2])
    if T >= 2:
        df0[0] = f0[1] - f0[0]
        df0[-1] = f0[-1] - f0[-2]
    return np.stack([f0, df0, pov], axis=1)


SNR_WINDOW = 50
SNR_EPS = 1e-10
SNR_LO = -30.0
SNR_HI = 40.0


def estimate_snr_proxy(energy: np.ndarray, window: int = SNR_WINDOW) -> np.ndarray:
    """Per-frame SNR estimate in dB from a percentile noise-floor tracker.

    The floor at frame t is the 10th percentile of energies in the window
    around t, with frame t itself excluded so that raising E_t can never
    lower SNR_t. Output clamped to [-30, +40] dB.
    """
    energy = np.asarray(energy, dtype=np.float64)
    if energy.ndim != 1:
        raise ValueError("energy must be a 1-D track")
    if np.any(energy < 0):
        raise ValueError("energies must be non-negative")
    T = energy.shape[0]
    snr = np.empty(T)
    for t in range(T):
        lo = max(0, t - window)
        hi = min(T, t + window + 1)
        neighborhood = np.concatenate([energy[lo:t], energy[t + 1 : hi]])
        if neighborhood.size == 0:
            floor = energy[t]
        else:
            floor = float(np.percentile(neighborhood, 10.0))
        num = max(energy[t] - floor, SNR_EPS)
        den = max(floor, SNR_EPS)
        snr[t] = 10.0 * np.log10(num / den)
    return np.clip(snr, SNR_LO, SNR_HI)


def compute_audio_reliability(signal: np.ndarray, sample_rate: int,
                              mfcc_count: int = 5) -> ReliabilityStream:
    """Full audio reliability stream, one row per 10 ms analysis frame."""
    frames = frame_signal(signal, sample_rate)
    mfcc = np.stack([compute_mfcc(f, sample_rate, mfcc_count) for f in frames])
    energy = np.mean(frames**2, axis=1)
    snr = estimate_snr_proxy(energy)
    pitch = estimate_pitch_pov(signal, sample_rate)
    out = np.concatenate([mfcc, snr[:, None], pitch], axis=1)
    return ReliabilityStream(out, audio_layout(mfcc_count))


# -- visual reliability TSV ----------------------------------------------------

_VISUAL_HEADER = ("frame",) + VIDEO_LAYOUT


def save_visual_reliability(path, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != len(VIDEO_LAYOUT):
        raise VisualSchemaError(f"expected (N, {len(VIDEO_LAYOUT)}) matrix, got {frames.shape}")
    lines = ["\t".join(_VISUAL_HEADER)]
    for i, row in enumerate(frames):
        lines.append("\t".join([str(i)] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_visual_reliability(path, expected_len: int | None = None) -> ReliabilityStream:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    lines = [ln for ln in p.read_text().splitlines() if ln.strip()]
    if not lines:
        raise VisualSchemaError(f"{p} is empty")
    header = tuple(lines[0].split("\t"))
    if header != _VISUAL_HEADER:
        missing = [c for c in _VISUAL_HEADER if c not in header]
        if missing:
            raise VisualSchemaError(f"{p} missing column(s): {', '.join(missing)}")
        raise VisualSchemaError(f"{p} columns out of order: {header}")
    rows = []
    for ln in lines[1:]:
        cells = ln.split("\t")
        if len(cells) != len(_VISUAL_HEADER):
            raise VisualSchemaError(f"{p}: row has {len(cells)} cells, expected {len(_VISUAL_HEADER)}")
        rows.append([float(c) for c in cells[1:]])
    frames = np.asarray(rows, dtype=np.float64)
    if expected_len is not None and frames.shape[0] != expected_len:
        raise VisualSchemaError(
            f"{p}: {frames.shape[0]} rows but owning stream has {expected_len} frames"
        )
    conf = frames[:, 0]
    if np.any((conf < 0.0) | (conf > 1.0)):
        raise VisualSchemaError(f"{p}: confidence outside [0, 1]")
    return ReliabilityStream(frames, VIDEO_LAYOUT)


# Affine (shift, scale) per indicator column. Raw columns live on wildly
# different ranges (f0 in the hundreds of Hz, cepstra at tens, flags in
# [0, 1]); the learned embeddings downstream train poorly unless every
# column lands roughly in [-3, 3]. Confidence and action-unit columns are
# already bounded and stay untouched.
_COLUMN_NORM = {
    "snr_est": (0.0, 15.0),
    "f0": (220.0, 80.0),
    "delta_f0": (0.0, 40.0),
}
_MFCC_NORM = (0.0, 25.0)


def normalize_reliability(frames: np.ndarray, layout: tuple[str, ...]) -> np.ndarray:
    """Rescale indicator columns to comparable, roughly unit ranges."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != len(layout):
        raise ValueError(f"frames {frames.shape} do not match layout of {len(layout)} columns")
    out = frames.copy()
    for j, name in enumerate(layout):
        shift, scale = _MFCC_NORM if name.startswith("mfcc") else _COLUMN_NORM.get(name, (0.0, 1.0))
        if shift != 0.0 or scale != 1.0:
            out[:, j] = (out[:, j] - shift) / scale
    return out


def assemble_reliability(audio_rel: ReliabilityStream, video_rel: ReliabilityStream,
                         audio_len: int, video_len: int,
                         subsample: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Time-match both reliability streams to the encoder grid.

    Video rows are first repeated onto the audio frame rate with the
    alignment map; with ``subsample`` both streams are then pooled 4x to the
    posterior-grid length ⌊audio_len/4⌋. ``subsample=False`` returns
    audio-rate streams for the learned reliability encoder, which subsamples
    internally.
    """
    if audio_rel.layout == VIDEO_LAYOUT or video_rel.layout != VIDEO_LAYOUT:
        raise ValueError("streams passed in the wrong order")
    if len(audio_rel) != audio_len:
        raise ValueError(f"audio reliability has {len(audio_rel)} rows, stream has {audio_len}")
    if len(video_rel) != video_len:
        raise ValueError(f"video reliability has {len(video_rel)} rows, stream has {video_len}")
    vmap = bresenham_align(video_len, audio_len)
    v_at_audio = normalize_reliability(video_rel.frames, video_rel.layout)[vmap]
    a = normalize_reliability(audio_rel.frames, audio_rel.layout)
    if not subsample:
        return a, v_at_audio
    fa = FeatureStream(a, FRAME_SHIFT_S, "audio")
    fv = FeatureStream(v_at_audio, FRAME_SHIFT_S, "audio")
    return subsample4_fixed(fa).frames, subsample4_fixed(fv).frames
