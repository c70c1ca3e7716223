"""Feature streams, cross-rate index alignment, temporal subsampling, and the
signal-corruption pipeline used for augmentation and evaluation sweeps."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "FeatureStream",
    "bresenham_align",
    "subsample4_fixed",
    "subsampled_len",
    "mix_noise_at_snr",
    "apply_reverb",
    "visual_corrupt",
    "save_features",
    "load_features",
]

CLEAN = float("inf")  # snr sentinel: no corruption


@dataclass
class FeatureStream:
    frames: np.ndarray  # (N, d) float64
    frame_shift: float  # seconds between rows
    modality: str  # "audio" | "video"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"frames must be a non-empty matrix, got {self.frames.shape}")
        if self.frame_shift <= 0:
            raise ValueError("frame_shift must be positive")
        if self.modality not in ("audio", "video"):
            raise ValueError(f"modality must be audio|video, got {self.modality!r}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def bresenham_align(src_len: int, dst_len: int) -> np.ndarray:
    """Integer map of length dst_len assigning each destination index a
    source index, rasterized with an accumulated-error walk.

    Upsampling (dst >= src) distributes each source index over a run of
    ⌊dst/src⌋ or ⌈dst/src⌉ destinations; exact multiples give exactly-k runs.
    Downsampling picks endpoint-anchored strides. Both directions start at 0
    and are monotone; dst_len == 1 can only map to source 0.
    """
    if src_len < 1 or dst_len < 1:
        raise ValueError("lengths must be >= 1")
    if dst_len >= src_len:
        # map[i] = floor(i * src / dst) via error accumulation
        out = np.empty(dst_len, dtype=np.int64)
        acc = 0
        j = 0
        for i in range(dst_len):
            out[i] = j
            acc += src_len
            while acc >= dst_len:
                acc -= dst_len
                j += 1
        return out
    if dst_len == 1:
        return np.zeros(1, dtype=np.int64)
    idx = np.round(np.arange(dst_len) * (src_len - 1) / (dst_len - 1)).astype(np.int64)
    return idx


def subsampled_len(n: int) -> int:
    """Length after the two stride-2 stages: ⌊⌊n/2⌋/2⌋ = ⌊n/4⌋."""
    return (n // 2) // 2


def subsample4_fixed(stream: FeatureStream) -> FeatureStream:
    """Parameter-free 4x temporal reduction: two window-2 stride-2 averaging
    stages. The learned (strided convolution) variant lives with the encoder;
    this fixed version keeps the feature dimension and is exactly
    reproducible, which the corpus and reliability pipelines rely on."""
    n = len(stream)
    if n < 4:
        raise ValueError(f"need at least 4 frames to subsample, got {n}")
    x = stream.frames
    x = 0.5 * (x[0 : 2 * (n // 2) : 2] + x[1 : 2 * (n // 2) : 2])
    m = x.shape[0]
    x = 0.5 * (x[0 : 2 * (m // 2) : 2] + x[1 : 2 * (m // 2) : 2])
    return FeatureStream(x, stream.frame_shift * 4.0, stream.modality)


def mix_noise_at_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """Add a random-offset noise segment scaled so that
    10*log10(P_clean / P_noise_scaled) equals snr_db.

    ``snr_db = inf`` is the no-corruption sentinel and returns a copy of the
    clean signal. The noise signal must be at least as long as the clean one.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if not np.isfinite(snr_db):
        if snr_db > 0:
            return clean.copy()
        raise ValueError("snr_db must be finite or +inf")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[0] < clean.shape[0]:
        raise ValueError(f"noise ({noise.shape[0]}) shorter than clean ({clean.shape[0]})")
    p_clean = float(np.mean(clean**2))
    if p_clean == 0.0:
        raise ValueError("clean signal has zero power")
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, noise.shape[0] - clean.shape[0] + 1))
    seg = noise[offset : offset + clean.shape[0]]
    p_seg = float(np.mean(seg**2))
    if p_seg == 0.0:
        raise ValueError("selected noise segment has zero power")
    gain = np.sqrt(p_clean / (p_seg * 10.0 ** (snr_db / 10.0)))
    return clean + gain * seg


def apply_reverb(signal: np.ndarray, impulse: np.ndarray) -> np.ndarray:
    """Full linear convolution with the impulse response, truncated back to
    the input length."""
    signal = np.asarray(signal, dtype=np.float64)
    impulse = np.asarray(impulse, dtype=np.float64)
    if impulse.size == 0:
        raise ValueError("impulse must be non-empty")
    return np.convolve(signal, impulse, mode="full")[: signal.shape[0]]


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def visual_corrupt(stream: FeatureStream, kind: str, strength: float, seed: int) -> FeatureStream:
    """Degrade a video feature stream.

    gaussian_blur: per-frame 1-D Gaussian smoothing along the feature axis
    with sigma = strength (reflect padding at the edges).
    salt_pepper: each entry independently replaced by the stream-wide min or
    max value, each with probability strength/2.
    """
    if stream.modality != "video":
        raise ValueError("visual_corrupt expects a video stream")
    x = stream.frames
    if kind == "gaussian_blur":
        if strength < 0:
            raise ValueError("blur strength must be >= 0")
        if strength == 0:
            return FeatureStream(x.copy(), stream.frame_shift, stream.modality)
        k = _gaussian_kernel(strength)
        r = (k.size - 1) // 2
        padded = np.pad(x, ((0, 0), (r, r)), mode="reflect")
        out = np.empty_like(x)
        for t in range(x.shape[0]):
            out[t] = np.convolve(padded[t], k, mode="valid")
        return FeatureStream(out, stream.frame_shift, stream.modality)
    if kind == "salt_pepper":
        if not 0.0 <= strength <= 1.0:
            raise ValueError(f"salt_pepper strength must be in [0, 1], got {strength}")
        if strength == 0:
            return FeatureStream(x.copy(), stream.frame_shift, stream.modality)
        rng = np.random.default_rng(seed)
        lo, hi = float(x.min()), float(x.max())
        u = rng.random(x.shape)
        out = x.copy()
        out[u < strength / 2.0] = lo
        out[(u >= strength / 2.0) & (u < strength)] = hi
        return FeatureStream(out, stream.frame_shift, stream.modality)
    raise ValueError(f"unknown corruption kind {kind!r}")


# -- feature file format -------------------------------------------------------
#
#   magic b"AVFT", rows u32 LE, cols u32 LE, float64 LE payload (C order)
#   sidecar <path>.meta: "frame_shift = <float>\nmodality = <str>\n"

FEATURE_MAGIC = b"AVFT"


def save_features(path, stream: FeatureStream) -> None:
    p = Path(path)
    arr = np.ascontiguousarray(stream.frames, dtype="<f8")
    header = FEATURE_MAGIC + struct.pack("<II", arr.shape[0], arr.shape[1])
    p.write_bytes(header + arr.tobytes())
    meta = f"frame_shift = {stream.frame_shift!r}\nmodality = {stream.modality}\n"
    p.with_suffix(p.suffix + ".meta").write_text(meta)


def load_features(path) -> FeatureStream:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    buf = p.read_bytes()
    if buf[:4] != FEATURE_MAGIC:
        raise ValueError(f"{p} is not a feature file (bad magic)")
    rows, cols = struct.unpack("<II", buf[4:12])
    expected = 12 + 8 * rows * cols
    if len(buf) != expected:
        raise ValueError(f"{p}: expected {expected} bytes, found {len(buf)}")
    frames = np.frombuffer(buf[12:], dtype="<f8").reshape(rows, cols).astype(np.float64)

    meta_path = p.with_suffix(p.suffix + ".meta")
    if not meta_path.exists():
        raise FileNotFoundError(f"missing sidecar {meta_path}")
    fields = {}
    for line in meta_path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    return FeatureStream(frames, float(fields["frame_shift"]), fields["modality"])
