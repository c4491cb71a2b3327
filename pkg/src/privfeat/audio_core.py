"""Audio I/O, framing, power spectra and log Mel filterbank features."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy.io.wavfile
import scipy.signal

LOG_FLOOR = 1e-10
AVF_MAGIC = b"AVF1"


class AudioError(ValueError):
    """Raised for unreadable, malformed or too-short audio."""


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("AudioBuffer holds mono samples only")
        if int(self.sample_rate) <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("samples contain NaN or Inf")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    def with_samples(self, samples) -> "AudioBuffer":
        return AudioBuffer(samples, self.sample_rate)


@dataclass(frozen=True)
class FrameGrid:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    window_shape: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop_ms <= self.window_ms:
            raise ValueError(f"need 0 < hop_ms <= window_ms, got {self.hop_ms}/{self.window_ms}")
        if self.window_shape not in ("hann", "rectangular"):
            raise ValueError(f"unknown window shape {self.window_shape!r}")

    def window_samples(self, sample_rate: int) -> int:
        return _round_half_up(self.window_ms * sample_rate / 1000.0)

    def hop_samples(self, sample_rate: int) -> int:
        return max(1, _round_half_up(self.hop_ms * sample_rate / 1000.0))


FEATURE_GRID = FrameGrid(25.0, 10.0)
SMOOTHING_GRID = FrameGrid(25.0, 12.5)


@dataclass
class Frames:
    """Windowed frames plus the timing needed to place them on the time axis."""

    data: np.ndarray  # (n_frames, window)
    sample_rate: int
    hop: int
    grid: FrameGrid

    @property
    def hop_seconds(self) -> float:
        return self.hop / self.sample_rate

    @property
    def window_seconds(self) -> float:
        return self.data.shape[1] / self.sample_rate


@dataclass
class PsdMatrix:
    frames: np.ndarray  # (n_frames, n_bins)
    bin_hz: float
    grid: FrameGrid
    sample_rate: int = 16000
    hop: int = 160

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if np.any(self.frames < 0):
            raise ValueError("PSD entries must be nonnegative")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def with_frames(self, frames) -> "PsdMatrix":
        return PsdMatrix(frames, self.bin_hz, self.grid, self.sample_rate, self.hop)


@dataclass
class MelFilterbank:
    n_filters: int
    weights: np.ndarray  # (n_filters, n_bins)
    f_min: float
    f_max: float
    centers_hz: np.ndarray

    @property
    def n_bins(self) -> int:
        return self.weights.shape[1]


@dataclass
class FeatureMatrix:
    features: np.ndarray  # (n_frames, n_filters)
    grid: FrameGrid
    hop_seconds: float
    provenance: Any = None
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]

    @property
    def n_filters(self) -> int:
        return self.features.shape[1]

    def frame_times(self) -> np.ndarray:
        """Center time of each frame in seconds."""
        win = self.grid.window_ms / 1000.0
        return np.arange(self.n_frames) * self.hop_seconds + win / 2.0

    def frames_in(self, start_s: float, end_s: float) -> np.ndarray:
        """Feature rows whose frame centers fall inside [start_s, end_s)."""
        t = self.frame_times()
        return self.features[(t >= start_s) & (t < end_s)]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# --------------------------------------------------------------------------- I/O


def load_audio(path) -> AudioBuffer:
    """Read a PCM WAV file as a mono buffer scaled to [-1, 1].

    Integer encodings are divided by their full-scale magnitude (2**(bits-1)),
    so the most negative code maps exactly to -1.0. Multichannel files are
    averaged across channels.
    """
    path = Path(path)
    if not path.is_file():
        raise AudioError(f"no such file: {path}")
    try:
        rate, data = scipy.io.wavfile.read(path)
    except Exception as exc:  # scipy raises a mix of ValueError/struct errors
        raise AudioError(f"cannot read {path}: {exc}") from exc
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # 24-bit files are returned left-justified in int32
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"unsupported sample encoding {data.dtype} in {path}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise AudioError(f"{path} contains no samples")
    return AudioBuffer(samples, rate)


def write_audio(path, audio: AudioBuffer, subtype: str = "PCM_16") -> None:
    """Write a buffer as 16-bit PCM (default) or 32-bit float WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if subtype == "PCM_16":
        pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype(np.int16)
    elif subtype == "FLOAT":
        pcm = audio.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown subtype {subtype!r}")
    scipy.io.wavfile.write(path, audio.sample_rate, pcm)


# ----------------------------------------------------------------------- framing


def _window(shape: str, length: int) -> np.ndarray:
    if shape == "rectangular":
        return np.ones(length)
    return scipy.signal.get_window("hann", length, fftbins=True)


def frame_signal(audio: AudioBuffer, grid: FrameGrid = FEATURE_GRID) -> Frames:
    """Cut the signal into overlapping windowed frames; the trailing partial frame is dropped."""
    fs = audio.sample_rate
    win = grid.window_samples(fs)
    hop = grid.hop_samples(fs)
    n = len(audio.samples)
    if win < 1 or n < win:
        raise AudioError(f"audio of {n} samples is shorter than one {win}-sample window")
    n_frames = 1 + (n - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    data = audio.samples[idx] * _window(grid.window_shape, win)[None, :]
    return Frames(data, fs, hop, grid)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def power_spectrum(frames: Frames, fft_size: int | None = None) -> PsdMatrix:
    """Squared magnitude of the one-sided real DFT of each frame."""
    win = frames.data.shape[1]
    if fft_size is None:
        fft_size = next_pow2(win)
    if fft_size < win:
        raise ValueError(f"fft_size {fft_size} is smaller than the frame length {win}")
    if fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    spec = np.fft.rfft(frames.data, n=fft_size, axis=1)
    psd = spec.real**2 + spec.imag**2
    return PsdMatrix(psd, frames.sample_rate / fft_size, frames.grid, frames.sample_rate, frames.hop)


# ------------------------------------------------------------------ filterbank


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(
    n_filters: int,
    sample_rate: int,
    fft_size: int,
    f_min: float = 0.0,
    f_max: float | None = None,
) -> MelFilterbank:
    """Peak-normalized triangular filters equally spaced on the Mel scale.

    The n_filters + 2 breakpoints are equally spaced in Mel between f_min and
    f_max; filter k rises from breakpoint k to k+1 and falls to k+2.
    """
    if f_max is None:
        f_max = sample_rate / 2.0
    if n_filters < 1:
        raise ValueError("n_filters must be at least 1")
    if not 0 <= f_min < f_max <= sample_rate / 2.0:
        raise ValueError(f"need 0 <= f_min < f_max <= fs/2, got {f_min}, {f_max}")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2))
    bins = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lo) / (center - lo)
    falling = (hi - bins[None, :]) / (hi - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(weights.max(axis=1) <= 0)
    if empty.size:
        raise ValueError(
            f"{n_filters} filters over {f_min:g}-{f_max:g} Hz is too many for fft_size "
            f"{fft_size}: filter {int(empty[0])} covers no FFT bin"
        )
    return MelFilterbank(n_filters, weights, float(f_min), float(f_max), edges[1:-1].copy())


def log_mel_energies(psd: PsdMatrix, fb: MelFilterbank, floor: float = LOG_FLOOR) -> FeatureMatrix:
    if psd.frames.shape[1] != fb.n_bins:
        raise ValueError(f"PSD has {psd.frames.shape[1]} bins but filterbank expects {fb.n_bins}")
    if floor <= 0:
        raise ValueError("log floor must be positive")
    energies = psd.frames @ fb.weights.T
    feats = np.log(np.maximum(energies, floor))
    return FeatureMatrix(feats, psd.grid, psd.hop / psd.sample_rate)


# -------------------------------------------------------------------- resampling


def _antialias_fir(up: int, down: int, source_rate: int, target_rate: int) -> np.ndarray:
    # stopband starts at the target Nyquist; 20% transition band below it
    stop = 0.5 * target_rate
    passband = 0.8 * stop
    fs_up = source_rate * up
    atten_db = 70.0
    width = (stop - passband) / (0.5 * fs_up)
    numtaps, beta = scipy.signal.kaiserord(atten_db, width)
    numtaps |= 1
    cutoff = 0.5 * (stop + passband)
    return scipy.signal.firwin(numtaps, cutoff, window=("kaiser", beta), fs=fs_up)


def decimate(audio: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limit to half the target rate and resample (polyphase, rational ratio)."""
    target_rate = int(target_rate)
    if target_rate >= audio.sample_rate:
        raise ValueError(f"target rate {target_rate} must be below the source rate {audio.sample_rate}")
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    g = math.gcd(target_rate, audio.sample_rate)
    up, down = target_rate // g, audio.sample_rate // g
    taps = _antialias_fir(up, down, audio.sample_rate, target_rate)
    out = scipy.signal.resample_poly(audio.samples, up, down, window=taps)
    return AudioBuffer(out, target_rate)


# ------------------------------------------------------------- serialization


def save_features(path, fm: FeatureMatrix) -> None:
    """Binary container: b'AVF1', u32 n_frames, u32 n_filters, f32 hop_ms, f32 window_ms, f32 payload."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = AVF_MAGIC + struct.pack(
        "<IIff", fm.n_frames, fm.n_filters, fm.hop_seconds * 1000.0, fm.grid.window_ms
    )
    payload = np.ascontiguousarray(fm.features, dtype="<f4").tobytes()
    path.write_bytes(header + payload)


def load_features(path) -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != AVF_MAGIC:
        raise ValueError(f"{path}: not an AVF1 feature file")
    n_frames, n_filters, hop_ms, window_ms = struct.unpack("<IIff", raw[4:20])
    expected = 20 + 4 * n_frames * n_filters
    if len(raw) != expected:
        raise ValueError(f"{path}: payload size {len(raw)} does not match header ({expected})")
    feats = np.frombuffer(raw[20:], dtype="<f4").reshape(n_frames, n_filters).astype(np.float64)
    grid = FrameGrid(float(window_ms), min(float(hop_ms), float(window_ms)))
    return FeatureMatrix(feats, grid, hop_ms / 1000.0)


def features_to_json(fm: FeatureMatrix) -> str:
    return json.dumps(
        {
            "format": "AVF1",
            "n_frames": fm.n_frames,
            "n_filters": fm.n_filters,
            "hop_ms": fm.hop_seconds * 1000.0,
            "window_ms": fm.grid.window_ms,
            "provenance": str(fm.provenance) if fm.provenance is not None else None,
            "features": np.asarray(fm.features, dtype=np.float32).tolist(),
        }
    )


def features_from_json(text: str) -> FeatureMatrix:
    doc = json.loads(text)
    feats = np.asarray(doc["features"], dtype=np.float64).reshape(doc["n_frames"], doc["n_filters"])
    grid = FrameGrid(doc["window_ms"], min(doc["hop_ms"], doc["window_ms"]))
    return FeatureMatrix(feats, grid, doc["hop_ms"] / 1000.0, provenance=doc.get("provenance"))
