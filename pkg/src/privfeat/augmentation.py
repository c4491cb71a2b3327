"""Additive noise at a target SNR and reverberation through (synthetic) RIRs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.signal

from .audio_core import AudioBuffer, AudioError, load_audio
from .seeding import rng_for

log = logging.getLogger(__name__)

SNRS_DB = (10.0, 5.0, 0.0)
RT60S = (0.21, 0.37, 0.70)
NOISE_KINDS = ("white", "pink")


@dataclass(frozen=True)
class NoiseSpec:
    source: str = "pink"  # "white", "pink" or a WAV path
    snr_db: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")


@dataclass(frozen=True)
class RirSpec:
    source: str = "synthetic"  # "synthetic" or a WAV path
    rt60_s: float = 0.37
    duration_s: float | None = None
    seed: int = 0
    sample_rate: int = 16000
    drr_db: float | None = None

    def __post_init__(self):
        if self.rt60_s <= 0:
            raise ValueError("rt60_s must be positive")
        if self.duration_s is not None and self.duration_s < self.rt60_s:
            raise ValueError("duration_s must be at least rt60_s")

    @property
    def length_s(self) -> float:
        return self.duration_s if self.duration_s is not None else 1.2 * self.rt60_s


@dataclass
class MixResult:
    audio: AudioBuffer
    gain: float  # joint rescaling applied to avoid overflow (1.0 if none)
    noise_scale: float


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def colored_noise(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal(n)
    if kind == "white":
        return white
    if kind == "pink":
        # 1/f power via spectral shaping
        m = scipy.fft.next_fast_len(n, real=True)
        spec = np.fft.rfft(white, n=m)
        f = np.arange(spec.size, dtype=np.float64)
        f[0] = 1.0
        return np.fft.irfft(spec / np.sqrt(f), n=m)[:n]
    raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS} or a WAV path")


def _noise_source(spec: NoiseSpec, n: int, sample_rate: int, rng: np.random.Generator) -> np.ndarray:
    if spec.source in NOISE_KINDS:
        return colored_noise(spec.source, n, rng)
    noise = load_audio(Path(spec.source))
    if noise.sample_rate != sample_rate:
        g = math.gcd(noise.sample_rate, sample_rate)
        noise = AudioBuffer(
            scipy.signal.resample_poly(noise.samples, sample_rate // g, noise.sample_rate // g), sample_rate
        )
    src = noise.samples
    if len(src) >= n:
        start = int(rng.integers(0, len(src) - n + 1))
        return src[start : start + n].copy()
    start = int(rng.integers(0, len(src)))
    reps = int(math.ceil((n + start) / len(src)))
    return np.tile(src, reps)[start : start + n]


def mix_noise(speech: AudioBuffer, spec: NoiseSpec, key: str = "") -> MixResult:
    """Add noise scaled so that 10*log10(P_speech / P_noise) equals ``spec.snr_db``.

    Powers are mean squares over the whole utterance. When the mixture would
    exceed full scale, speech and noise are scaled down together so the SNR
    is untouched. ``key`` (e.g. an utterance id) is folded into the seed.
    """
    p_speech = power(speech.samples)
    if p_speech <= 0:
        raise AudioError("speech is digitally silent; SNR is undefined")
    rng = rng_for(spec.seed, "noise", key)
    noise = _noise_source(spec, len(speech.samples), speech.sample_rate, rng)
    p_noise = power(noise)
    if p_noise <= 0:
        raise AudioError("noise source is silent")
    scale = math.sqrt(p_speech / (p_noise * 10.0 ** (spec.snr_db / 10.0)))
    mixed = speech.samples + scale * noise
    gain = 1.0
    peak = float(np.max(np.abs(mixed)))
    if peak > 1.0:
        gain = 1.0 / peak
        mixed = mixed * gain
        log.info("noise mix rescaled by %.6f to avoid clipping", gain)
    return MixResult(AudioBuffer(mixed, speech.sample_rate), gain, scale)


def synthesize_rir(spec: RirSpec) -> AudioBuffer:
    """Exponentially decaying Gaussian noise with a unit direct path, unit energy overall.

    The amplitude envelope is exp(-delta t) with delta = 3 ln(10) / RT60, so
    energy falls by 60 dB after RT60 seconds. By default the tail samples are
    unit-variance Gaussian; ``drr_db`` rescales the tail to a given
    direct-to-reverberant energy ratio instead.
    """
    fs = spec.sample_rate
    n = max(2, int(round(spec.length_s * fs)))
    rng = rng_for(spec.seed, "rir", repr(spec.rt60_s))
    delta = 3.0 * math.log(10.0) / spec.rt60_s
    t = np.arange(n) / fs
    h = rng.standard_normal(n) * np.exp(-delta * t)
    h[0] = 0.0
    if spec.drr_db is not None:
        tail = float(np.sum(h**2))
        h *= math.sqrt(10.0 ** (-spec.drr_db / 10.0) / tail)
    h[0] = 1.0
    h /= math.sqrt(float(np.sum(h**2)))
    return AudioBuffer(h, fs)


def load_rir(path) -> AudioBuffer:
    rir = load_audio(path)
    energy = float(np.sum(rir.samples**2))
    if energy <= 0:
        raise AudioError(f"{path}: RIR has no energy")
    return rir.with_samples(rir.samples / math.sqrt(energy))


def schroeder_curve(rir: AudioBuffer) -> np.ndarray:
    """Backward-integrated energy decay in dB, normalized to 0 dB at t = 0."""
    e = np.cumsum(rir.samples[::-1] ** 2)[::-1]
    if e[0] <= 0:
        raise ValueError("RIR has no energy")
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(e / e[0])


def measure_rt60(rir: AudioBuffer, start_db: float = -5.0, stop_db: float = -25.0) -> float:
    """T20 estimate: line fit to the Schroeder curve between -5 and -25 dB, extrapolated to 60 dB."""
    edc = schroeder_curve(rir)
    idx = np.flatnonzero((edc <= start_db) & (edc >= stop_db))
    if idx.size < 2 or edc.min() > stop_db:
        raise ValueError("RIR decay does not span the -5 to -25 dB fitting range")
    t = idx / rir.sample_rate
    slope, _ = np.polyfit(t, edc[idx], 1)
    if slope >= 0:
        raise ValueError("energy decay curve is not decreasing")
    return -60.0 / slope


def convolve_rir(speech: AudioBuffer, rir: AudioBuffer) -> AudioBuffer:
    """Linear convolution truncated to the input length, rescaled to the input's peak."""
    if speech.sample_rate != rir.sample_rate:
        raise ValueError(f"sample rate mismatch: {speech.sample_rate} vs {rir.sample_rate}")
    y = scipy.signal.fftconvolve(speech.samples, rir.samples)[: len(speech.samples)]
    peak_in = float(np.max(np.abs(speech.samples)))
    peak_out = float(np.max(np.abs(y)))
    if peak_out > 0:
        y = y * (peak_in / peak_out)
    return AudioBuffer(y, speech.sample_rate)
