"""Privacy-preserving feature transforms.

Spectral smoothing (fewer Mel filters), temporal smoothing of the PSD with a
first-order recursive filter followed by subsampling and frame repetition,
McAdams formant shifting through LPC pole rotation, and low-frequency audio.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np
import scipy.signal

from .audio_core import (
    FEATURE_GRID,
    LOG_FLOOR,
    SMOOTHING_GRID,
    AudioBuffer,
    AudioError,
    FeatureMatrix,
    MelFilterbank,
    PsdMatrix,
    build_mel_filterbank,
    decimate,
    frame_signal,
    log_mel_energies,
    next_pow2,
    power_spectrum,
)
from .seeding import rng_for

log = logging.getLogger(__name__)

BASELINE_MELS = 80
MCADAMS_RANGE = (0.5, 0.9)
LOWFREQ_RATE = 1250
SMOOTHING_HOP_MS = 12.5
TAUS_MS = (125.0, 250.0, 375.0)
LPC_ORDER = 20
ANGLE_GUARD = 0.01
POLE_CLAMP = 0.999
POLICIES = ("per_utterance", "per_speaker", "fixed")

# the eleven methods plotted per condition
DEFAULT_METHODS = (
    "baseline",
    "mel10",
    "tau125",
    "tau250",
    "tau375",
    "mcadams",
    "mcadams+mel10",
    "mcadams+tau125",
    "mcadams+tau250",
    "mcadams+tau375",
    "lowfreq",
)

CONFIG_KEYS = (
    "method",
    "n_mels",
    "tau_ms",
    "smoothing_hop_ms",
    "mcadams.range",
    "mcadams.policy",
    "mcadams.coeff",
    "lowfreq.rate",
    "seed",
)


class ConfigError(ValueError):
    """Invalid or unknown transform configuration."""


@dataclass(frozen=True)
class TransformConfig:
    """One privacy-preserving method or an ordered combination of methods.

    Waveform steps always run before frame-domain steps:
    McAdams -> band-limiting -> PSD smoothing -> Mel filterbank.
    """

    mcadams: bool = False
    lowfreq: bool = False
    n_mels: int = BASELINE_MELS
    tau_ms: float | None = None
    smoothing_hop_ms: float = SMOOTHING_HOP_MS
    mcadams_range: tuple[float, float] = MCADAMS_RANGE
    mcadams_policy: str = "per_utterance"
    mcadams_coeff: float | None = None
    lowfreq_rate: int = LOWFREQ_RATE
    seed: int = 0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.n_mels < 1:
            raise ConfigError("n_mels must be positive")
        if self.tau_ms is not None:
            if self.tau_ms <= 0:
                raise ConfigError("tau_ms must be positive")
            ratio = self.tau_ms / self.smoothing_hop_ms
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ConfigError(
                    f"tau_ms={self.tau_ms} is not an integer multiple of the {self.smoothing_hop_ms} ms hop"
                )
        lo, hi = self.mcadams_range
        if not 0 < lo < hi <= 1:
            raise ConfigError(f"McAdams range must lie inside (0, 1], got {self.mcadams_range}")
        if self.mcadams_policy not in POLICIES:
            raise ConfigError(f"unknown McAdams policy {self.mcadams_policy!r}")
        if self.mcadams_policy == "fixed":
            if self.mcadams_coeff is None or not 0 < self.mcadams_coeff <= 1:
                raise ConfigError("fixed McAdams policy needs a coefficient in (0, 1]")
        if self.lowfreq_rate <= 0:
            raise ConfigError("lowfreq.rate must be positive")
        if not self.name:
            object.__setattr__(self, "name", self.method_string())

    @property
    def temporal(self) -> bool:
        return self.tau_ms is not None

    @property
    def subsample_factor(self) -> int:
        if self.tau_ms is None:
            return 1
        return int(round(self.tau_ms / self.smoothing_hop_ms))

    @property
    def method(self) -> tuple[str, ...]:
        steps = []
        if self.mcadams:
            steps.append("mcadams")
        if self.lowfreq:
            steps.append("lowfreq")
        if self.n_mels != BASELINE_MELS:
            steps.append("spectral_smooth")
        if self.temporal:
            steps.append("temporal_smooth")
        return tuple(steps) or ("baseline",)

    def method_string(self) -> str:
        parts = []
        if self.mcadams:
            parts.append("mcadams")
        if self.lowfreq:
            parts.append("lowfreq" if self.lowfreq_rate == LOWFREQ_RATE else f"lowfreq{self.lowfreq_rate}")
        if self.n_mels != BASELINE_MELS:
            parts.append(f"mel{self.n_mels}")
        if self.temporal:
            parts.append(f"tau{self.tau_ms:g}")
        return "+".join(parts) or "baseline"

    @property
    def grid(self):
        return SMOOTHING_GRID if self.temporal else FEATURE_GRID

    def to_mapping(self) -> dict:
        out = {
            "method": self.method_string(),
            "n_mels": str(self.n_mels),
            "smoothing_hop_ms": f"{self.smoothing_hop_ms:g}",
            "mcadams.range": f"{self.mcadams_range[0]:g}, {self.mcadams_range[1]:g}",
            "mcadams.policy": self.mcadams_policy,
            "lowfreq.rate": str(self.lowfreq_rate),
            "seed": str(self.seed),
        }
        if self.tau_ms is not None:
            out["tau_ms"] = f"{self.tau_ms:g}"
        if self.mcadams_coeff is not None:
            out["mcadams.coeff"] = repr(self.mcadams_coeff)
        return out


def parse_method(text: str, **overrides) -> TransformConfig:
    """Build a config from a method string such as ``"mcadams+tau125"`` or ``"mel10"``."""
    kw: dict = {}
    for raw in text.strip().lower().split("+"):
        tok = raw.strip()
        if tok in ("", "baseline", "baseline-80", "mel80"):
            continue
        if tok == "mcadams":
            kw["mcadams"] = True
        elif tok.startswith("lowfreq"):
            kw["lowfreq"] = True
            rest = tok[len("lowfreq"):].lstrip("-")
            if rest:
                kw["lowfreq_rate"] = int(rest)
        elif tok.startswith("mel"):
            kw["n_mels"] = int(tok[3:].lstrip("-"))
        elif tok.startswith("tau"):
            kw["tau_ms"] = float(tok[3:].lstrip("-"))
        else:
            raise ConfigError(f"unknown method component {tok!r} in {text!r}")
    kw.update(overrides)
    return TransformConfig(**kw)


def config_from_mapping(values: dict, name: str = "") -> TransformConfig:
    """Build a config from a flat key/value section (see CONFIG_KEYS)."""
    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown transform keys: {', '.join(unknown)}")
    kw: dict = {}
    if "n_mels" in values:
        kw["n_mels"] = int(values["n_mels"])
    if "tau_ms" in values:
        kw["tau_ms"] = float(values["tau_ms"])
    if "smoothing_hop_ms" in values:
        kw["smoothing_hop_ms"] = float(values["smoothing_hop_ms"])
    if "mcadams.range" in values:
        lo, hi = (float(v) for v in str(values["mcadams.range"]).replace("(", "").replace(")", "").split(","))
        kw["mcadams_range"] = (lo, hi)
    if "mcadams.policy" in values:
        kw["mcadams_policy"] = str(values["mcadams.policy"]).strip()
    if "mcadams.coeff" in values:
        kw["mcadams_coeff"] = float(values["mcadams.coeff"])
    if "lowfreq.rate" in values:
        kw["lowfreq_rate"] = int(values["lowfreq.rate"])
    if "seed" in values:
        kw["seed"] = int(values["seed"])
    if name:
        kw["name"] = name
    try:
        return parse_method(str(values.get("method", "baseline")), **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def unprotected_view(cfg: TransformConfig) -> TransformConfig:
    """The feature extractor an attacker ignorant of the privacy method would use."""
    return TransformConfig(n_mels=cfg.n_mels, seed=cfg.seed, name=f"ignorant:{cfg.name}")


# ------------------------------------------------------------ temporal smoothing


def temporal_smooth(psd: PsdMatrix, tau_ms: float) -> PsdMatrix:
    """First-order recursive smoothing along time, y[n] = a y[n-1] + (1-a) x[n], y[0] = x[0]."""
    if tau_ms <= 0:
        raise ValueError("smoothing time must be positive")
    hop_ms = psd.hop / psd.sample_rate * 1000.0
    a = math.exp(-hop_ms / tau_ms)
    x = psd.frames
    if x.shape[0] == 0:
        return psd.with_frames(x.copy())
    y, _ = scipy.signal.lfilter([1.0 - a], [1.0, -a], x, axis=0, zi=a * x[:1])
    # rounding can leave tiny negatives when x has exact zeros
    return psd.with_frames(np.maximum(y, 0.0))


def subsample_and_repeat(psd: PsdMatrix, factor: int) -> PsdMatrix:
    """Keep every ``factor``-th frame and hold it for ``factor`` frames."""
    if factor < 1:
        raise ValueError("subsampling factor must be at least 1")
    n = psd.n_frames
    kept = psd.frames[::factor]
    return psd.with_frames(np.repeat(kept, factor, axis=0)[:n])


# ---------------------------------------------------------------------- LPC


@dataclass
class LpcModel:
    order: int
    coefficients: np.ndarray  # A(z) = 1 + a1 z^-1 + ... ; leading 1
    residual: np.ndarray
    gain: float
    modified: bool = True

    def synthesize(self) -> np.ndarray:
        return scipy.signal.lfilter([1.0], self.coefficients, self.residual)


def _autocorr(frames: np.ndarray, order: int) -> np.ndarray:
    n = frames.shape[1]
    nfft = next_pow2(2 * n)
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    r = np.fft.irfft(spec.real**2 + spec.imag**2, n=nfft, axis=1)
    return r[:, : order + 1]


def levinson_durbin(r: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Levinson-Durbin recursion on a batch of autocorrelation rows.

    Returns predictor polynomials ``(F, order+1)`` with leading 1 and final
    prediction error energies. Rows with no energy give A(z) = 1; when the
    error energy collapses the recursion stops at the last stable order.
    """
    r = np.atleast_2d(np.asarray(r, dtype=np.float64))
    F = r.shape[0]
    a = np.zeros((F, order + 1))
    a[:, 0] = 1.0
    err = r[:, 0].copy()
    live = err > 1e-300
    tiny = 1e-12 * np.maximum(r[:, 0], 1e-300)
    for i in range(1, order + 1):
        acc = r[:, i] + np.einsum("fj,fj->f", a[:, 1:i], r[:, i - 1 : 0 : -1])
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.where(live, -acc / np.where(live, err, 1.0), 0.0)
        new_err = err * (1.0 - k * k)
        ok = live & (np.abs(k) < 1.0) & (new_err > tiny)
        k = np.where(ok, k, 0.0)
        prev = a[:, 1:i].copy()
        a[:, 1:i] = prev + k[:, None] * prev[:, ::-1]
        a[:, i] = k
        err = np.where(ok, new_err, err)
        live = ok
    return a, err


def lpc_analyze(frame, order: int = LPC_ORDER) -> LpcModel:
    """Autocorrelation-method LPC; the residual is the frame filtered by A(z)."""
    frame = np.asarray(frame, dtype=np.float64)
    if order < 2:
        raise ValueError("LPC order must be at least 2")
    if frame.size <= order:
        raise ValueError(f"frame of {frame.size} samples is too short for order {order}")
    a, err = levinson_durbin(_autocorr(frame[None, :], order), order)
    a = a[0]
    residual = scipy.signal.lfilter(a, [1.0], frame)
    return LpcModel(order, a, residual, float(np.sqrt(max(err[0], 0.0))))


def _poly_from_roots(roots: np.ndarray) -> np.ndarray:
    F, p = roots.shape
    c = np.zeros((F, p + 1), dtype=np.complex128)
    c[:, 0] = 1.0
    for k in range(p):
        c[:, 1 : k + 2] = c[:, 1 : k + 2] - roots[:, k : k + 1] * c[:, : k + 1]
    return c.real


def _rotate_roots(roots: np.ndarray, coeff: float, guard: float) -> tuple[np.ndarray, np.ndarray]:
    ang = np.angle(roots)
    mag = np.abs(roots)
    band = (np.abs(ang) > guard) & (np.abs(ang) < np.pi - guard)
    upper = band & (ang > 0)
    lower = band & (ang < 0)
    ok = upper.sum(axis=1) == lower.sum(axis=1)
    new_ang = np.where(band, np.sign(ang) * np.abs(ang) ** coeff, ang)
    new_mag = np.where(mag >= 1.0, POLE_CLAMP, mag)
    out = new_mag * np.exp(1j * new_ang)
    out = np.where(band | (mag >= 1.0), out, roots)
    return np.where(ok[:, None], out, roots), ok


def transform_poles_batch(a: np.ndarray, coeff: float, guard: float = ANGLE_GUARD):
    """Apply the McAdams rotation to a batch of predictor polynomials.

    Returns the new polynomials and a boolean mask of rows that were modified
    (rows where root finding failed pass through unchanged).
    """
    a = np.atleast_2d(a)
    F, p1 = a.shape
    p = p1 - 1
    out = a.copy()
    if p == 0:
        return out, np.ones(F, dtype=bool)
    nontrivial = np.any(a[:, 1:] != 0.0, axis=1)
    idx = np.flatnonzero(nontrivial)
    ok_all = np.ones(F, dtype=bool)
    if idx.size == 0:
        return out, ok_all
    comp = np.zeros((idx.size, p, p))
    comp[:, 0, :] = -a[idx, 1:]
    comp[:, np.arange(1, p), np.arange(p - 1)] = 1.0
    try:
        roots = np.linalg.eigvals(comp)
    except np.linalg.LinAlgError:
        return out, ~nontrivial
    finite = np.all(np.isfinite(roots), axis=1)
    roots = np.where(finite[:, None], roots, 0.0)
    new_roots, ok = _rotate_roots(roots, coeff, guard)
    ok &= finite
    poly = _poly_from_roots(new_roots)
    out[idx] = np.where(ok[:, None], poly, a[idx])
    ok_all[idx] = ok
    return out, ok_all


def transform_poles(model: LpcModel, coeff: float, guard: float = ANGLE_GUARD) -> LpcModel:
    """Raise the angle of every complex pole pair to the power ``coeff``.

    Pole magnitudes are kept, near-real poles (within ``guard`` rad of 0 or pi)
    are left alone, and poles on or outside the unit circle are pulled to
    radius 0.999.
    """
    if not 0 < coeff <= 1:
        raise ValueError(f"McAdams coefficient must lie in (0, 1], got {coeff}")
    new, ok = transform_poles_batch(model.coefficients[None, :], coeff, guard)
    return LpcModel(model.order, new[0], model.residual, model.gain, modified=bool(ok[0]))


# ------------------------------------------------------------------ McAdams


def sample_mcadams_coefficient(cfg: TransformConfig, utt_id: str = "", speaker_id: str = "") -> float:
    """Draw the McAdams coefficient for one recording according to ``cfg.mcadams_policy``."""
    if cfg.mcadams_policy == "fixed":
        return float(cfg.mcadams_coeff)
    if cfg.mcadams_policy == "per_speaker":
        rng = rng_for(cfg.seed, "mcadams-speaker", speaker_id)
    else:
        rng = rng_for(cfg.seed, "mcadams-utterance", utt_id)
    lo, hi = cfg.mcadams_range
    while True:
        value = float(rng.uniform(lo, hi))
        if lo < value < hi:
            return value


@numba.njit(cache=True)
def _resynthesize(frames, a, a_new):  # pragma: no cover - compiled
    """Inverse-filter each frame with a[m] and run the residual through 1 / a_new[m] (zero initial state)."""
    F, n = frames.shape
    p = a.shape[1] - 1
    out = np.empty_like(frames)
    for m in range(F):
        for i in range(n):
            e = frames[m, i]
            for k in range(1, min(i, p) + 1):
                e += a[m, k] * frames[m, i - k]
            y = e
            for k in range(1, min(i, p) + 1):
                y -= a_new[m, k] * out[m, i - k]
            out[m, i] = y
    return out


def mcadams_anonymize(
    audio: AudioBuffer,
    cfg: TransformConfig | None = None,
    utt_id: str = "",
    speaker_id: str = "",
    coeff: float | None = None,
    order: int = LPC_ORDER,
    frame_ms: float = 25.0,
) -> AudioBuffer:
    """Shift formants by rotating LPC poles frame by frame.

    Frames of ``frame_ms`` with 50% overlap are analysed under a square-root
    Hann window, the residual is re-synthesised through the rotated all-pole
    filter, windowed again and overlap-added (the two windows multiply to a
    periodic Hann, which sums to one at 50% overlap). The result is scaled
    to the input's peak.
    """
    if coeff is None:
        if cfg is None:
            raise ValueError("need either a config or an explicit coefficient")
        coeff = sample_mcadams_coefficient(cfg, utt_id, speaker_id)
    if not 0 < coeff <= 1:
        raise ValueError(f"McAdams coefficient must lie in (0, 1], got {coeff}")
    fs = audio.sample_rate
    win = int(round(frame_ms * fs / 1000.0))
    win += win % 2
    hop = win // 2
    x = audio.samples
    n = len(x)
    if n < win:
        raise AudioError(f"audio of {n} samples is shorter than one {win}-sample frame")

    n_frames = int(math.ceil((n + hop) / hop))
    padded = np.zeros((n_frames + 1) * hop)
    padded[hop : hop + n] = x
    window = np.sqrt(scipy.signal.get_window("hann", win, fftbins=True))
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * window

    a, _ = levinson_durbin(_autocorr(frames, order), order)
    if coeff == 1.0:
        a_new, ok = a, np.ones(n_frames, dtype=bool)
    else:
        a_new, ok = transform_poles_batch(a, coeff)
    failures = int(np.count_nonzero(~ok))
    if failures:
        log.warning("pole rotation failed on %d of %d frames; passed through unmodified", failures, n_frames)

    rec = _resynthesize(frames, a, a_new) * window
    out = np.zeros_like(padded)
    for m in range(n_frames):
        out[m * hop : m * hop + win] += rec[m]
    y = out[hop : hop + n]

    peak_in = np.max(np.abs(x))
    peak_out = np.max(np.abs(y))
    if peak_out > 0 and peak_in > 0:
        y = y * (peak_in / peak_out)
    return AudioBuffer(y, fs)


# ---------------------------------------------------------------- featurize


@lru_cache(maxsize=64)
def _filterbank(n_mels: int, sample_rate: int, min_fft: int) -> tuple[int, MelFilterbank]:
    fft_size = min_fft
    while True:
        try:
            return fft_size, build_mel_filterbank(n_mels, sample_rate, fft_size, 0.0, sample_rate / 2.0)
        except ValueError:
            if fft_size >= 1 << 16:
                raise
            fft_size *= 2


def featurize(
    audio: AudioBuffer,
    cfg: TransformConfig,
    utt_id: str = "",
    speaker_id: str = "",
    mcadams_coeff: float | None = None,
) -> FeatureMatrix:
    """Run the full feature pipeline for one recording under ``cfg``."""
    provenance = {"method": cfg.name}
    if cfg.mcadams:
        coeff = mcadams_coeff
        if coeff is None:
            coeff = sample_mcadams_coefficient(cfg, utt_id, speaker_id)
        audio = mcadams_anonymize(audio, coeff=coeff)
        provenance["mcadams_coeff"] = coeff
    if cfg.lowfreq:
        audio = decimate(audio, cfg.lowfreq_rate)
    frames = frame_signal(audio, cfg.grid)
    # zero-pad the FFT when the band-limited range is too narrow for n_mels filters
    fft_size, fb = _filterbank(cfg.n_mels, audio.sample_rate, next_pow2(frames.data.shape[1]))
    psd = power_spectrum(frames, fft_size)
    if cfg.temporal:
        psd = temporal_smooth(psd, cfg.tau_ms)
        psd = subsample_and_repeat(psd, cfg.subsample_factor)
    fm = log_mel_energies(psd, fb, LOG_FLOOR)
    fm.provenance = cfg
    fm.meta = provenance
    return fm


__all__ = [
    "TransformConfig",
    "LpcModel",
    "ConfigError",
    "DEFAULT_METHODS",
    "parse_method",
    "config_from_mapping",
    "unprotected_view",
    "temporal_smooth",
    "subsample_and_repeat",
    "levinson_durbin",
    "lpc_analyze",
    "transform_poles",
    "transform_poles_batch",
    "sample_mcadams_coefficient",
    "mcadams_anonymize",
    "featurize",
]
