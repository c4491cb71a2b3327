import logging
import math

import numpy as np
import pytest
import scipy.linalg
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st

from privfeat.audio_core import AudioBuffer, FrameGrid, PsdMatrix
from privfeat.transforms import (
    DEFAULT_METHODS,
    ConfigError,
    TransformConfig,
    config_from_mapping,
    featurize,
    levinson_durbin,
    lpc_analyze,
    mcadams_anonymize,
    parse_method,
    sample_mcadams_coefficient,
    subsample_and_repeat,
    temporal_smooth,
    transform_poles,
    transform_poles_batch,
    unprotected_view,
)


def _psd(x, hop=200, fs=16000):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return PsdMatrix(x, fs / 512, FrameGrid(25.0, 12.5), fs, hop)


# ------------------------------------------------------------------ configs


def test_method_strings_round_trip():
    for name in DEFAULT_METHODS:
        assert parse_method(name).name == name
    cfg = parse_method("mcadams+tau250")
    assert cfg.method == ("mcadams", "temporal_smooth")
    assert cfg.subsample_factor == 20
    assert parse_method("baseline").method == ("baseline",)
    assert parse_method("lowfreq").lowfreq_rate == 1250


def test_config_validation():
    with pytest.raises(ConfigError):
        parse_method("tau130")  # not a multiple of 12.5 ms
    with pytest.raises(ConfigError):
        parse_method("wobble")
    with pytest.raises(ConfigError):
        TransformConfig(mcadams_range=(0.9, 0.5))
    with pytest.raises(ConfigError):
        TransformConfig(mcadams_policy="fixed")
    with pytest.raises(ConfigError):
        TransformConfig(n_mels=0)


def test_config_mapping_round_trip():
    cfg = parse_method("mcadams+mel10", mcadams_policy="per_speaker", seed=5)
    back = config_from_mapping(cfg.to_mapping())
    assert back == cfg
    with pytest.raises(ConfigError, match="unknown"):
        config_from_mapping({"method": "baseline", "n_mel": "10"})


def test_unprotected_view_keeps_mel_count():
    view = unprotected_view(parse_method("mcadams+mel10+tau125"))
    assert view.n_mels == 10 and not view.mcadams and not view.temporal


# -------------------------------------------------------- temporal smoothing


def test_smoothing_recursion_matches_loop(rng):
    x = rng.random((40, 3))
    psd = _psd(x)
    a = math.exp(-12.5 / 125.0)
    y = temporal_smooth(psd, 125.0).frames
    ref = np.empty_like(x)
    ref[0] = x[0]
    for n in range(1, len(x)):
        ref[n] = a * ref[n - 1] + (1 - a) * x[n]
    assert np.allclose(y, ref, rtol=1e-12)


def test_smoothing_constant_is_fixed_point():
    psd = _psd(np.full((30, 2), 3.0))
    assert np.allclose(temporal_smooth(psd, 375.0).frames, 3.0)


def test_smoothing_impulse_decay():
    x = np.zeros(50)
    x[1] = 1.0
    y = temporal_smooth(_psd(x), 250.0).frames[:, 0]
    a = math.exp(-12.5 / 250.0)
    assert y[1] == pytest.approx(1 - a)
    assert y[11] / y[1] == pytest.approx(a**10)


@given(st.integers(1, 30), st.integers(1, 100))
def test_subsample_repeat_property(factor, n):
    x = np.arange(n, dtype=float)
    y = subsample_and_repeat(_psd(x), factor).frames[:, 0]
    assert len(y) == n
    assert np.all(y == (np.arange(n) // factor) * factor)


def test_temporal_features_are_piecewise_constant(noise_audio):
    fm = featurize(noise_audio, parse_method("tau125"))
    assert fm.hop_seconds == 0.0125
    blocks = fm.features[: (fm.n_frames // 10) * 10].reshape(-1, 10, fm.n_filters)
    assert np.all(blocks == blocks[:, :1, :])


# ---------------------------------------------------------------------- LPC


def test_levinson_matches_toeplitz_solve(rng):
    x = scipy.signal.lfilter([1.0], [1.0, -0.9, 0.4], rng.standard_normal(4000))
    r = np.array([np.dot(x[: len(x) - k], x[k:]) for k in range(11)])
    a, err = levinson_durbin(r, 10)
    sol = scipy.linalg.solve_toeplitz(r[:10], -r[1:11])
    assert np.allclose(a[0, 1:], sol, atol=1e-9)
    assert err[0] == pytest.approx(r[0] + np.dot(sol, r[1:11]))


def test_levinson_zero_energy():
    a, err = levinson_durbin(np.zeros((2, 5)), 4)
    assert np.all(a[:, 0] == 1) and np.all(a[:, 1:] == 0)


def test_lpc_recovers_ar2(rng):
    x = scipy.signal.lfilter([1.0], [1.0, -1.058, 0.81], rng.standard_normal(20000))
    model = lpc_analyze(x, 2)
    assert np.allclose(model.coefficients, [1.0, -1.058, 0.81], atol=0.02)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 24))
def test_lpc_analysis_synthesis_exact(seed, order):
    frame = np.random.default_rng(seed).standard_normal(400)
    model = lpc_analyze(frame, order)
    assert np.max(np.abs(model.synthesize() - frame)) < 1e-8


def test_lpc_rejects_short_frames():
    with pytest.raises(ValueError):
        lpc_analyze(np.ones(10), 20)


# -------------------------------------------------------------------- poles


def _resonator(freqs, fs=16000, r=0.97):
    a = np.array([1.0])
    for f in freqs:
        a = np.convolve(a, [1.0, -2 * r * np.cos(2 * np.pi * f / fs), r * r])
    return a


def test_pole_rotation_moves_angles():
    a = _resonator([500.0, 1500.0])
    new, ok = transform_poles_batch(a[None, :], 0.8)
    assert ok[0]
    roots = np.roots(new[0])
    ang = np.sort(np.abs(np.angle(roots)))[::2]
    expected = np.sort([(2 * np.pi * f / 16000) ** 0.8 for f in (500.0, 1500.0)])
    assert np.allclose(ang, expected, atol=1e-9)
    assert np.allclose(np.abs(roots), 0.97, atol=1e-9)


def test_pole_rotation_identity_and_real_poles():
    a = _resonator([700.0])
    a = np.convolve(a, [1.0, -0.5])  # one real pole stays put
    same, ok = transform_poles_batch(a[None, :], 1.0)
    assert ok[0] and np.allclose(same[0], a, atol=1e-12)
    new, _ = transform_poles_batch(a[None, :], 0.6)
    assert np.any(np.isclose(np.roots(new[0]), 0.5, atol=1e-9))
    assert np.allclose(np.imag(new), 0)


def test_pole_rotation_clamps_unstable():
    a = np.poly([1.2 * np.exp(0.5j), 1.2 * np.exp(-0.5j)]).real
    new, ok = transform_poles_batch(a[None, :], 0.9)
    assert ok[0]
    assert np.allclose(np.abs(np.roots(new[0])), 0.999)


def test_transform_poles_model(rng):
    model = lpc_analyze(rng.standard_normal(400), 10)
    with pytest.raises(ValueError):
        transform_poles(model, 1.5)
    out = transform_poles(model, 0.7)
    assert out.modified and out.coefficients[0] == 1.0


# ------------------------------------------------------------------ McAdams


def test_coefficient_policies():
    per_spk = parse_method("mcadams", mcadams_policy="per_speaker", seed=3)
    assert sample_mcadams_coefficient(per_spk, "u1", "s") == sample_mcadams_coefficient(per_spk, "u2", "s")
    per_utt = parse_method("mcadams", seed=3)
    draws = {sample_mcadams_coefficient(per_utt, f"u{i}", "s") for i in range(20)}
    assert len(draws) == 20 and all(0.5 < d < 0.9 for d in draws)
    fixed = parse_method("mcadams", mcadams_policy="fixed", mcadams_coeff=0.8)
    assert sample_mcadams_coefficient(fixed, "u", "s") == 0.8


def test_mcadams_identity(rng):
    x = AudioBuffer(scipy.signal.lfilter([1], [1, -0.9], rng.standard_normal(8000)) * 0.05, 16000)
    y = mcadams_anonymize(x, coeff=1.0)
    assert np.linalg.norm(y.samples - x.samples) / np.linalg.norm(x.samples) < 1e-3


def test_mcadams_preserves_length_and_peak(rng):
    x = AudioBuffer(0.2 * rng.standard_normal(5000), 16000)
    y = mcadams_anonymize(x, coeff=0.6)
    assert len(y) == len(x)
    assert np.max(np.abs(y.samples)) == pytest.approx(np.max(np.abs(x.samples)))
    assert not np.allclose(y.samples, x.samples)


def test_mcadams_silence_and_errors():
    z = mcadams_anonymize(AudioBuffer(np.zeros(1000), 16000), coeff=0.7)
    assert np.all(z.samples == 0)
    with pytest.raises(ValueError):
        mcadams_anonymize(AudioBuffer(np.zeros(1000), 16000), coeff=0.0)
    with pytest.raises(ValueError):
        mcadams_anonymize(AudioBuffer(np.zeros(1000), 16000))


def test_mcadams_is_deterministic(rng):
    x = AudioBuffer(0.2 * rng.standard_normal(4000), 16000)
    cfg = parse_method("mcadams", seed=9)
    a = mcadams_anonymize(x, cfg, utt_id="u")
    b = mcadams_anonymize(x, cfg, utt_id="u")
    assert np.array_equal(a.samples, b.samples)


# ---------------------------------------------------------------- featurize


@pytest.mark.parametrize("name", DEFAULT_METHODS + ("mel10+tau125",))
def test_featurize_every_method(name, noise_audio):
    fm = featurize(noise_audio, parse_method(name), utt_id="u", speaker_id="s")
    cfg = parse_method(name)
    assert fm.n_filters == cfg.n_mels
    assert np.all(np.isfinite(fm.features))
    assert fm.meta["method"] == name
    if cfg.mcadams:
        assert 0.5 < fm.meta["mcadams_coeff"] < 0.9


def test_lowfreq_removes_high_band():
    fs = 16000
    t = np.arange(fs) / fs
    hi = AudioBuffer(0.5 * np.sin(2 * np.pi * 3000 * t), fs)
    lo = AudioBuffer(0.5 * np.sin(2 * np.pi * 300 * t), fs)
    cfg = parse_method("lowfreq")
    e_hi = featurize(hi, cfg).features.max()
    e_lo = featurize(lo, cfg).features.max()
    assert e_lo - e_hi > np.log(1e5)


def test_featurize_logs_nothing_for_clean_input(noise_audio, caplog):
    with caplog.at_level(logging.WARNING):
        featurize(noise_audio, parse_method("mcadams"), utt_id="u")
    assert not [r for r in caplog.records if r.levelno >= logging.WARNING]
