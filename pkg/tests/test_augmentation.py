import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st

from privfeat.audio_core import AudioBuffer, AudioError, write_audio
from privfeat.augmentation import (
    NoiseSpec,
    RirSpec,
    colored_noise,
    convolve_rir,
    load_rir,
    measure_rt60,
    mix_noise,
    schroeder_curve,
    synthesize_rir,
)


def _speech(rng, n=16000):
    env = np.abs(np.sin(np.linspace(0, 6 * np.pi, n)))
    return AudioBuffer(0.3 * env * rng.standard_normal(n), 16000)


def _snr(speech, res):
    noise = res.audio.samples / res.gain - speech.samples
    return 10 * np.log10(np.mean(speech.samples**2) / np.mean(noise**2))


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 30), st.sampled_from(["white", "pink"]), st.integers(0, 1000))
def test_snr_is_exact(snr, kind, seed):
    speech = _speech(np.random.default_rng(seed))
    res = mix_noise(speech, NoiseSpec(kind, snr, seed), key="utt")
    assert abs(_snr(speech, res) - snr) < 0.01


def test_overflow_rescales_jointly(rng):
    speech = AudioBuffer(0.99 * np.sign(rng.standard_normal(8000)), 16000)
    res = mix_noise(speech, NoiseSpec("white", -10.0, 0))
    assert res.gain < 1.0
    assert np.max(np.abs(res.audio.samples)) <= 1.0 + 1e-12
    assert abs(_snr(speech, res) + 10.0) < 0.01


def test_mix_is_deterministic_per_key(rng):
    speech = _speech(rng)
    a = mix_noise(speech, NoiseSpec("pink", 5.0, 1), key="u1").audio.samples
    b = mix_noise(speech, NoiseSpec("pink", 5.0, 1), key="u1").audio.samples
    c = mix_noise(speech, NoiseSpec("pink", 5.0, 1), key="u2").audio.samples
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_silent_speech_is_an_error():
    with pytest.raises(AudioError):
        mix_noise(AudioBuffer(np.zeros(100), 16000), NoiseSpec())


def test_file_noise_is_looped(tmp_path, rng):
    write_audio(tmp_path / "n.wav", AudioBuffer(0.1 * rng.standard_normal(3000), 16000), subtype="FLOAT")
    speech = _speech(rng)
    res = mix_noise(speech, NoiseSpec(str(tmp_path / "n.wav"), 0.0, 2))
    assert abs(_snr(speech, res)) < 0.01


def test_pink_noise_slope(rng):
    x = colored_noise("pink", 1 << 16, rng)
    f, p = scipy.signal.welch(x, fs=16000, nperseg=4096)
    sel = (f > 100) & (f < 4000)
    slope = np.polyfit(np.log10(f[sel]), 10 * np.log10(p[sel]), 1)[0]
    assert -11.0 < slope < -9.0  # 1/f power: -10 dB per decade
    with pytest.raises(ValueError):
        colored_noise("brown", 10, rng)


@pytest.mark.parametrize("rt", [0.21, 0.37, 0.70])
def test_rt60_measured_within_5_percent(rt):
    est = [measure_rt60(synthesize_rir(RirSpec(rt60_s=rt, seed=s))) for s in range(20)]
    assert np.max(np.abs(np.array(est) - rt) / rt) < 0.05


def test_rir_structure():
    h = synthesize_rir(RirSpec(rt60_s=0.37, seed=1))
    assert len(h) == round(1.2 * 0.37 * 16000)
    assert np.sum(h.samples**2) == pytest.approx(1.0)
    # the direct path is the first tap; before normalization it is 1 against a unit-variance tail
    tail = h.samples[1:] / h.samples[0]
    assert h.samples[0] > 0
    assert np.std(tail[:800]) == pytest.approx(np.sqrt(np.mean(np.exp(-2 * 3 * np.log(10) / 0.37 * np.arange(1, 801) / 16000))), rel=0.1)


def test_rir_drr():
    for drr in (0.0, 10.0):
        h = synthesize_rir(RirSpec(rt60_s=0.5, seed=3, drr_db=drr)).samples
        assert 10 * np.log10(h[0] ** 2 / np.sum(h[1:] ** 2)) == pytest.approx(drr, abs=1e-9)
        assert measure_rt60(AudioBuffer(h, 16000)) == pytest.approx(0.5, rel=0.05)


def test_ideal_decay_measures_exactly():
    fs = 16000
    t = np.arange(int(0.8 * fs)) / fs
    h = AudioBuffer(np.exp(-3 * np.log(10) / 0.37 * t), fs)
    assert measure_rt60(h) == pytest.approx(0.37, rel=0.01)
    edc = schroeder_curve(h)
    assert edc[0] == 0.0 and np.all(np.diff(edc) <= 1e-12)


def test_rt60_errors():
    with pytest.raises(ValueError):
        RirSpec(rt60_s=0.0)
    with pytest.raises(ValueError):
        measure_rt60(AudioBuffer(np.r_[1.0, np.zeros(10)], 16000))


def test_convolution_keeps_length_and_peak(rng):
    speech = _speech(rng)
    out = convolve_rir(speech, synthesize_rir(RirSpec(rt60_s=0.7, seed=0)))
    assert len(out) == len(speech)
    assert np.max(np.abs(out.samples)) == pytest.approx(np.max(np.abs(speech.samples)))
    with pytest.raises(ValueError):
        convolve_rir(speech, AudioBuffer(np.ones(4), 8000))


def test_delta_rir_is_identity(rng):
    speech = _speech(rng)
    out = convolve_rir(speech, AudioBuffer(np.r_[1.0, np.zeros(99)], 16000))
    assert np.allclose(out.samples, speech.samples)


def test_load_rir_normalizes(tmp_path):
    write_audio(tmp_path / "h.wav", AudioBuffer(np.r_[0.5, 0.25, np.zeros(10)], 16000), subtype="FLOAT")
    h = load_rir(tmp_path / "h.wav")
    assert np.sum(h.samples**2) == pytest.approx(1.0)
