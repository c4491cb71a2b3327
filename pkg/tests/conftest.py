import numpy as np
import pytest

from privfeat.audio_core import AudioBuffer

ACCEPTANCE: dict = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}"
        if detail:
            line += f" -- {detail}"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tone():
    fs = 16000
    t = np.arange(fs) / fs
    return AudioBuffer(0.5 * np.sin(2 * np.pi * 440 * t), fs)


@pytest.fixture
def noise_audio(rng):
    return AudioBuffer(0.1 * rng.standard_normal(16000), 16000)
