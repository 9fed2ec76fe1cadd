import numpy as np
import pytest

from sceneaware.audio import AudioBuffer, write_audio

FS = 16000

# criterion number -> (title, passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS = {}


def speechlike(seconds, rng, fs=FS, level=0.3):
    """Amplitude-modulated noise standing in for a voiced stretch."""
    t = np.arange(int(round(seconds * fs))) / fs
    return level * rng.standard_normal(len(t)) * (0.6 + 0.4 * np.sin(2 * np.pi * 3.0 * t))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def speech_dirs(tmp_path):
    """clean/ with two recordings (one with a 3.5 s pause) and noise/ with one file."""
    r = np.random.default_rng(7)
    clean = tmp_path / "clean"
    (clean / "spk1").mkdir(parents=True)
    noise = tmp_path / "noise"
    noise.mkdir()
    rec1 = np.concatenate([speechlike(2.0, r), np.zeros(int(3.5 * FS)), speechlike(1.5, r)])
    write_audio(AudioBuffer(rec1, FS), clean / "spk1" / "rec1.wav")
    write_audio(AudioBuffer(speechlike(1.0, r), FS), clean / "rec2.wav")
    write_audio(AudioBuffer(0.1 * r.standard_normal(5 * FS), FS), noise / "n1.wav")
    return clean, noise


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n}. {title}: {detail}")
