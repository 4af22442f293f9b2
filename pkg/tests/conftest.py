"""
Pytest configuration and fixtures for vcaug tests.
"""
import pytest
import os
import sys

import numpy as np

# Add src directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from audio_core import AudioBuffer, write_wav
from pitch_analysis import SAMPLE_RATE
from tests.signals import FakeNoiseBank, harmonic_tone, tone, vowel


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run tests marked slow')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long-running acceptance checks')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tone_220():
    """One second of a 220 Hz sine."""
    return tone(220.0, 1.0)


@pytest.fixture
def harmonic_220():
    """Two seconds of a harmonic-rich 220 Hz tone."""
    return harmonic_tone(220.0, 2.0)


@pytest.fixture
def vowel_100():
    """Two seconds of a synthetic vowel at 100 Hz with formants at 700/1220/2600 Hz."""
    return vowel(100.0, 2.0)


@pytest.fixture
def fake_noise_bank():
    """In-memory noise bank for scheme tests."""
    return FakeNoiseBank()


@pytest.fixture
def wav_corpus(tmp_path):
    """Factory writing `count` harmonic tones of `seconds` each into a fresh directory."""
    def make(count=3, seconds=0.5, name='corpus', sample_rate=SAMPLE_RATE):
        root = tmp_path / name
        root.mkdir()
        for index in range(count):
            audio = harmonic_tone(150.0 + 20.0 * index, seconds, sample_rate=sample_rate)
            write_wav(audio, root / f"utt_{index:03d}.wav")
        return root
    return make


@pytest.fixture
def noise_dir(tmp_path):
    """Directory with two mono white-noise files of 3 s."""
    root = tmp_path / 'noise'
    root.mkdir()
    rng = np.random.default_rng(123)
    for index in range(2):
        write_wav(AudioBuffer(0.2 * rng.standard_normal(3 * SAMPLE_RATE), SAMPLE_RATE),
                  root / f"noise_{index}.wav")
    return root
