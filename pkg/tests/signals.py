"""
Synthetic signals and helpers shared by the test suites.
"""
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

from audio_core import AudioBuffer
from features import cepstral_envelope
from pitch_analysis import SAMPLE_RATE, F0Contour, frame_count

VOWEL_FORMANTS = (700.0, 1220.0, 2600.0)
VOWEL_BANDWIDTHS = (80.0, 90.0, 120.0)


def tone(freq, seconds, amplitude=0.5, sample_rate=SAMPLE_RATE):
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    return AudioBuffer(amplitude * np.sin(2 * np.pi * freq * t), sample_rate)


def harmonic_tone(freq, seconds, harmonics=8, amplitude=0.5, sample_rate=SAMPLE_RATE):
    """Sum of harmonics with 1/k amplitudes, peak-scaled to `amplitude`."""
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    signal = sum(np.sin(2 * np.pi * k * freq * t) / k for k in range(1, harmonics + 1))
    return AudioBuffer(amplitude * signal / np.max(np.abs(signal)), sample_rate)


def vowel(f0, seconds, formants=VOWEL_FORMANTS, bandwidths=VOWEL_BANDWIDTHS,
          sample_rate=SAMPLE_RATE):
    """Pulse train at f0 through a cascade of two-pole resonators."""
    n = int(round(seconds * sample_rate))
    period = int(round(sample_rate / f0))
    signal = np.zeros(n)
    signal[::period] = 1.0
    for freq, bandwidth in zip(formants, bandwidths):
        r = np.exp(-np.pi * bandwidth / sample_rate)
        a = [1.0, -2.0 * r * np.cos(2 * np.pi * freq / sample_rate), r * r]
        signal = lfilter([1.0 - r], a, signal)
    return AudioBuffer(0.5 * signal / np.max(np.abs(signal)), sample_rate)


def constant_contour(audio, f0, confidence=1.0):
    frames = frame_count(len(audio), audio.sample_rate)
    return F0Contour(np.full(frames, f0), np.full(frames, confidence))


def average_envelope(audio, f0):
    """Mean cepstral envelope over 45 ms frames from the middle half of the signal."""
    frames = sliding_window_view(audio.samples, 1080)[::240]
    middle = frames[len(frames) // 4:3 * len(frames) // 4]
    envelopes = [cepstral_envelope(frame, f0) for frame in middle]
    mean = np.mean([e.log_magnitude for e in envelopes], axis=0)
    return mean, envelopes[0].frequencies


def peak_near(envelope, frequencies, target, tolerance=0.15):
    """Frequency of the envelope maximum within +-tolerance of target."""
    mask = (frequencies >= target * (1 - tolerance)) & (frequencies <= target * (1 + tolerance))
    return float(frequencies[mask][np.argmax(envelope[mask])])


def median_f0(contour):
    return float(np.median(contour.f0_hz[contour.voiced_mask()]))


class FakeNoiseBank:
    """In-memory noise source with the pick_segment interface."""

    def __init__(self, seconds=5.0, seed=1):
        self.noise = AudioBuffer(
            0.1 * np.random.default_rng(seed).standard_normal(int(seconds * SAMPLE_RATE)), SAMPLE_RATE
        )

    def pick_segment(self, num_samples, rng):
        offset = int(rng.integers(0, len(self.noise) - num_samples + 1))
        return self.noise.with_samples(self.noise.samples[offset:offset + num_samples]), {'offset': offset}


def tree_bytes(root: Path):
    """Map of relative path to file bytes for every file under root."""
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob('*')) if p.is_file()}
