import json
import logging
import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Union

import librosa
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from audio_core import AudioBuffer
from errors import FrameTooShortError, TooShortError
from pitch_analysis import F0_MAX, F0_MIN, HOP_MS, SAMPLE_RATE, WINDOW_MS, frame_geometry

PathLike = Union[str, os.PathLike]

N_MELS = 80
FFT_SIZE = 2048
MEL_FMAX = 12000.0
MEL_SCALE = 'slaney'
LOG_FLOOR = 1e-10
# lifter cutoff in periods of f0
LIFTER_PERIODS = 0.8

_FRAME_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    """Log-mel frames (frames x n_mels), natural log with a 1e-10 floor."""

    frames: np.ndarray
    sample_rate: int
    n_mels: int = N_MELS
    win_ms: float = WINDOW_MS
    hop_ms: float = HOP_MS
    mel_scale: str = MEL_SCALE

    def sidecar(self) -> Dict[str, Any]:
        """Metadata needed to reinterpret the raw float32 file."""
        return {
            'frames': int(self.frames.shape[0]),
            'n_mels': self.n_mels,
            'win_ms': self.win_ms,
            'hop_ms': self.hop_ms,
            'sample_rate': self.sample_rate,
            'mel_scale': self.mel_scale,
            'log_floor': LOG_FLOOR,
            'dtype': 'float32-le',
            'layout': 'row-major frames x n_mels',
        }

    def save(self, path: PathLike) -> Path:
        """Write raw little-endian float32 rows plus a JSON sidecar next to them."""
        path = Path(path)
        self.frames.astype('<f4').tofile(path)
        sidecar_path = path.with_suffix('.json')
        sidecar_path.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + '\n')
        logging.info(f"Mel spectrogram written: {path} ({self.frames.shape[0]} frames)")
        return sidecar_path


@dataclass(frozen=True, eq=False)
class SpectralEnvelope:
    """Smooth log-magnitude curve over fft_size // 2 + 1 linear frequency bins."""

    log_magnitude: np.ndarray
    fft_size: int
    sample_rate: int

    def __post_init__(self):
        if len(self.log_magnitude) != self.fft_size // 2 + 1:
            raise ValueError(
                f"Envelope has {len(self.log_magnitude)} bins, expected {self.fft_size // 2 + 1}"
            )
        if not np.all(np.isfinite(self.log_magnitude)):
            raise ValueError("Envelope values must be finite")

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(len(self.log_magnitude)) * self.sample_rate / self.fft_size


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, fft_size: int, n_mels: int, fmax: float) -> np.ndarray:
    """Slaney-scale triangular filters, shape (n_mels, fft_size // 2 + 1)."""
    return librosa.filters.mel(
        sr=sample_rate, n_fft=fft_size, n_mels=n_mels, fmin=0.0, fmax=fmax,
        htk=False, norm='slaney'
    )


def mel_spectrogram(audio: AudioBuffer) -> MelSpectrogram:
    """Hann 45 ms / hop 5 ms STFT, FFT 2048, 80 mel bands 0-12 kHz, natural log."""
    if audio.sample_rate != SAMPLE_RATE:
        raise ValueError(f"mel_spectrogram expects {SAMPLE_RATE} Hz audio, got {audio.sample_rate}")
    window_len, hop = frame_geometry(audio.sample_rate)
    if len(audio) < window_len:
        raise TooShortError(f"Need at least {window_len} samples, got {len(audio)}")

    window = get_window('hann', window_len, fftbins=True)
    filters = mel_filterbank(audio.sample_rate, FFT_SIZE, N_MELS, MEL_FMAX)
    frames = sliding_window_view(audio.samples, window_len)[::hop]

    out = np.empty((len(frames), N_MELS))
    for start in range(0, len(frames), _FRAME_CHUNK):
        chunk = frames[start:start + _FRAME_CHUNK] * window
        magnitude = np.abs(np.fft.rfft(chunk, FFT_SIZE, axis=1))
        out[start:start + len(chunk)] = np.log(np.maximum(magnitude @ filters.T, LOG_FLOOR))

    return MelSpectrogram(out, audio.sample_rate)


def lifter_envelopes(log_magnitude: np.ndarray, cutoffs: np.ndarray, fft_size: int) -> np.ndarray:
    """Low-pass lifter rows of log-magnitude spectra, keeping quefrencies <= cutoff samples."""
    cepstra = np.fft.irfft(log_magnitude, fft_size, axis=-1)
    quefrency = np.minimum(np.arange(fft_size), fft_size - np.arange(fft_size))
    keep = quefrency[None, :] <= np.atleast_1d(cutoffs)[:, None]
    return np.fft.rfft(cepstra * keep, fft_size, axis=-1).real.reshape(log_magnitude.shape)


def lifter_cutoff(period_samples) -> np.ndarray:
    """Quefrency cutoff, in samples, for a local period."""
    return np.floor(LIFTER_PERIODS * np.asarray(period_samples, dtype=np.float64)).astype(np.int64)


def cepstral_envelope(frame: np.ndarray, f0_hz: float, sample_rate: int = SAMPLE_RATE,
                      fft_size: int = FFT_SIZE) -> SpectralEnvelope:
    """Spectral envelope of one frame by cepstral liftering with cutoff 0.8 / f0 seconds."""
    if not F0_MIN <= f0_hz <= F0_MAX:
        raise ValueError(f"f0 must lie in [{F0_MIN}, {F0_MAX}] Hz, got {f0_hz}")
    frame = np.asarray(frame, dtype=np.float64)
    period = sample_rate / f0_hz
    if len(frame) < 2 * period:
        raise FrameTooShortError(
            f"Frame of {len(frame)} samples is shorter than two periods ({2 * period:.1f}) of {f0_hz} Hz"
        )
    while fft_size < len(frame):
        fft_size *= 2

    windowed = frame * get_window('hann', len(frame), fftbins=True)
    log_magnitude = np.log(np.maximum(np.abs(np.fft.rfft(windowed, fft_size)), LOG_FLOOR))
    envelope = lifter_envelopes(log_magnitude[None, :], lifter_cutoff([period]), fft_size)[0]
    return SpectralEnvelope(envelope, fft_size, sample_rate)


def warp_log_magnitude(log_magnitude: np.ndarray, factor: float) -> np.ndarray:
    """Move spectral content at F to F * factor along the last axis; edges hold their value."""
    bins = log_magnitude.shape[-1]
    source = np.clip(np.arange(bins) / factor, 0.0, bins - 1)
    lower = np.floor(source).astype(np.int64)
    upper = np.minimum(lower + 1, bins - 1)
    frac = source - lower
    return log_magnitude[..., lower] * (1.0 - frac) + log_magnitude[..., upper] * frac


def warp_envelope_axis(envelope: SpectralEnvelope, factor: float) -> SpectralEnvelope:
    """Warp the frequency axis of an envelope by `factor` in [0.25, 4]."""
    if not 0.25 <= factor <= 4.0:
        raise ValueError(f"Warp factor must lie in [0.25, 4], got {factor}")
    if factor == 1.0:
        return envelope
    return SpectralEnvelope(
        warp_log_magnitude(envelope.log_magnitude, factor), envelope.fft_size, envelope.sample_rate
    )
