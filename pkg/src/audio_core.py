import logging
import math
import os
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
from scipy import signal
from scipy.io import wavfile

from errors import (
    CorruptHeaderError, EmptyBufferError, IoFailureError, UnsupportedFormatError
)

PathLike = Union[str, os.PathLike]

# 16-bit scaling: v / 32768 on read, clamp to [-1, 32767/32768] on write
PCM16_SCALE = 32768.0
PCM16_MAX = 32767.0 / 32768.0

SINC_TAPS = 64
KAISER_BETA = 8.0
# irrational ratios (semitone shifts) are approximated by up/down integers
MAX_RATIO_DENOMINATOR = 1000


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono waveform with its sample rate. Samples are read-only float64."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.array(self.samples, dtype=np.float64, copy=True)
        if samples.ndim != 1:
            raise UnsupportedFormatError(f"AudioBuffer is mono only, got shape {samples.shape}")
        samples.setflags(write=False)
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'sample_rate', int(self.sample_rate))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples))) if len(self.samples) else 0.0

    def with_samples(self, samples: np.ndarray) -> 'AudioBuffer':
        """Return a buffer at the same rate holding new samples."""
        return AudioBuffer(samples, self.sample_rate)


def _load_wav_data(path: PathLike, mmap: bool = False) -> Tuple[int, np.ndarray]:
    """Open a WAV container and translate scipy's failures into toolkit errors."""
    try:
        with warnings.catch_warnings():
            # unknown chunks (LIST, bext...) are skipped with a warning
            warnings.simplefilter('ignore', wavfile.WavFileWarning)
            rate, data = wavfile.read(os.fspath(path), mmap=mmap)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        raise IoFailureError(f"Cannot open {path}: {e}") from e
    except ValueError as e:
        message = str(e)
        if 'Unknown wave file format' in message or 'Unsupported bit depth' in message:
            raise UnsupportedFormatError(f"{path}: {message}") from e
        raise CorruptHeaderError(f"{path}: {message}") from e
    except (EOFError, OSError) as e:
        raise CorruptHeaderError(f"{path}: {e}") from e
    return rate, data


def probe_wav(path: PathLike) -> Tuple[int, int, int]:
    """Return (sample_rate, frames, channels) without decoding the samples."""
    rate, data = _load_wav_data(path, mmap=True)
    channels = 1 if data.ndim == 1 else int(data.shape[1])
    return int(rate), int(data.shape[0]), channels


def read_wav(path: PathLike) -> AudioBuffer:
    """Read a mono PCM16 or float32 WAV file into a buffer scaled to [-1, 1]."""
    rate, data = _load_wav_data(path)

    if data.ndim != 1:
        raise UnsupportedFormatError(f"{path}: expected 1 channel, found {data.shape[1]}")

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedFormatError(f"{path}: sample format {data.dtype} is not PCM16 or float32")

    logging.debug(f"Read {path}: {len(samples)} samples at {rate} Hz")
    return AudioBuffer(samples, rate)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clamp and quantize to int16 with round-half-away-from-zero."""
    clamped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, PCM16_MAX)
    scaled = clamped * PCM16_SCALE
    return (np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int16)


def write_wav(buffer: AudioBuffer, path: PathLike) -> None:
    """Write a buffer as 16-bit PCM mono RIFF/WAVE."""
    if len(buffer) == 0:
        raise EmptyBufferError(f"Refusing to write empty buffer to {path}")
    try:
        wavfile.write(os.fspath(path), buffer.sample_rate, quantize_pcm16(buffer.samples))
    except OSError as e:
        raise IoFailureError(f"Cannot write {path}: {e}") from e


@lru_cache(maxsize=32)
def _sinc_filter(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass with SINC_TAPS taps per polyphase branch."""
    max_rate = max(up, down)
    return signal.firwin(SINC_TAPS * max_rate + 1, 1.0 / max_rate, window=('kaiser', KAISER_BETA))


def _band_limited(samples: np.ndarray, ratio: Fraction, out_len: int) -> np.ndarray:
    """Polyphase resampling by `ratio`, trimmed or padded to exactly `out_len` samples."""
    if len(samples) == 0 or out_len == 0:
        return np.zeros(out_len)
    up, down = ratio.numerator, ratio.denominator
    out = signal.resample_poly(samples, up, down, window=_sinc_filter(up, down))
    if len(out) >= out_len:
        return out[:out_len]
    return np.concatenate([out, np.zeros(out_len - len(out))])


def resample_by_ratio(buffer: AudioBuffer, ratio: float) -> AudioBuffer:
    """Stretch the sample count by `ratio` keeping the nominal sample rate.

    Used for varispeed pitch shifting; `resample` is the rate-changing form.
    """
    if not ratio > 0:
        raise ValueError(f"Resampling ratio must be positive, got {ratio}")
    if ratio == 1.0:
        return buffer
    out_len = int(round(len(buffer) * ratio))
    fraction = Fraction(ratio).limit_denominator(MAX_RATIO_DENOMINATOR)
    return buffer.with_samples(_band_limited(buffer.samples, fraction, out_len))


def resample(buffer: AudioBuffer, target_rate: int) -> AudioBuffer:
    """Band-limited resampling to `target_rate`; length is round(N * target / source)."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == buffer.sample_rate:
        return buffer
    out_len = int(round(len(buffer) * target_rate / buffer.sample_rate))
    ratio = Fraction(target_rate, buffer.sample_rate)
    return AudioBuffer(_band_limited(buffer.samples, ratio, out_len), target_rate)


def measure_rms(buffer: AudioBuffer) -> float:
    """Root mean square of the samples."""
    if len(buffer) == 0:
        raise EmptyBufferError("RMS of an empty buffer is undefined")
    return math.sqrt(float(np.mean(np.square(buffer.samples))))


def peak_normalize(buffer: AudioBuffer) -> Tuple[AudioBuffer, float]:
    """Scale down to peak 1.0 when the buffer overloads. Returns (buffer, gain)."""
    peak = buffer.peak
    if peak <= 1.0:
        return buffer, 1.0
    gain = 1.0 / peak
    logging.debug(f"Peak {peak:.4f} exceeds full scale, normalizing with gain {gain:.6f}")
    return buffer.with_samples(buffer.samples * gain), gain
