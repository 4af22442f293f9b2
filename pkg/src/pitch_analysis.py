import logging
import math
import os
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from audio_core import AudioBuffer
from errors import InvalidContourError, TooShortError

PathLike = Union[str, os.PathLike]

SAMPLE_RATE = 24000
HOP_MS = 5.0
WINDOW_MS = 45.0
F0_MIN = 50.0
F0_MAX = 600.0

# frames whose best normalized difference exceeds this are unvoiced
VOICING_THRESHOLD = 0.85
# absolute threshold for picking the first dip (guards against octave errors)
DIP_THRESHOLD = 0.1
UNVOICED_FILL_HZ = 150.0

_FFT_SIZE = 2048
_FRAME_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class F0Contour:
    """Per-frame F0 (Hz, always positive) and voicing confidence at a 5 ms hop."""

    f0_hz: np.ndarray
    confidence: np.ndarray
    hop_ms: float = HOP_MS

    def __post_init__(self):
        f0 = np.array(self.f0_hz, dtype=np.float64, copy=True)
        conf = np.array(self.confidence, dtype=np.float64, copy=True)
        if f0.ndim != 1 or f0.shape != conf.shape:
            raise InvalidContourError(
                f"f0 and confidence must be 1-D and equally long, got {f0.shape} and {conf.shape}"
            )
        if len(f0) and (f0.min() < F0_MIN or f0.max() > F0_MAX or not np.all(np.isfinite(f0))):
            raise InvalidContourError(
                f"f0 values must lie in [{F0_MIN}, {F0_MAX}] Hz, got [{f0.min()}, {f0.max()}]"
            )
        if len(conf) and (conf.min() < 0.0 or conf.max() > 1.0 or not np.all(np.isfinite(conf))):
            raise InvalidContourError("confidence values must lie in [0, 1]")
        f0.setflags(write=False)
        conf.setflags(write=False)
        object.__setattr__(self, 'f0_hz', f0)
        object.__setattr__(self, 'confidence', conf)

    def __len__(self) -> int:
        return len(self.f0_hz)

    def voiced_mask(self) -> np.ndarray:
        """Frames whose confidence marks them as voiced."""
        return self.confidence >= 1.0 - VOICING_THRESHOLD

    def with_values(self, f0_hz: np.ndarray, confidence: np.ndarray) -> 'F0Contour':
        """Return a contour on the same hop with new values, clamped into range."""
        return F0Contour(
            np.clip(f0_hz, F0_MIN, F0_MAX), np.clip(confidence, 0.0, 1.0), self.hop_ms
        )

    def to_csv(self, path: PathLike) -> None:
        """Write `frame,f0_hz,confidence` rows with 6 decimals."""
        table = np.column_stack([np.arange(len(self)), self.f0_hz, self.confidence])
        np.savetxt(
            os.fspath(path), table, fmt=['%d', '%.6f', '%.6f'], delimiter=',',
            header='frame,f0_hz,confidence', comments=''
        )

    @classmethod
    def from_csv(cls, path: PathLike, hop_ms: float = HOP_MS) -> 'F0Contour':
        """Read a contour written by to_csv; the frame column is ignored."""
        table = np.loadtxt(os.fspath(path), delimiter=',', skiprows=1, ndmin=2)
        if table.size == 0:
            return cls(np.empty(0), np.empty(0), hop_ms)
        return cls(table[:, 1], table[:, 2], hop_ms)


def frame_geometry(sample_rate: int = SAMPLE_RATE):
    """Return (window, hop) in samples for the 45 ms / 5 ms analysis grid."""
    return int(round(WINDOW_MS * sample_rate / 1000.0)), int(round(HOP_MS * sample_rate / 1000.0))


def frame_count(num_samples: int, sample_rate: int = SAMPLE_RATE) -> int:
    """floor((N - win) / hop) + 1, or 0 when the signal is shorter than a window."""
    window, hop = frame_geometry(sample_rate)
    if num_samples < window:
        return 0
    return (num_samples - window) // hop + 1


def _normalized_difference(frames: np.ndarray, tau_max: int) -> np.ndarray:
    """Cumulative-mean-normalized difference for lags 0..tau_max of each frame row."""
    window = frames.shape[1]
    span = window - tau_max

    spectrum = np.fft.rfft(frames, _FFT_SIZE, axis=1)
    head = np.fft.rfft(frames[:, :span], _FFT_SIZE, axis=1)
    cross = np.fft.irfft(np.conj(head) * spectrum, _FFT_SIZE, axis=1)[:, :tau_max + 1]

    energy = np.concatenate(
        [np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1
    )
    lags = np.arange(tau_max + 1)
    head_energy = energy[:, span][:, None]
    lag_energy = energy[:, lags + span] - energy[:, lags]

    diff = np.maximum(head_energy + lag_energy - 2.0 * cross, 0.0)
    diff[:, 0] = 0.0

    running = np.cumsum(diff[:, 1:], axis=1)
    normalized = np.ones_like(diff)
    valid = running > 1e-20
    normalized[:, 1:] = np.where(valid, diff[:, 1:] * lags[1:] / np.where(valid, running, 1.0), 1.0)
    return normalized


def _pick_lags(search: np.ndarray) -> np.ndarray:
    """First dip under DIP_THRESHOLD walked down to its local minimum, else the global minimum."""
    rows = np.arange(search.shape[0])
    below = search < DIP_THRESHOLD
    has_dip = below.any(axis=1)
    index = np.where(has_dip, np.argmax(below, axis=1), np.argmin(search, axis=1))

    last = search.shape[1] - 1
    moving = has_dip.copy()
    while moving.any():
        step = np.minimum(index + 1, last)
        moving &= (step != index) & (search[rows, step] < search[rows, index])
        index = np.where(moving, step, index)
    return index


def _refine(search: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Parabolic interpolation of the minimum around each picked lag."""
    rows = np.arange(search.shape[0])
    inner = (index > 0) & (index < search.shape[1] - 1)
    left = search[rows, np.maximum(index - 1, 0)]
    centre = search[rows, index]
    right = search[rows, np.minimum(index + 1, search.shape[1] - 1)]
    curvature = left - 2.0 * centre + right
    ok = inner & (curvature > 0)
    shift = np.where(ok, (left - right) / (2.0 * np.where(ok, curvature, 1.0)), 0.0)
    return index + np.clip(shift, -1.0, 1.0)


def estimate_f0(audio: AudioBuffer) -> F0Contour:
    """Estimate F0 and voicing confidence on the 45 ms / 5 ms grid.

    Confidence is 1 - d_min of the normalized difference function; frames with
    d_min above VOICING_THRESHOLD are unvoiced and get linearly interpolated f0.
    """
    if audio.sample_rate != SAMPLE_RATE:
        raise ValueError(f"estimate_f0 expects {SAMPLE_RATE} Hz audio, got {audio.sample_rate}")
    window, hop = frame_geometry(audio.sample_rate)
    if len(audio) < window:
        raise TooShortError(f"Need at least {window} samples for one frame, got {len(audio)}")

    tau_min = int(math.floor(audio.sample_rate / F0_MAX))
    tau_max = int(math.ceil(audio.sample_rate / F0_MIN))
    frames = sliding_window_view(audio.samples, window)[::hop]

    lags = np.empty(len(frames))
    d_min = np.empty(len(frames))
    for start in range(0, len(frames), _FRAME_CHUNK):
        chunk = frames[start:start + _FRAME_CHUNK]
        search = _normalized_difference(chunk, tau_max)[:, tau_min:]
        picked = _pick_lags(search)
        lags[start:start + len(chunk)] = _refine(search, picked) + tau_min
        d_min[start:start + len(chunk)] = search.min(axis=1)

    f0 = np.clip(audio.sample_rate / lags, F0_MIN, F0_MAX)
    confidence = np.clip(1.0 - d_min, 0.0, 1.0)
    voiced = d_min <= VOICING_THRESHOLD

    if not voiced.any():
        f0 = np.full(len(frames), UNVOICED_FILL_HZ)
    elif not voiced.all():
        positions = np.arange(len(frames))
        f0 = np.interp(positions, positions[voiced], f0[voiced])

    logging.debug(f"Estimated f0 on {len(frames)} frames, {int(voiced.sum())} voiced")
    return F0Contour(f0, confidence)


def hz_to_semitone_ratio(semitones: float) -> float:
    """Frequency ratio for a shift of `semitones`: 2 ** (p / 12)."""
    if not math.isfinite(semitones):
        raise ValueError(f"Semitone shift must be finite, got {semitones}")
    return 2.0 ** (semitones / 12.0)


def window_frames(window_ms: float, hop_ms: float = HOP_MS) -> int:
    """Window length in frames, forced odd."""
    frames = max(int(round(window_ms / hop_ms)), 1)
    return frames if frames % 2 else frames + 1


def centered_moving_average(values: np.ndarray, frames: int) -> np.ndarray:
    """Centered moving average; windows shrink at the edges."""
    n = len(values)
    half = frames // 2
    totals = np.concatenate([[0.0], np.cumsum(values)])
    index = np.arange(n)
    lo = np.maximum(index - half, 0)
    hi = np.minimum(index + half + 1, n)
    return (totals[hi] - totals[lo]) / (hi - lo)


def causal_moving_average(values: np.ndarray, frames: int) -> np.ndarray:
    """Trailing moving average over the last `frames` values (zero lookahead)."""
    n = len(values)
    totals = np.concatenate([[0.0], np.cumsum(values)])
    index = np.arange(n)
    lo = np.maximum(index - frames + 1, 0)
    return (totals[index + 1] - totals[lo]) / (index + 1 - lo)


def smooth_contour(contour: F0Contour, window_ms: float) -> F0Contour:
    """Smooth f0 in the log-frequency domain; confidence is left untouched."""
    if not window_ms > 0:
        raise ValueError(f"Smoothing window must be positive, got {window_ms} ms")
    frames = window_frames(window_ms, contour.hop_ms)
    if frames == 1 or len(contour) == 0:
        return contour
    smoothed = centered_moving_average(np.log2(contour.f0_hz), frames)
    return contour.with_values(2.0 ** smoothed, contour.confidence)
