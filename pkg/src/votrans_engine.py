import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from audio_core import AudioBuffer, peak_normalize
from errors import EmptyAudioError, InvalidParamsError
from features import (
    FFT_SIZE, LOG_FLOOR, lifter_cutoff, lifter_envelopes, warp_log_magnitude
)
from pitch_analysis import F0_MAX, F0_MIN, F0Contour, frame_geometry, hz_to_semitone_ratio

UNVOICED_SPACING_MS = 10.0
# marks snap to the deepest trough within this fraction of a period
SNAP_TOLERANCE = 0.1
MAX_SHIFT_SEMITONES = 12.0
# bound on the per-bin envelope correction, natural-log units
MAX_LOG_GAIN = 10.0

_GRAIN_CHUNK = 512


@dataclass(frozen=True, eq=False)
class PitchMarks:
    """Sample positions of voice pulses (one per period, every 10 ms when unvoiced)."""

    positions: np.ndarray
    source_len: int
    sample_rate: int

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.int64)
        if len(positions) > 1 and np.any(np.diff(positions) <= 0):
            raise ValueError("Pitch marks must be strictly increasing")
        object.__setattr__(self, 'positions', positions)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.positions)


@dataclass(frozen=True)
class VoTransParams:
    """Pitch shift in semitones and formant coupling kappa (0 keeps formants, 1 follows pitch)."""

    pitch_shift: float
    envelope_warp_kappa: float = 0.0

    def __post_init__(self):
        if not -MAX_SHIFT_SEMITONES <= self.pitch_shift <= MAX_SHIFT_SEMITONES:
            raise InvalidParamsError(f"pitch_shift must lie in [-12, 12], got {self.pitch_shift}")
        if not 0.0 <= self.envelope_warp_kappa <= 1.0:
            raise InvalidParamsError(
                f"envelope_warp_kappa must lie in [0, 1], got {self.envelope_warp_kappa}"
            )

    @property
    def pitch_ratio(self) -> float:
        return hz_to_semitone_ratio(self.pitch_shift)

    @property
    def envelope_warp(self) -> float:
        return hz_to_semitone_ratio(self.envelope_warp_kappa * self.pitch_shift)


@dataclass(frozen=True, eq=False)
class TransformResult:
    audio: AudioBuffer
    normalization_gain: float
    analysis_marks: int
    synthesis_grains: int


class _ContourLookup:
    """Maps sample positions to contour frames (frame k is centred at k*hop + win/2)."""

    def __init__(self, contour: F0Contour, sample_rate: int):
        self.window, self.hop = frame_geometry(sample_rate)
        self.sample_rate = sample_rate
        self.f0 = contour.f0_hz
        self.voiced = contour.voiced_mask()

    def frame(self, position: float) -> int:
        k = int(round((position - self.window / 2) / self.hop))
        return min(max(k, 0), len(self.f0) - 1)

    def period(self, position: float) -> Tuple[bool, float]:
        """(voiced, local period in samples) at a position."""
        if len(self.f0) == 0:
            return False, 0.0
        k = self.frame(position)
        return bool(self.voiced[k]), self.sample_rate / self.f0[k]


def detect_pitch_marks(audio: AudioBuffer, contour: F0Contour) -> PitchMarks:
    """Place one mark per local period, snapped to the deepest trough near the nominal spot."""
    x = audio.samples
    n = len(x)
    if n == 0:
        raise EmptyAudioError("Cannot place pitch marks on empty audio")

    sr = audio.sample_rate
    lookup = _ContourLookup(contour, sr)
    unvoiced_step = int(round(UNVOICED_SPACING_MS * sr / 1000.0))
    min_gap = int(math.ceil(sr / F0_MAX))
    max_gap = int(math.floor(sr / F0_MIN))

    voiced, period = lookup.period(0)
    first = int(np.argmin(x[:int(period) + 1])) if voiced else 0
    positions: List[int] = [first]

    t = first
    while True:
        voiced, period = lookup.period(t)
        if voiced:
            nominal = t + period
            radius = SNAP_TOLERANCE * period
            lo = max(int(math.ceil(nominal - radius)), t + min_gap)
            hi = min(int(math.floor(nominal + radius)), t + max_gap, n - 1)
            if lo > hi:
                break
            mark = lo + int(np.argmin(x[lo:hi + 1]))
        else:
            mark = t + unvoiced_step
        if mark >= n:
            break
        positions.append(mark)
        t = mark

    return PitchMarks(np.array(positions), n, sr)


def _local_periods(marks: PitchMarks, default: float) -> np.ndarray:
    """Mean of the gaps either side of each mark."""
    if len(marks) == 1:
        return np.array([default])
    gaps = marks.gaps.astype(np.float64)
    left = np.concatenate([gaps[:1], gaps])
    right = np.concatenate([gaps, gaps[-1:]])
    return 0.5 * (left + right)


def _analysis_grains(padded: np.ndarray, centres: np.ndarray, halves: np.ndarray,
                     warp: float) -> List[np.ndarray]:
    """Two-period Hann grains; with warp != 1 each grain's envelope is moved along frequency."""
    grains: List[np.ndarray] = []
    if warp == 1.0:
        for centre, half in zip(centres, halves):
            grains.append(padded[centre - half:centre + half + 1] * np.hanning(2 * half + 1))
        return grains

    mid = FFT_SIZE // 2
    for start in range(0, len(centres), _GRAIN_CHUNK):
        chunk_centres = centres[start:start + _GRAIN_CHUNK]
        chunk_halves = halves[start:start + _GRAIN_CHUNK]
        buffers = np.zeros((len(chunk_centres), FFT_SIZE))
        for row, (centre, half) in enumerate(zip(chunk_centres, chunk_halves)):
            buffers[row, mid - half:mid + half + 1] = (
                padded[centre - half:centre + half + 1] * np.hanning(2 * half + 1)
            )

        spectra = np.fft.rfft(buffers, axis=1)
        log_magnitude = np.log(np.maximum(np.abs(spectra), LOG_FLOOR))
        cutoffs = lifter_cutoff(chunk_halves)
        envelopes = lifter_envelopes(log_magnitude, cutoffs, FFT_SIZE)
        correction = np.clip(warp_log_magnitude(envelopes, warp) - envelopes, -MAX_LOG_GAIN, MAX_LOG_GAIN)
        filtered = np.fft.irfft(spectra * np.exp(correction), FFT_SIZE, axis=1)

        for row, (half, cutoff) in enumerate(zip(chunk_halves, cutoffs)):
            reach = half + int(cutoff)
            grains.append(filtered[row, mid - reach:mid + reach + 1])
    return grains


def transform(audio: AudioBuffer, contour: F0Contour, params: VoTransParams) -> TransformResult:
    """Pitch-synchronous overlap-add pitch shift with per-grain envelope warping.

    Output marks are respaced by 2^(-p/12) with grains duplicated or dropped so
    the duration is unchanged; kappa = 0 leaves each grain's envelope as analysed.
    """
    if not isinstance(params, VoTransParams):
        raise InvalidParamsError(f"Expected VoTransParams, got {type(params).__name__}")
    if len(audio) == 0:
        raise EmptyAudioError("Cannot transform empty audio")

    sr = audio.sample_rate
    n = len(audio)
    ratio = params.pitch_ratio
    lookup = _ContourLookup(contour, sr)
    unvoiced_step = UNVOICED_SPACING_MS * sr / 1000.0

    marks = detect_pitch_marks(audio, contour)
    periods = _local_periods(marks, unvoiced_step)
    halves = np.maximum(np.rint(periods).astype(np.int64), 1)
    voiced = np.array([lookup.period(p)[0] for p in marks.positions], dtype=bool)

    pad = int(2 * halves.max()) + 2
    padded = np.concatenate([np.zeros(pad), audio.samples, np.zeros(pad)])
    grains = _analysis_grains(padded, marks.positions + pad, halves, params.envelope_warp)

    out = np.zeros(len(padded))
    t_synth = float(marks.positions[0])
    synthesized = 0
    while t_synth < n:
        i = int(np.searchsorted(marks.positions, t_synth))
        if i == len(marks) or (i > 0 and t_synth - marks.positions[i - 1] <= marks.positions[i] - t_synth):
            i -= 1
        step = periods[i] / ratio if voiced[i] else periods[i]
        gain = step / periods[i]
        grain = grains[i]
        start = int(round(t_synth)) + pad - len(grain) // 2
        out[start:start + len(grain)] += gain * grain
        synthesized += 1
        t_synth += step

    result, norm_gain = peak_normalize(audio.with_samples(out[pad:pad + n]))
    if norm_gain != 1.0:
        logging.warning(f"VoTrans output overloaded, normalized with gain {norm_gain:.4f}")
    logging.debug(
        f"VoTrans p={params.pitch_shift:.3f} kappa={params.envelope_warp_kappa:.3f}: "
        f"{len(marks)} analysis marks, {synthesized} grains"
    )
    return TransformResult(result, norm_gain, len(marks), synthesized)
