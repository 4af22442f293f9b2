import hashlib
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Deque, Dict, Optional, Tuple

import numpy as np

from audio_core import AudioBuffer, measure_rms, peak_normalize, resample_by_ratio
from errors import (
    EmptyAudioError, InvalidShiftError, MissingNoiseBankError, SampleRateMismatchError,
    SilentInputError, UninitializedStateError
)
from pitch_analysis import (
    F0_MAX, F0_MIN, F0Contour, centered_moving_average, estimate_f0, smooth_contour,
    window_frames
)
from votrans_engine import MAX_SHIFT_SEMITONES, VoTransParams, transform

# waveform-similarity overlap-add geometry for the plain pitch shifter
WSOLA_SEGMENT_MS = 30.0
WSOLA_OVERLAP_MS = 10.0
WSOLA_SEARCH_MS = 5.0

SEED_LIMIT = 2 ** 64


class Scheme(str, Enum):
    """Augmentation schemes; values are the command-line names."""

    CLEAN = 'clean'
    NOISY = 'noisy'
    NOISY_F0 = 'noisyf0'
    NOISY_F0_SM = 'noisyf0-sm'
    SOX = 'sox'
    VOTRANS = 'votrans'
    NOISY_F0_VT = 'noisyf0-vt'
    NOISY_F0_VT_SOX = 'noisyf0-vt-sox'

    @classmethod
    def parse(cls, name: str) -> 'Scheme':
        """Case-insensitive lookup by command-line name."""
        try:
            return cls(name.strip().lower())
        except ValueError:
            choices = ', '.join(s.value for s in cls)
            raise ValueError(f"Unknown scheme '{name}'. Choose one of: {choices}") from None

    @property
    def modifies_audio(self) -> bool:
        return self in _AUDIO_SCHEMES

    @property
    def needs_noise(self) -> bool:
        return self is Scheme.NOISY


_AUDIO_SCHEMES = {
    Scheme.NOISY, Scheme.SOX, Scheme.VOTRANS, Scheme.NOISY_F0_VT, Scheme.NOISY_F0_VT_SOX
}
DEFAULT_COPIES = {Scheme.SOX: 10, Scheme.VOTRANS: 10}


@dataclass(frozen=True)
class NoiseParams:
    snr_low: float = 4.0
    snr_high: float = 12.0
    segments_per_clean: int = 5
    white_noise: bool = False

    def __post_init__(self):
        if self.snr_low > self.snr_high:
            raise ValueError(f"snr_low {self.snr_low} exceeds snr_high {self.snr_high}")
        if self.segments_per_clean < 1:
            raise ValueError("segments_per_clean must be at least 1")


@dataclass(frozen=True)
class F0NoiseParams:
    """Variances are in semitones^2 (f0) and confidence units^2."""

    f0_variance: float = 0.25
    conf_variance: float = 0.215
    smooth_window_low_ms: float = 100.0
    smooth_window_high_ms: float = 300.0
    noise_smooth_divisor: float = 2.0

    def __post_init__(self):
        if self.f0_variance < 0 or self.conf_variance < 0:
            raise ValueError("Noise variances must be non-negative")
        if not 0 < self.smooth_window_low_ms <= self.smooth_window_high_ms:
            raise ValueError(
                f"Invalid smoothing window range [{self.smooth_window_low_ms}, {self.smooth_window_high_ms}]"
            )
        if self.noise_smooth_divisor <= 0:
            raise ValueError("noise_smooth_divisor must be positive")


@dataclass(frozen=True)
class PitchShiftParams:
    sox_variance: float = 3.0
    sox_cap: float = 8.0
    votrans_low: float = -12.0
    votrans_high: float = 12.0
    kappa_low: float = 0.0
    kappa_high: float = 1.0

    def __post_init__(self):
        if self.sox_variance < 0:
            raise ValueError("sox_variance must be non-negative")
        if self.sox_cap <= 0:
            raise ValueError("sox_cap must be positive")
        if not -MAX_SHIFT_SEMITONES <= self.votrans_low <= self.votrans_high <= MAX_SHIFT_SEMITONES:
            raise ValueError(f"Invalid VoTrans range [{self.votrans_low}, {self.votrans_high}]")
        if not 0.0 <= self.kappa_low <= self.kappa_high <= 1.0:
            raise ValueError(f"Invalid kappa range [{self.kappa_low}, {self.kappa_high}]")


@dataclass(frozen=True)
class AugmentationSpec:
    scheme: Scheme
    seed: int = 0
    copies_per_input: Optional[int] = None
    noise: NoiseParams = field(default_factory=NoiseParams)
    f0_noise: F0NoiseParams = field(default_factory=F0NoiseParams)
    pitch_shift: PitchShiftParams = field(default_factory=PitchShiftParams)

    def __post_init__(self):
        object.__setattr__(self, 'scheme', Scheme(self.scheme))
        if not 0 <= int(self.seed) < SEED_LIMIT:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        copies = self.copies_per_input
        if copies is None:
            if self.scheme is Scheme.NOISY:
                copies = self.noise.segments_per_clean
            else:
                copies = DEFAULT_COPIES.get(self.scheme, 1)
        if copies < 1:
            raise ValueError(f"copies_per_input must be at least 1, got {copies}")
        object.__setattr__(self, 'copies_per_input', int(copies))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['scheme'] = self.scheme.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'AugmentationSpec':
        return cls(
            scheme=Scheme.parse(data['scheme']),
            seed=int(data.get('seed', 0)),
            copies_per_input=data.get('copies_per_input'),
            noise=NoiseParams(**data.get('noise', {})),
            f0_noise=F0NoiseParams(**data.get('f0_noise', {})),
            pitch_shift=PitchShiftParams(**data.get('pitch_shift', {})),
        )


@dataclass(frozen=True, eq=False)
class MixResult:
    audio: AudioBuffer
    pre_normalization: AudioBuffer
    noise_gain: float
    normalization_gain: float


@dataclass(frozen=True, eq=False)
class AugmentationResult:
    audio: AudioBuffer
    contour: F0Contour
    provenance: Dict[str, Any]
    audio_modified: bool


def derive_seed(seed: int, input_id: str, copy_index: int) -> int:
    """64-bit stream key for one (input, copy) pair, independent of processing order."""
    key = f"{int(seed)}:{input_id}:{int(copy_index)}".encode('utf-8')
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), 'little')


def derive_rng(seed: int, input_id: str, copy_index: int) -> np.random.Generator:
    """PCG64 generator for one (input, copy) pair.

    Every random draw of an augmentation comes from this generator, so the same
    seed reproduces a copy no matter which worker or in which order it runs.
    """
    return np.random.Generator(np.random.PCG64(derive_seed(seed, input_id, copy_index)))


def sample_snr(rng: np.random.Generator, params: NoiseParams = NoiseParams()) -> float:
    """SNR in dB drawn from U(snr_low, snr_high)."""
    return float(rng.uniform(params.snr_low, params.snr_high))


def clamp_sox_shift(raw: float, cap: float = 8.0) -> float:
    """Symmetric magnitude clamp of a drawn shift."""
    return max(-cap, min(cap, raw))


def draw_sox_shift(rng: np.random.Generator,
                   params: PitchShiftParams = PitchShiftParams()) -> Tuple[float, float]:
    """(raw, clamped) semitone shift, raw ~ N(0, sox_variance)."""
    raw = float(rng.normal(0.0, math.sqrt(params.sox_variance)))
    return raw, clamp_sox_shift(raw, params.sox_cap)


def sample_sox_shift(rng: np.random.Generator,
                     params: PitchShiftParams = PitchShiftParams()) -> float:
    """Plain pitch shift in semitones, N(0, sox_variance) clamped to +-sox_cap."""
    return draw_sox_shift(rng, params)[1]


def sample_votrans_params(rng: np.random.Generator,
                          params: PitchShiftParams = PitchShiftParams()) -> VoTransParams:
    """p ~ U(votrans_low, votrans_high) semitones, kappa ~ U(kappa_low, kappa_high)."""
    shift = float(rng.uniform(params.votrans_low, params.votrans_high))
    kappa = float(rng.uniform(params.kappa_low, params.kappa_high))
    return VoTransParams(shift, kappa)


def sample_smoothing_window(rng: np.random.Generator,
                            params: F0NoiseParams = F0NoiseParams()) -> float:
    """Smoothing window S in ms drawn from U(low, high)."""
    return float(rng.uniform(params.smooth_window_low_ms, params.smooth_window_high_ms))


def noise_smoothing_window_ms(window_ms: float, params: F0NoiseParams = F0NoiseParams()) -> float:
    """Window for smoothing the f0 noise of NoisyF0-SM: S / noise_smooth_divisor."""
    return window_ms / params.noise_smooth_divisor


def measured_snr(clean: AudioBuffer, scaled_noise: np.ndarray) -> float:
    """20 log10(rms(clean) / rms(noise)) in dB."""
    noise_rms = math.sqrt(float(np.mean(np.square(scaled_noise))))
    return 20.0 * math.log10(measure_rms(clean) / noise_rms)


def white_noise_segment(num_samples: int, sample_rate: int,
                        rng: np.random.Generator) -> AudioBuffer:
    """Unit-variance Gaussian noise; mix_at_snr sets its level."""
    return AudioBuffer(rng.standard_normal(num_samples), sample_rate)


def mix_at_snr(clean: AudioBuffer, noise: AudioBuffer, snr_db: float) -> MixResult:
    """clean + g * noise with g chosen so the mixture has the requested SNR."""
    if clean.sample_rate != noise.sample_rate:
        raise SampleRateMismatchError(
            f"Clean audio is {clean.sample_rate} Hz but noise is {noise.sample_rate} Hz"
        )
    if len(noise) < len(clean):
        raise ValueError(f"Noise has {len(noise)} samples, clean needs {len(clean)}")

    segment = noise.samples[:len(clean)]
    clean_rms = measure_rms(clean)
    noise_rms = math.sqrt(float(np.mean(np.square(segment)))) if len(segment) else 0.0
    if clean_rms == 0.0 or noise_rms == 0.0:
        raise SilentInputError("Cannot mix at an SNR when clean or noise RMS is zero")

    gain = clean_rms / (noise_rms * 10.0 ** (snr_db / 20.0))
    mixture = clean.with_samples(clean.samples + gain * segment)
    normalized, norm_gain = peak_normalize(mixture)
    return MixResult(normalized, mixture, gain, norm_gain)


def _frame_noise_update(f0: np.ndarray, conf: np.ndarray, f0_noise: np.ndarray,
                        conf_noise: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Apply semitone f0 noise and additive confidence noise, clamped into range."""
    return (
        np.clip(f0 * np.exp2(f0_noise / 12.0), F0_MIN, F0_MAX),
        np.clip(conf + conf_noise, 0.0, 1.0),
    )


def perturb_f0(contour: F0Contour, params: F0NoiseParams, rng: np.random.Generator) -> F0Contour:
    """i.i.d. per-frame noise: f0 * 2^(x/12), x ~ N(0, f0_variance); conf + y, y ~ N(0, conf_variance)."""
    normals = rng.standard_normal((len(contour), 2))
    f0, conf = _frame_noise_update(
        contour.f0_hz, contour.confidence,
        math.sqrt(params.f0_variance) * normals[:, 0],
        math.sqrt(params.conf_variance) * normals[:, 1],
    )
    return contour.with_values(f0, conf)


def _perturb_f0_smoothed(contour: F0Contour, params: F0NoiseParams, rng: np.random.Generator,
                         window_ms: Optional[float] = None) -> Tuple[F0Contour, float]:
    if window_ms is None:
        window_ms = sample_smoothing_window(rng, params)
    base = smooth_contour(contour, window_ms)
    normals = rng.standard_normal((len(contour), 2))
    noise_frames = window_frames(noise_smoothing_window_ms(window_ms, params), contour.hop_ms)
    smoothed_noise = centered_moving_average(
        math.sqrt(params.f0_variance) * normals[:, 0], noise_frames
    ) if len(contour) else np.empty(0)
    f0, conf = _frame_noise_update(
        base.f0_hz, contour.confidence, smoothed_noise,
        math.sqrt(params.conf_variance) * normals[:, 1],
    )
    return contour.with_values(f0, conf), window_ms


def perturb_f0_smoothed(contour: F0Contour, params: F0NoiseParams,
                        rng: np.random.Generator) -> F0Contour:
    """Smooth the contour with S ~ U(100, 300) ms, then add noise smoothed over S / divisor."""
    return _perturb_f0_smoothed(contour, params, rng)[0]


@dataclass
class StreamingState:
    """Per-stream state for online control perturbation. Single owner; not shared."""

    scheme: Scheme
    params: F0NoiseParams
    rng: np.random.Generator
    window_ms: Optional[float] = None
    log_f0_history: Deque[float] = field(default_factory=deque)
    noise_history: Deque[float] = field(default_factory=deque)
    frames_seen: int = 0


def init_stream(scheme: Scheme, params: F0NoiseParams, rng: np.random.Generator,
                window_ms: Optional[float] = None) -> StreamingState:
    """Create streaming state; for NoisyF0-SM the window S is drawn here, once per stream."""
    scheme = Scheme(scheme)
    if scheme not in (Scheme.NOISY_F0, Scheme.NOISY_F0_SM):
        raise ValueError(f"Scheme {scheme.value} has no online form")
    state = StreamingState(scheme, params, rng)
    if scheme is Scheme.NOISY_F0_SM:
        state.window_ms = window_ms if window_ms is not None else sample_smoothing_window(rng, params)
        state.log_f0_history = deque(maxlen=window_frames(state.window_ms))
        state.noise_history = deque(
            maxlen=window_frames(noise_smoothing_window_ms(state.window_ms, params))
        )
    return state


def stream_perturb_f0(frame_f0: float, frame_conf: float,
                      state: StreamingState) -> Tuple[float, float, StreamingState]:
    """Perturb one frame. NoisyF0 matches perturb_f0 exactly; NoisyF0-SM uses causal windows."""
    if not isinstance(state, StreamingState):
        raise UninitializedStateError("stream_perturb_f0 needs a state from init_stream")

    normals = state.rng.standard_normal(2)
    f0_noise = math.sqrt(state.params.f0_variance) * normals[0]
    conf_noise = math.sqrt(state.params.conf_variance) * normals[1]
    base = np.array([frame_f0], dtype=np.float64)

    if state.scheme is Scheme.NOISY_F0_SM:
        if state.window_ms is None:
            raise UninitializedStateError("NoisyF0-SM stream has no smoothing window")
        state.log_f0_history.append(math.log2(frame_f0))
        state.noise_history.append(f0_noise)
        base = np.exp2(np.array([np.mean(state.log_f0_history)]))
        f0_noise = float(np.mean(state.noise_history))

    f0, conf = _frame_noise_update(
        base, np.array([frame_conf], dtype=np.float64),
        np.array([f0_noise]), np.array([conf_noise]),
    )
    state.frames_seen += 1
    return float(f0[0]), float(conf[0]), state


def stream_contour(contour: F0Contour, state: StreamingState) -> F0Contour:
    """Drive stream_perturb_f0 over every frame of a contour in order."""
    f0 = np.empty(len(contour))
    conf = np.empty(len(contour))
    for k in range(len(contour)):
        f0[k], conf[k], state = stream_perturb_f0(contour.f0_hz[k], contour.confidence[k], state)
    return contour.with_values(f0, conf)


def time_stretch(buffer: AudioBuffer, target_length: int) -> AudioBuffer:
    """WSOLA time-scale modification to exactly `target_length` samples."""
    x = buffer.samples
    if len(x) == 0:
        raise EmptyAudioError("Cannot time-stretch empty audio")
    sr = buffer.sample_rate
    segment = int(round(WSOLA_SEGMENT_MS * sr / 1000.0))
    overlap = int(round(WSOLA_OVERLAP_MS * sr / 1000.0))
    tolerance = int(round(WSOLA_SEARCH_MS * sr / 1000.0))
    hop_out = segment - overlap
    hop_in = hop_out * len(x) / target_length

    padded = np.concatenate([
        np.zeros(tolerance), x, np.zeros(segment + overlap + 2 * tolerance + int(math.ceil(hop_in)))
    ])
    fade_in = 0.5 - 0.5 * np.cos(np.pi * (np.arange(overlap) + 0.5) / overlap)
    fade_out = 1.0 - fade_in

    out = np.zeros(target_length + segment)
    out[:segment] = padded[tolerance:tolerance + segment]
    previous = 0
    k = 1
    while k * hop_out < target_length:
        start = k * hop_out
        nominal = int(round(k * hop_in))
        natural = padded[tolerance + previous + hop_out:tolerance + previous + hop_out + overlap]
        region = padded[nominal:nominal + 2 * tolerance + overlap]
        similarity = np.correlate(region, natural, mode='valid')
        chosen = nominal + int(np.argmax(similarity)) - tolerance
        piece = padded[tolerance + chosen:tolerance + chosen + segment]
        out[start:start + overlap] = out[start:start + overlap] * fade_out + piece[:overlap] * fade_in
        out[start + overlap:start + segment] = piece[overlap:]
        previous = chosen
        k += 1

    return buffer.with_samples(out[:target_length])


def pitch_shift_plain(audio: AudioBuffer, semitones: float) -> AudioBuffer:
    """Varispeed by 2^(-p/12) then WSOLA back to the input length. Formants move with pitch."""
    if not math.isfinite(semitones) or abs(semitones) > MAX_SHIFT_SEMITONES:
        raise InvalidShiftError(f"Plain pitch shift must lie in [-12, 12], got {semitones}")
    if semitones == 0:
        return audio
    ratio = 2.0 ** (semitones / 12.0)
    squeezed = resample_by_ratio(audio, 1.0 / ratio)
    return time_stretch(squeezed, len(audio))


def _add_noise(audio: AudioBuffer, noise_bank: Any, spec: AugmentationSpec,
               rng: np.random.Generator, draws: Dict[str, Any]) -> Tuple[AudioBuffer, float]:
    snr = sample_snr(rng, spec.noise)
    draws['snr_db'] = snr
    if spec.noise.white_noise:
        noise = white_noise_segment(len(audio), audio.sample_rate, rng)
        draws['noise_source'] = 'white'
    else:
        if noise_bank is None:
            raise MissingNoiseBankError("Scheme noisy needs a noise bank (or white_noise=True)")
        noise, pick = noise_bank.pick_segment(len(audio), rng)
        draws['noise_source'] = 'bank'
        draws.update({f"noise_{key}": value for key, value in pick.items()})
    mix = mix_at_snr(audio, noise, snr)
    draws['noise_gain'] = mix.noise_gain
    return mix.audio, mix.normalization_gain


def _apply_votrans(audio: AudioBuffer, contour: F0Contour, spec: AugmentationSpec,
                   rng: np.random.Generator, draws: Dict[str, Any]) -> Tuple[AudioBuffer, F0Contour, float]:
    params = sample_votrans_params(rng, spec.pitch_shift)
    draws['votrans_pitch_shift'] = params.pitch_shift
    draws['votrans_kappa'] = params.envelope_warp_kappa
    result = transform(audio, contour, params)
    return result.audio, estimate_f0(result.audio), result.normalization_gain


def _apply_sox(audio: AudioBuffer, contour: F0Contour, spec: AugmentationSpec,
               rng: np.random.Generator, draws: Dict[str, Any]) -> Tuple[AudioBuffer, F0Contour]:
    raw, shift = draw_sox_shift(rng, spec.pitch_shift)
    draws['sox_shift_raw'] = raw
    draws['sox_shift'] = shift
    if shift == 0:
        return audio, contour
    shifted = pitch_shift_plain(audio, shift)
    return shifted, estimate_f0(shifted)


def apply_scheme(audio: AudioBuffer, contour: F0Contour, noise_bank: Any,
                 spec: AugmentationSpec, copy_index: int,
                 input_id: str = '') -> AugmentationResult:
    """Run one scheme on one input with the rng stream of (seed, input_id, copy_index).

    `noise_bank` is anything with pick_segment(num_samples, rng) -> (AudioBuffer, dict).
    """
    rng = derive_rng(spec.seed, input_id, copy_index)
    scheme = spec.scheme
    draws: Dict[str, Any] = {}
    gain = 1.0

    if scheme is Scheme.NOISY:
        audio, gain = _add_noise(audio, noise_bank, spec, rng, draws)
    elif scheme is Scheme.SOX:
        audio, contour = _apply_sox(audio, contour, spec, rng, draws)
    elif scheme in (Scheme.VOTRANS, Scheme.NOISY_F0_VT, Scheme.NOISY_F0_VT_SOX):
        audio, contour, gain = _apply_votrans(audio, contour, spec, rng, draws)
        if scheme is Scheme.NOISY_F0_VT_SOX:
            audio, contour = _apply_sox(audio, contour, spec, rng, draws)

    if scheme in (Scheme.NOISY_F0, Scheme.NOISY_F0_VT, Scheme.NOISY_F0_VT_SOX):
        contour = perturb_f0(contour, spec.f0_noise, rng)
        draws['f0_noise_frames'] = len(contour)
    elif scheme is Scheme.NOISY_F0_SM:
        contour, window_ms = _perturb_f0_smoothed(contour, spec.f0_noise, rng)
        draws['smoothing_window_ms'] = window_ms
        draws['noise_smoothing_window_ms'] = noise_smoothing_window_ms(window_ms, spec.f0_noise)
        draws['f0_noise_frames'] = len(contour)

    if scheme.modifies_audio:
        audio, final_gain = peak_normalize(audio)
        gain *= final_gain

    provenance = {
        'scheme': scheme.value,
        'seed': int(spec.seed),
        'input_id': input_id,
        'copy_index': int(copy_index),
        'draws': draws,
        'normalization_gain': gain,
        'params': spec.to_dict(),
    }
    return AugmentationResult(audio, contour, provenance, scheme.modifies_audio)


def replay_provenance(record: Dict[str, Any], audio: AudioBuffer, contour: F0Contour,
                      noise_bank: Any = None) -> AugmentationResult:
    """Re-run the augmentation described by a provenance record."""
    spec = AugmentationSpec.from_dict(record['params'])
    logging.debug(f"Replaying {record['scheme']} for {record['input_id']} copy {record['copy_index']}")
    return apply_scheme(audio, contour, noise_bank, spec, record['copy_index'], record['input_id'])
