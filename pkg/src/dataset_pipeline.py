import json
import logging
import math
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from audio_core import AudioBuffer, probe_wav, read_wav, resample, write_wav
from augment_schemes import AugmentationSpec, apply_scheme
from errors import (
    EmptyDirectoryError, IoFailureError, MissingNoiseBankError, TargetExceedsTotalError,
    UnreadableFileError, UnsupportedFormatError, VoiceAugError
)
from pitch_analysis import SAMPLE_RATE, F0Contour, estimate_f0

PathLike = Union[str, os.PathLike]

TRAIN = 'train'
VALIDATION = 'validation'
MAX_VALIDATION_FRACTION = 0.5
CROSSFADE_MS = 50.0
MANIFEST_NAME = 'manifest.json'
# decoded noise is float64 at 24 kHz, about 690 MB per hour of noise
NOISE_CACHE_FILES = 32


def _list_wavs(root: Path) -> List[Path]:
    """WAV files under root in lexicographic order of their relative paths."""
    files = [p for p in root.rglob('*') if p.is_file() and p.suffix.lower() == '.wav']
    return sorted(files, key=lambda p: p.relative_to(root).as_posix())


def _relative_or_absolute(path: Path, base: Path) -> str:
    try:
        return path.relative_to(base).as_posix()
    except ValueError:
        return str(path)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    duration_s: float
    split: str = TRAIN
    contour_path: Optional[str] = None
    sidecar_path: Optional[str] = None
    source_id: Optional[str] = None

    def __post_init__(self):
        if self.split not in (TRAIN, VALIDATION):
            raise ValueError(f"Unknown split '{self.split}' for entry {self.id}")

    def to_dict(self, base: Path) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            'id': self.id,
            'path': _relative_or_absolute(Path(self.path), base),
            'duration_s': self.duration_s,
            'split': self.split,
        }
        for key in ('contour_path', 'sidecar_path'):
            value = getattr(self, key)
            if value is not None:
                data[key] = _relative_or_absolute(Path(value), base)
        if self.source_id is not None:
            data['source_id'] = self.source_id
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base: Path) -> 'ManifestEntry':
        def resolve(value: Optional[str]) -> Optional[str]:
            return None if value is None else str(base / value)
        return cls(
            id=data['id'],
            path=str(base / data['path']),
            duration_s=float(data['duration_s']),
            split=data.get('split', TRAIN),
            contour_path=resolve(data.get('contour_path')),
            sidecar_path=resolve(data.get('sidecar_path')),
            source_id=data.get('source_id'),
        )


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered dataset entries. Paths are absolute in memory, relative to the manifest on disk."""

    entries: Tuple[ManifestEntry, ...] = ()

    def __post_init__(self):
        entries = tuple(self.entries)
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            duplicates = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"Duplicate manifest ids: {duplicates}")
        object.__setattr__(self, 'entries', entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def total_duration_s(self) -> float:
        return float(math.fsum(e.duration_s for e in self.entries))

    @property
    def train_entries(self) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == TRAIN]

    @property
    def validation_entries(self) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == VALIDATION]

    def duration(self, split: str) -> float:
        return float(math.fsum(e.duration_s for e in self.entries if e.split == split))

    def to_dict(self, base: Path) -> Dict[str, Any]:
        return {
            'entries': [e.to_dict(base) for e in self.entries],
            'total_duration_s': self.total_duration_s,
        }

    def save(self, path: PathLike, base: Optional[PathLike] = None) -> None:
        """Write JSON; paths under `base` (default: the manifest's directory) are stored relative."""
        path = Path(path)
        base_dir = Path(base) if base is not None else path.parent
        path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(self.to_dict(base_dir.resolve()), indent=2, sort_keys=True)
        path.write_text(text + '\n', encoding='utf-8')
        logging.info(f"Manifest saved: {path} ({len(self)} entries, {self.total_duration_s:.1f} s)")

    @classmethod
    def load(cls, path: PathLike) -> 'DatasetManifest':
        """Load a manifest saved by `save`; relative paths resolve against its folder."""
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
        except OSError as e:
            raise IoFailureError(f"Cannot read manifest {path}: {e}") from e
        base = path.parent.resolve()
        return cls(tuple(ManifestEntry.from_dict(item, base) for item in data['entries']))


def build_manifest(root: PathLike, validation_fraction: float = 0.05) -> DatasetManifest:
    """Index every WAV under root; the last ceil(fraction * N) files form the validation split."""
    if not 0.0 <= validation_fraction <= MAX_VALIDATION_FRACTION:
        raise ValueError(f"validation_fraction must lie in [0, 0.5], got {validation_fraction}")
    root = Path(root).resolve()
    if not root.is_dir():
        raise EmptyDirectoryError(f"{root} is not a directory")

    files = _list_wavs(root)
    if not files:
        raise EmptyDirectoryError(f"No WAV files under {root}")

    # round first so 0.1 * 30 does not ceil to 4
    n_validation = math.ceil(round(validation_fraction * len(files), 9))
    n_train = len(files) - n_validation
    entries = []
    for index, path in enumerate(files):
        try:
            rate, frames, _ = probe_wav(path)
        except VoiceAugError as e:
            raise UnreadableFileError(f"{path}: {e}") from e
        entries.append(ManifestEntry(
            id=path.relative_to(root).with_suffix('').as_posix(),
            path=str(path),
            duration_s=frames / rate,
            split=TRAIN if index < n_train else VALIDATION,
        ))

    if n_train == 0:
        logging.warning(f"Manifest for {root} has no training entries")
    manifest = DatasetManifest(tuple(entries))
    logging.info(
        f"Manifest built from {root}: {n_train} train, {n_validation} validation, "
        f"{manifest.total_duration_s:.1f} s total"
    )
    return manifest


def subset_by_duration(manifest: DatasetManifest,
                       target_minutes: Union[float, str, None]) -> DatasetManifest:
    """Take train entries in order until their duration reaches the target; keep all validation."""
    if target_minutes is None or (isinstance(target_minutes, str) and target_minutes.lower() == 'all'):
        return manifest
    target_s = float(target_minutes) * 60.0
    if target_s < 0:
        raise ValueError(f"Target duration must be non-negative, got {target_minutes} minutes")

    available = manifest.duration(TRAIN)
    if target_s > available + 1e-6:
        raise TargetExceedsTotalError(
            f"Requested {target_s:.1f} s but only {available:.1f} s of training audio exist"
        )

    chosen = set()
    total = 0.0
    for entry in manifest.train_entries:
        if total >= target_s:
            break
        chosen.add(entry.id)
        total += entry.duration_s

    kept = tuple(e for e in manifest.entries if e.split == VALIDATION or e.id in chosen)
    logging.info(f"Subset of {target_minutes} min: {len(chosen)} train entries, {total:.1f} s")
    return DatasetManifest(kept)


@dataclass(frozen=True)
class NoiseFile:
    path: str
    name: str
    duration_s: float
    sample_rate: int


class NoiseBank:
    """Indexed noise corpus served at 24 kHz.

    Files are decoded on first use; at most `cache_files` decoded files are
    held at once, least recently used first out.
    """

    def __init__(self, files: List[NoiseFile], sample_rate: int = SAMPLE_RATE,
                 cache_files: int = NOISE_CACHE_FILES):
        if not files:
            raise EmptyDirectoryError("Noise bank needs at least one file")
        if cache_files < 1:
            raise ValueError(f"cache_files must be at least 1, got {cache_files}")
        self.files = list(files)
        self.sample_rate = sample_rate
        self._decode_cached = lru_cache(maxsize=cache_files)(self._decode)

    def __len__(self) -> int:
        return len(self.files)

    @property
    def total_duration_s(self) -> float:
        return float(math.fsum(f.duration_s for f in self.files))

    def _decode(self, index: int) -> AudioBuffer:
        logging.debug(f"Decoding noise file {self.files[index].name}")
        return resample(read_wav(self.files[index].path), self.sample_rate)

    def audio(self, index: int) -> AudioBuffer:
        """Decoded file `index` at the bank rate."""
        return self._decode_cached(index)

    def cache_info(self):
        """Hit/miss counters and the number of decoded files currently held."""
        return self._decode_cached.cache_info()

    def pick_segment(self, num_samples: int,
                     rng: np.random.Generator) -> Tuple[AudioBuffer, Dict[str, Any]]:
        """Random file and start offset; short files are tiled with an equal-power crossfade."""
        index = int(rng.integers(len(self.files)))
        noise = self.audio(index)
        samples = noise.samples
        draws: Dict[str, Any] = {'file': self.files[index].name, 'offset': 0, 'tiles': 1}

        if len(samples) >= num_samples:
            offset = int(rng.integers(0, len(samples) - num_samples + 1))
            draws['offset'] = offset
            return noise.with_samples(samples[offset:offset + num_samples]), draws

        tiled, tiles = _tile_with_crossfade(samples, num_samples, self.sample_rate)
        draws['tiles'] = tiles
        return noise.with_samples(tiled), draws


def _tile_with_crossfade(samples: np.ndarray, num_samples: int,
                         sample_rate: int) -> Tuple[np.ndarray, int]:
    if len(samples) == 0:
        raise UnreadableFileError("Noise file is empty")
    fade = min(int(round(CROSSFADE_MS * sample_rate / 1000.0)), len(samples) // 2)
    theta = (np.arange(fade) + 0.5) / max(fade, 1) * (np.pi / 2)
    fade_in, fade_out = np.sin(theta), np.cos(theta)

    out = samples.copy()
    tiles = 1
    while len(out) < num_samples:
        if fade:
            joint = out[-fade:] * fade_out + samples[:fade] * fade_in
            out = np.concatenate([out[:-fade], joint, samples[fade:]])
        else:
            out = np.concatenate([out, samples])
        tiles += 1
    return out[:num_samples], tiles


def load_noise_bank(directory: PathLike, cache_files: int = NOISE_CACHE_FILES) -> NoiseBank:
    """Index every mono WAV under `directory` as a noise source.

    Only headers are read here; samples are decoded when a segment is first
    drawn from a file.

    Raises:
        EmptyDirectoryError: the directory is missing or holds no WAV files.
        UnreadableFileError: a header cannot be parsed.
        UnsupportedFormatError: a file has more than one channel.
    """
    directory = Path(directory).resolve()
    if not directory.is_dir():
        raise EmptyDirectoryError(f"{directory} is not a directory")
    files = []
    for path in _list_wavs(directory):
        try:
            rate, frames, channels = probe_wav(path)
        except VoiceAugError as e:
            raise UnreadableFileError(f"{path}: {e}") from e
        if channels != 1:
            raise UnsupportedFormatError(f"Noise file {path} has {channels} channels; mono only")
        files.append(NoiseFile(str(path), path.relative_to(directory).as_posix(), frames / rate, rate))
    if not files:
        raise EmptyDirectoryError(f"No WAV files under {directory}")

    bank = NoiseBank(files, cache_files=cache_files)
    logging.info(f"Noise bank loaded from {directory}: {len(bank)} files, {bank.total_duration_s:.1f} s")
    return bank


def pick_noise_segment(bank: NoiseBank, needed_s: float, rng: np.random.Generator) -> AudioBuffer:
    """Noise of `needed_s` seconds at the bank rate; the file and offset come from `rng`."""
    return bank.pick_segment(int(round(needed_s * bank.sample_rate)), rng)[0]


def load_training_audio(path: PathLike) -> AudioBuffer:
    """Read an input file and bring it to the analysis rate."""
    return resample(read_wav(path), SAMPLE_RATE)


def _write_json(path: Path, data: Dict[str, Any]) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')


class DatasetMaterializer:
    """Writes augmented copies of a manifest's training split into an output directory."""

    def __init__(self, spec: AugmentationSpec, noise_bank: Optional[NoiseBank] = None):
        self.spec = spec
        self.noise_bank = noise_bank

    def _output_stem(self, entry: ManifestEntry, copy_index: int) -> str:
        return f"{entry.id}__{self.spec.scheme.value}__{copy_index}"

    def _contour_for(self, entry: ManifestEntry, audio: AudioBuffer) -> F0Contour:
        if entry.contour_path and Path(entry.contour_path).exists():
            return F0Contour.from_csv(entry.contour_path)
        return estimate_f0(audio)

    def process_entry(self, entry: ManifestEntry, staging: Path,
                      out_dir: Path) -> List[ManifestEntry]:
        """Run every copy of one training entry. Files go to `staging`; paths point into `out_dir`."""
        audio = load_training_audio(entry.path)
        contour = self._contour_for(entry, audio)
        outputs = []

        for copy_index in range(self.spec.copies_per_input):
            result = apply_scheme(audio, contour, self.noise_bank, self.spec, copy_index, entry.id)
            stem = self._output_stem(entry, copy_index)
            staged = staging / stem
            staged.parent.mkdir(parents=True, exist_ok=True)

            contour_file = staged.with_name(staged.name + '.f0.csv')
            sidecar_file = staged.with_name(staged.name + '.json')
            result.contour.to_csv(contour_file)
            _write_json(sidecar_file, result.provenance)

            if result.audio_modified:
                write_wav(result.audio, staged.with_name(staged.name + '.wav'))
                audio_path = str(out_dir / f"{stem}.wav")
                duration = result.audio.duration_seconds
            else:
                audio_path = entry.path
                duration = entry.duration_s

            outputs.append(ManifestEntry(
                id=stem,
                path=audio_path,
                duration_s=duration,
                split=TRAIN,
                contour_path=str(out_dir / f"{stem}.f0.csv"),
                sidecar_path=str(out_dir / f"{stem}.json"),
                source_id=entry.id,
            ))

        logging.info(f"Materialized {entry.id}: {len(outputs)} x {self.spec.scheme.value}")
        return outputs

    def copy_validation(self, entry: ManifestEntry, staging: Path, out_dir: Path) -> ManifestEntry:
        """Validation audio is copied byte for byte."""
        suffix = Path(entry.path).suffix or '.wav'
        target = staging / f"{entry.id}{suffix}"
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(entry.path, target)
        return replace(entry, path=str(out_dir / f"{entry.id}{suffix}"))


def materialize(manifest: DatasetManifest, spec: AugmentationSpec, noise_dir: Optional[PathLike],
                out_dir: PathLike, jobs: int = 1) -> DatasetManifest:
    """Augment the training split into out_dir and write out_dir/manifest.json last.

    Work is staged in a hidden sibling directory that is removed if anything fails.
    """
    if jobs < 1:
        raise ValueError(f"jobs must be at least 1, got {jobs}")
    out_dir = Path(out_dir).resolve()
    if out_dir.exists() and any(out_dir.iterdir()):
        raise IoFailureError(f"Output directory {out_dir} is not empty")

    noise_bank = None
    if spec.scheme.needs_noise and not spec.noise.white_noise:
        if noise_dir is None:
            raise MissingNoiseBankError(f"Scheme {spec.scheme.value} needs --noise-dir")
        noise_bank = load_noise_bank(noise_dir)
    elif noise_dir is not None:
        logging.warning(f"Scheme {spec.scheme.value} does not use a noise directory; ignoring {noise_dir}")

    staging = out_dir.parent / f".{out_dir.name}.partial"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    materializer = DatasetMaterializer(spec, noise_bank)

    try:
        train = manifest.train_entries
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            produced = list(pool.map(lambda e: materializer.process_entry(e, staging, out_dir), train))
        entries: List[ManifestEntry] = [item for batch in produced for item in batch]
        entries.extend(materializer.copy_validation(e, staging, out_dir) for e in manifest.validation_entries)

        result = DatasetManifest(tuple(entries))
        result.save(staging / MANIFEST_NAME, base=out_dir)
        if out_dir.exists():
            out_dir.rmdir()
        staging.rename(out_dir)
    except Exception as e:
        logging.error(f"Materialization of {spec.scheme.value} into {out_dir} failed: {e}")
        shutil.rmtree(staging, ignore_errors=True)
        raise

    logging.info(
        f"Materialized {len(train)} train entries x {spec.copies_per_input} copies "
        f"({spec.scheme.value}) into {out_dir}"
    )
    return result
