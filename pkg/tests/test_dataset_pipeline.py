"""
Tests for manifests, duration subsets, the noise bank and dataset materialization.
"""
import json
from pathlib import Path

import pytest
import numpy as np
from scipy.io import wavfile

from audio_core import AudioBuffer, quantize_pcm16, read_wav, write_wav
from augment_schemes import AugmentationSpec, Scheme, measured_snr, replay_provenance
from dataset_pipeline import (
    MANIFEST_NAME, TRAIN, VALIDATION, DatasetManifest, ManifestEntry, build_manifest,
    load_noise_bank, load_training_audio, materialize, pick_noise_segment, subset_by_duration
)
from errors import (
    EmptyDirectoryError, IoFailureError, MissingNoiseBankError, TargetExceedsTotalError,
    UnreadableFileError, UnsupportedFormatError
)
from pitch_analysis import F0Contour, estimate_f0, frame_count
from tests.signals import harmonic_tone, median_f0, tree_bytes


def fake_manifest(durations, validation=0):
    entries = [ManifestEntry(f"utt_{i:05d}", f"/data/utt_{i:05d}.wav", float(d)) for i, d in enumerate(durations)]
    entries += [ManifestEntry(f"val_{i}", f"/data/val_{i}.wav", 60.0, VALIDATION) for i in range(validation)]
    return DatasetManifest(tuple(entries))


class TestBuildManifest:
    """Test suite for build_manifest."""

    def test_validation_split_is_last_files(self, wav_corpus):
        """Test 10 files at fraction 0.1 give 9 train and the last file as validation."""
        # Arrange
        root = wav_corpus(count=10, seconds=0.2)

        # Act
        manifest = build_manifest(root, validation_fraction=0.1)

        # Assert
        assert len(manifest.train_entries) == 9
        assert [e.id for e in manifest.validation_entries] == ['utt_009']
        assert manifest.entries[0].duration_s == pytest.approx(0.2)

    def test_zero_fraction_is_all_train(self, wav_corpus):
        """Test fraction 0 puts every file in train."""
        manifest = build_manifest(wav_corpus(count=4, seconds=0.2), validation_fraction=0.0)

        assert len(manifest.train_entries) == 4
        assert manifest.validation_entries == []

    def test_nested_ids_and_order(self, wav_corpus):
        """Test ids are relative paths without suffix in lexicographic order."""
        # Arrange
        root = wav_corpus(count=2, seconds=0.2)
        (root / 'spk_b').mkdir()
        write_wav(AudioBuffer(np.full(2400, 0.1), 24000), root / 'spk_b' / 'a.wav')

        # Act
        manifest = build_manifest(root, validation_fraction=0.0)

        # Assert
        assert [e.id for e in manifest.entries] == ['spk_b/a', 'utt_000', 'utt_001']

    def test_build_is_deterministic(self, wav_corpus):
        """Test two builds of the same tree are identical."""
        root = wav_corpus(count=5, seconds=0.2)

        assert build_manifest(root, 0.2) == build_manifest(root, 0.2)

    def test_empty_directory(self, tmp_path):
        """Test a directory with no WAV files raises EmptyDirectoryError."""
        (tmp_path / 'notes.txt').write_text('nothing here')

        with pytest.raises(EmptyDirectoryError):
            build_manifest(tmp_path)

    def test_unreadable_file(self, wav_corpus):
        """Test a corrupt WAV raises UnreadableFileError."""
        root = wav_corpus(count=2, seconds=0.2)
        (root / 'utt_broken.wav').write_bytes(b'garbage' * 10)

        with pytest.raises(UnreadableFileError):
            build_manifest(root)

    def test_fraction_out_of_range(self, wav_corpus):
        """Test validation fractions above 0.5 are refused."""
        with pytest.raises(ValueError):
            build_manifest(wav_corpus(), validation_fraction=0.6)


class TestManifestPersistence:
    """Test suite for manifest save/load."""

    def test_paths_are_relative_on_disk(self, wav_corpus):
        """Test saved paths are relative to the manifest and resolve back on load."""
        # Arrange
        root = wav_corpus(count=3, seconds=0.2)
        manifest = build_manifest(root, validation_fraction=0.0)
        path = root / MANIFEST_NAME

        # Act
        manifest.save(path)
        loaded = DatasetManifest.load(path)

        # Assert
        data = json.loads(path.read_text())
        assert data['entries'][0]['path'] == 'utt_000.wav'
        assert data['total_duration_s'] == pytest.approx(0.6)
        assert loaded == manifest

    def test_duplicate_ids(self):
        """Test duplicate ids are rejected."""
        entry = ManifestEntry('a', '/x/a.wav', 1.0)

        with pytest.raises(ValueError):
            DatasetManifest((entry, entry))

    def test_missing_manifest(self, tmp_path):
        """Test loading a missing manifest raises IoFailureError."""
        with pytest.raises(IoFailureError):
            DatasetManifest.load(tmp_path / 'missing.json')


class TestSubsetByDuration:
    """Test suite for subset_by_duration."""

    def test_fifteen_minutes_of_one_minute_clips(self):
        """Test 20 x 60 s entries with a 15 min target keep 15 entries."""
        manifest = fake_manifest([60.0] * 20)

        subset = subset_by_duration(manifest, 15)

        assert len(subset) == 15
        assert subset.duration(TRAIN) == 900.0

    def test_all_returns_input(self):
        """Test 'all' returns the manifest unchanged."""
        manifest = fake_manifest([60.0] * 3)

        assert subset_by_duration(manifest, 'all') is manifest

    def test_target_exceeds_total(self):
        """Test a target above the training total raises."""
        with pytest.raises(TargetExceedsTotalError):
            subset_by_duration(fake_manifest([60.0] * 3), 5)

    def test_validation_entries_are_kept(self):
        """Test validation entries survive any subset."""
        manifest = fake_manifest([60.0] * 10, validation=2)

        subset = subset_by_duration(manifest, 3)

        assert len(subset.validation_entries) == 2
        assert len(subset.train_entries) == 3

    def test_subsets_are_nested(self):
        """Test a larger target always contains the smaller target's entries."""
        # Arrange
        durations = np.random.default_rng(0).uniform(2.0, 10.0, 400)
        manifest = fake_manifest(durations)

        # Act
        small = {e.id for e in subset_by_duration(manifest, 5).entries}
        large = {e.id for e in subset_by_duration(manifest, 20).entries}

        # Assert
        assert small <= large

    def test_overshoot_is_less_than_one_entry(self):
        """Test 15 min from a 3.5 h corpus lands in [900, 900 + max entry)."""
        # Arrange
        durations = np.random.default_rng(1).uniform(2.0, 10.0, 2600)
        manifest = fake_manifest(durations)

        # Act
        subset = subset_by_duration(manifest, 15)

        # Assert
        assert manifest.total_duration_s > 3.5 * 3600
        assert 900.0 <= subset.duration(TRAIN) < 900.0 + durations.max()


class TestNoiseBank:
    """Test suite for noise loading and segment picking."""

    def test_total_duration(self, tmp_path):
        """Test three 10 s files give 30 s of noise."""
        # Arrange
        for index in range(3):
            write_wav(AudioBuffer(np.full(240000, 0.01 * (index + 1)), 24000), tmp_path / f"n{index}.wav")

        # Act
        bank = load_noise_bank(tmp_path)

        # Assert
        assert len(bank) == 3
        assert bank.total_duration_s == pytest.approx(30.0)

    def test_other_rates_are_served_at_24k(self, tmp_path):
        """Test a 48 kHz file keeps its duration after resampling."""
        # Arrange
        rng = np.random.default_rng(2)
        write_wav(AudioBuffer(0.1 * rng.standard_normal(480000), 48000), tmp_path / 'wide.wav')

        # Act
        bank = load_noise_bank(tmp_path)

        # Assert
        assert bank.audio(0).sample_rate == 24000
        assert len(bank.audio(0)) == 240000
        assert bank.total_duration_s == pytest.approx(10.0)

    def test_stereo_is_rejected(self, tmp_path):
        """Test multi-channel noise raises UnsupportedFormatError."""
        wavfile.write(tmp_path / 'stereo.wav', 24000, np.zeros((2400, 2), dtype=np.int16))

        with pytest.raises(UnsupportedFormatError):
            load_noise_bank(tmp_path)

    def test_empty_directory(self, tmp_path):
        """Test an empty noise directory raises EmptyDirectoryError."""
        with pytest.raises(EmptyDirectoryError):
            load_noise_bank(tmp_path)

    def test_segment_is_contiguous_slice(self, tmp_path):
        """Test 1 s from a 10 s file is a contiguous slice at the recorded offset."""
        # Arrange
        write_wav(AudioBuffer(0.1 * np.random.default_rng(3).standard_normal(240000), 24000), tmp_path / 'n.wav')
        bank = load_noise_bank(tmp_path)

        # Act
        segment, draws = bank.pick_segment(24000, np.random.default_rng(4))

        # Assert
        offset = draws['offset']
        assert draws['tiles'] == 1
        assert np.array_equal(segment.samples, bank.audio(0).samples[offset:offset + 24000])

    def test_short_file_is_tiled(self, tmp_path):
        """Test 5 s from a 2 s file uses three crossfaded tiles."""
        # Arrange
        write_wav(AudioBuffer(0.1 * np.random.default_rng(5).standard_normal(48000), 24000), tmp_path / 'n.wav')
        bank = load_noise_bank(tmp_path)

        # Act
        segment, draws = bank.pick_segment(120000, np.random.default_rng(6))

        # Assert
        assert len(segment) == 120000
        assert draws['tiles'] == 3
        assert np.array_equal(segment.samples[:46800], bank.audio(0).samples[:46800])

    def test_same_seed_same_segment(self, noise_dir):
        """Test picking is deterministic in the generator state."""
        bank = load_noise_bank(noise_dir)

        first = pick_noise_segment(bank, 1.0, np.random.default_rng(7))
        second = pick_noise_segment(bank, 1.0, np.random.default_rng(7))

        assert np.array_equal(first.samples, second.samples)

    def test_decoded_files_are_bounded(self, tmp_path):
        """Test at most cache_files decoded noise files are held across many picks."""
        # Arrange
        rng = np.random.default_rng(8)
        for index in range(40):
            write_wav(AudioBuffer(0.1 * rng.standard_normal(48000), 24000), tmp_path / f"n{index:02d}.wav")
        bank = load_noise_bank(tmp_path, cache_files=4)
        picker = np.random.default_rng(9)

        # Act
        segments = [bank.pick_segment(12000, picker) for _ in range(400)]

        # Assert
        info = bank.cache_info()
        assert info.currsize <= 4
        assert info.misses > 4
        segment, draws = segments[-1]
        fresh = read_wav(tmp_path / draws['file']).samples
        assert np.array_equal(segment.samples, fresh[draws['offset']:draws['offset'] + 12000])

    def test_cache_size_must_be_positive(self, noise_dir):
        """Test a zero-file cache is refused."""
        with pytest.raises(ValueError):
            load_noise_bank(noise_dir, cache_files=0)


class TestMaterialize:
    """Test suite for materialize."""

    def test_sox_copies_and_validation(self, wav_corpus, tmp_path):
        """Test 2 train files x 10 SoX copies and a byte-identical validation file."""
        # Arrange
        root = wav_corpus(count=3, seconds=0.5)
        manifest = build_manifest(root, validation_fraction=0.3)
        out = tmp_path / 'out'

        # Act
        result = materialize(manifest, AugmentationSpec(Scheme.SOX, seed=1), None, out)

        # Assert
        augmented = sorted(p.name for p in out.glob('*__sox__*.wav'))
        sidecars = [p for p in out.glob('*.json') if p.name != MANIFEST_NAME]
        assert len(augmented) == 20
        assert len(sidecars) == 20
        assert len(list(out.glob('*.f0.csv'))) == 20
        assert (out / 'utt_002.wav').read_bytes() == (root / 'utt_002.wav').read_bytes()
        assert len(result.train_entries) == 20
        assert DatasetManifest.load(out / MANIFEST_NAME) == result

    def test_noisy_uses_noise_bank(self, wav_corpus, noise_dir, tmp_path):
        """Test Noisy writes five copies per train file."""
        manifest = build_manifest(wav_corpus(count=3, seconds=0.5), validation_fraction=0.3)

        materialize(manifest, AugmentationSpec(Scheme.NOISY, seed=2), noise_dir, tmp_path / 'out')

        assert len(list((tmp_path / 'out').glob('*__noisy__*.wav'))) == 10

    def test_noisy_without_noise_dir(self, wav_corpus, tmp_path):
        """Test Noisy without a noise directory raises MissingNoiseBankError."""
        manifest = build_manifest(wav_corpus(count=2, seconds=0.5), validation_fraction=0.0)

        with pytest.raises(MissingNoiseBankError):
            materialize(manifest, AugmentationSpec(Scheme.NOISY), None, tmp_path / 'out')

    def test_controls_only_scheme_references_source(self, wav_corpus, tmp_path):
        """Test NoisyF0 writes contours and sidecars but no audio."""
        # Arrange
        root = wav_corpus(count=2, seconds=0.5)
        manifest = build_manifest(root, validation_fraction=0.0)
        out = tmp_path / 'out'

        # Act
        result = materialize(manifest, AugmentationSpec(Scheme.NOISY_F0, seed=3), None, out)

        # Assert
        assert list(out.glob('*.wav')) == []
        assert [e.path for e in result.entries] == [e.path for e in manifest.entries]
        assert all(e.contour_path.endswith('.f0.csv') for e in result.entries)

    def test_job_count_does_not_change_output(self, wav_corpus, tmp_path):
        """Test jobs=1 and jobs=4 produce byte-identical trees."""
        # Arrange
        manifest = build_manifest(wav_corpus(count=4, seconds=0.5), validation_fraction=0.25)
        spec = AugmentationSpec(Scheme.SOX, seed=9, copies_per_input=3)

        # Act
        materialize(manifest, spec, None, tmp_path / 'serial', jobs=1)
        materialize(manifest, spec, None, tmp_path / 'parallel', jobs=4)

        # Assert
        assert tree_bytes(tmp_path / 'serial') == tree_bytes(tmp_path / 'parallel')

    def test_non_empty_output_is_refused(self, wav_corpus, tmp_path):
        """Test an existing non-empty output directory raises IoFailureError."""
        manifest = build_manifest(wav_corpus(count=2, seconds=0.5), validation_fraction=0.0)
        out = tmp_path / 'out'
        out.mkdir()
        (out / 'keep.txt').write_text('x')

        with pytest.raises(IoFailureError):
            materialize(manifest, AugmentationSpec(Scheme.SOX), None, out)

    def test_failure_leaves_no_partial_output(self, wav_corpus, tmp_path):
        """Test a missing input aborts the run and removes the staging directory."""
        # Arrange
        root = wav_corpus(count=3, seconds=0.5)
        manifest = build_manifest(root, validation_fraction=0.0)
        (root / 'utt_001.wav').unlink()
        out = tmp_path / 'out'

        # Act
        with pytest.raises(IoFailureError):
            materialize(manifest, AugmentationSpec(Scheme.SOX, copies_per_input=2), None, out)

        # Assert
        assert not out.exists()
        assert not (tmp_path / '.out.partial').exists()

    def test_sidecar_replays_written_audio(self, wav_corpus, tmp_path):
        """Test a provenance sidecar regenerates the stored WAV."""
        # Arrange
        root = wav_corpus(count=1, seconds=0.5)
        manifest = build_manifest(root, validation_fraction=0.0)
        out = tmp_path / 'out'
        materialize(manifest, AugmentationSpec(Scheme.VOTRANS, seed=4, copies_per_input=2), None, out)
        record = json.loads((out / 'utt_000__votrans__1.json').read_text())
        audio = load_training_audio(root / 'utt_000.wav')

        # Act
        replayed = replay_provenance(record, audio, estimate_f0(audio))

        # Assert
        stored = read_wav(out / 'utt_000__votrans__1.wav')
        assert np.array_equal(quantize_pcm16(replayed.audio.samples) / 32768.0, stored.samples)


def write_speechlike_corpus(root, files, seconds):
    """Harmonic tones at 140..220 Hz, one per file."""
    root.mkdir()
    for index in range(files):
        audio = harmonic_tone(140.0 + 10.0 * (index % 9), seconds)
        write_wav(audio, root / f"utt_{index:04d}.wav")
    return root


class TestPipelineAcceptance:
    """Test suite for the full corpus -> subset -> augment path at toy scale."""

    AUGMENTING = [s for s in Scheme if s is not Scheme.CLEAN]

    @pytest.mark.slow
    def test_fifteen_minute_subset_through_every_scheme(self, tmp_path, noise_dir):
        """Test a 15 min subset of a 30 min corpus materializes under every scheme with valid outputs."""
        # Arrange
        corpus = write_speechlike_corpus(tmp_path / 'corpus', files=180, seconds=10.0)
        manifest = build_manifest(corpus, validation_fraction=0.05)
        subset = subset_by_duration(manifest, 15)
        sources = {e.id: e for e in subset.train_entries}
        assert manifest.total_duration_s == pytest.approx(1800.0)
        assert subset.duration(TRAIN) == pytest.approx(900.0)

        for scheme in self.AUGMENTING:
            # Act
            out = tmp_path / scheme.value
            spec = AugmentationSpec(scheme, seed=15, copies_per_input=1)
            result = materialize(subset, spec, noise_dir, out, jobs=4)

            # Assert
            assert len(result.train_entries) == len(sources)
            assert len(result.validation_entries) == len(subset.validation_entries)
            for entry in result.train_entries:
                check_output(entry, sources[entry.source_id], scheme)


def check_output(entry, source, scheme):
    record = json.loads(Path(entry.sidecar_path).read_text())
    draws = record['draws']
    contour = F0Contour.from_csv(entry.contour_path)
    clean = load_training_audio(source.path)
    audio = read_wav(entry.path)

    assert record['scheme'] == scheme.value
    assert abs(len(audio) - len(clean)) <= 120
    assert len(contour) == frame_count(len(audio))
    assert np.all((contour.f0_hz >= 50.0) & (contour.f0_hz <= 600.0))
    assert np.all((contour.confidence >= 0.0) & (contour.confidence <= 1.0))
    assert audio.peak <= 1.0

    if scheme is Scheme.NOISY:
        assert 4.0 <= draws['snr_db'] <= 12.0
        residual = audio.samples / record['normalization_gain'] - clean.samples
        assert measured_snr(clean, residual) == pytest.approx(draws['snr_db'], abs=0.05)
    if 'sox_shift' in draws:
        assert -8.0 <= draws['sox_shift'] <= 8.0
    if 'votrans_pitch_shift' in draws:
        assert -12.0 <= draws['votrans_pitch_shift'] <= 12.0
        assert 0.0 <= draws['votrans_kappa'] <= 1.0
    if 'smoothing_window_ms' in draws:
        assert 100.0 <= draws['smoothing_window_ms'] <= 300.0
        assert draws['noise_smoothing_window_ms'] == draws['smoothing_window_ms'] / 2
    if not scheme.modifies_audio:
        assert Path(entry.path) == Path(source.path)

    shift = {
        Scheme.SOX: draws.get('sox_shift'),
        Scheme.VOTRANS: draws.get('votrans_pitch_shift'),
    }.get(scheme)
    if shift is not None:
        expected = median_f0(estimate_f0(clean)) * 2 ** (shift / 12)
        assert median_f0(estimate_f0(audio)) == pytest.approx(expected, rel=0.03)
