import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from audio_core import read_wav, resample
from augment_schemes import AugmentationSpec, NoiseParams, Scheme
from dataset_pipeline import (
    DatasetManifest, build_manifest, load_noise_bank, materialize, subset_by_duration
)
from features import mel_spectrogram
from pitch_analysis import SAMPLE_RATE, estimate_f0
from rt_bench import (
    RTF_THRESHOLD, ConvStackSpec, default_encoder_stack, latency_budget, measure_rtf,
    scheme_workload
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    """Command line could not be parsed."""


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors instead of exiting with status 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed(value: str) -> int:
    seed = int(value, 0)
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be a 64-bit unsigned integer, got {value}")
    return seed


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def _minutes(value: str):
    if value.lower() == 'all':
        return 'all'
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected minutes or 'all', got {value}") from None


class VoiceAugCLI:
    """Command-line coordinator for manifests, augmentation, features and benchmarks."""

    def __init__(self):
        load_dotenv()
        self.setup_logging()

        self.default_jobs = int(os.getenv('VCAUG_JOBS', '1'))
        self.default_val_fraction = float(os.getenv('VCAUG_VAL_FRACTION', '0.05'))
        self.default_repeats = int(os.getenv('VCAUG_RTF_REPEATS', '5'))
        self.rtf_threshold = float(os.getenv('VCAUG_RTF_THRESHOLD', str(RTF_THRESHOLD)))
        self.parser = self.build_parser()

    def setup_logging(self):
        """Setup logging configuration."""
        log_level = getattr(logging, os.getenv('LOG_LEVEL', 'INFO').upper(), logging.INFO)
        handlers: List[logging.Handler] = [logging.StreamHandler()]
        log_file = os.getenv('LOG_FILE')
        if log_file:
            os.makedirs(os.path.dirname(log_file) or '.', exist_ok=True)
            handlers.append(logging.FileHandler(log_file))

        logging.basicConfig(
            level=log_level,
            format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            handlers=handlers
        )

    def build_parser(self) -> argparse.ArgumentParser:
        """Build the manifest, augment, f0, mel and bench command tree."""
        common = _Parser(add_help=False)
        common.add_argument('--seed', type=_seed, default=0, help='64-bit seed; the only source of randomness')
        common.add_argument('--jobs', type=_positive_int, default=self.default_jobs,
                            help='parallel file workers')

        parser = _Parser(prog='vcaug', description='Speech augmentation for voice-conversion training')
        commands = parser.add_subparsers(dest='command', required=True)

        manifest = commands.add_parser('manifest', help='build or subset dataset manifests')
        manifest_commands = manifest.add_subparsers(dest='action', required=True)
        build = manifest_commands.add_parser('build', parents=[common])
        build.add_argument('directory')
        build.add_argument('--out', required=True)
        build.add_argument('--val-fraction', type=float, default=self.default_val_fraction)
        build.set_defaults(handler=self.manifest_build)
        subset = manifest_commands.add_parser('subset', parents=[common])
        subset.add_argument('manifest')
        subset.add_argument('--minutes', type=_minutes, required=True)
        subset.add_argument('--out', required=True)
        subset.set_defaults(handler=self.manifest_subset)

        augment = commands.add_parser('augment', parents=[common], help='materialize an augmented dataset')
        augment.add_argument('--manifest', required=True)
        augment.add_argument('--scheme', required=True, choices=[s.value for s in Scheme])
        augment.add_argument('--out', required=True)
        augment.add_argument('--noise-dir')
        augment.add_argument('--copies', type=_positive_int)
        augment.add_argument('--white-noise', action='store_true',
                             help='noisy: mix white Gaussian noise instead of a noise corpus')
        augment.set_defaults(handler=self.augment)

        f0 = commands.add_parser('f0', help='pitch analysis')
        f0_commands = f0.add_subparsers(dest='action', required=True)
        extract = f0_commands.add_parser('extract', parents=[common])
        extract.add_argument('wav')
        extract.add_argument('--out', required=True)
        extract.set_defaults(handler=self.f0_extract)

        mel = commands.add_parser('mel', parents=[common], help='log-mel features')
        mel.add_argument('wav')
        mel.add_argument('--out', required=True)
        mel.set_defaults(handler=self.mel)

        bench = commands.add_parser('bench', help='latency and real-time checks')
        bench_commands = bench.add_subparsers(dest='action', required=True)
        latency = bench_commands.add_parser('latency', parents=[common])
        latency.add_argument('--spec', help='stack JSON; defaults to the built-in encoder stack')
        latency.set_defaults(handler=self.bench_latency)
        rtf = bench_commands.add_parser('rtf', parents=[common])
        rtf.add_argument('--scheme', required=True, choices=[s.value for s in Scheme])
        rtf.add_argument('--input', required=True)
        rtf.add_argument('--repeats', type=int, default=self.default_repeats)
        rtf.add_argument('--noise-dir')
        rtf.set_defaults(handler=self.bench_rtf)

        return parser

    def run(self, argv: Optional[List[str]] = None) -> int:
        """Parse argv, dispatch, and map failures to exit codes."""
        try:
            args = self.parser.parse_args(argv)
        except UsageError as e:
            sys.stderr.write(f"{e}\n")
            return EXIT_USAGE
        except SystemExit as e:
            # --help
            return int(e.code or 0)

        try:
            args.handler(args)
        except Exception as e:
            logging.error(f"{args.command} failed: {e}")
            return EXIT_RUNTIME
        return EXIT_OK

    def _print_json(self, data: Dict[str, Any]):
        sys.stdout.write(json.dumps(data, indent=2, sort_keys=True) + '\n')

    def manifest_build(self, args):
        """Handle `manifest build`."""
        build_manifest(args.directory, args.val_fraction).save(args.out)

    def manifest_subset(self, args):
        """Handle `manifest subset`."""
        subset_by_duration(DatasetManifest.load(args.manifest), args.minutes).save(args.out)

    def augment(self, args):
        """Handle `augment`: materialize one scheme over a manifest."""
        spec = AugmentationSpec(
            Scheme(args.scheme),
            seed=args.seed,
            copies_per_input=args.copies,
            noise=NoiseParams(white_noise=args.white_noise),
        )
        materialize(DatasetManifest.load(args.manifest), spec, args.noise_dir, args.out, jobs=args.jobs)

    def f0_extract(self, args):
        """Handle `f0 extract`."""
        contour = estimate_f0(resample(read_wav(args.wav), SAMPLE_RATE))
        contour.to_csv(args.out)
        logging.info(f"F0 contour written: {args.out} ({len(contour)} frames)")

    def mel(self, args):
        """Handle `mel`."""
        mel_spectrogram(resample(read_wav(args.wav), SAMPLE_RATE)).save(args.out)

    def bench_latency(self, args):
        """Handle `bench latency`; prints the report as JSON."""
        spec = ConvStackSpec.from_json(args.spec) if args.spec else default_encoder_stack()
        report = latency_budget(spec)
        logging.info(
            f"Receptive field {report.receptive_field_ms:.0f} ms, latency "
            f"{report.algorithmic_latency_ms:.1f} ms (within budget: {report.within_budget})"
        )
        self._print_json(report.to_dict())

    def bench_rtf(self, args):
        """Handle `bench rtf`; prints the report as JSON."""
        noise_bank = load_noise_bank(args.noise_dir) if args.noise_dir else None
        audio = resample(read_wav(args.input), SAMPLE_RATE)
        workload = scheme_workload(Scheme(args.scheme), seed=args.seed, noise_bank=noise_bank)
        report = measure_rtf(workload, audio, repeats=args.repeats, threshold=self.rtf_threshold)
        self._print_json(report.to_dict())


def main(argv: Optional[List[str]] = None) -> int:
    return VoiceAugCLI().run(argv)


if __name__ == '__main__':
    sys.exit(main())
