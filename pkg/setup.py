#!/usr/bin/env python3
"""
Setup script for vcaug
This script prepares a workspace for augmentation runs: data folders, .env,
dependencies and a smoke check on synthetic audio.

Usage: python setup.py [--dev]
"""

import shutil
import subprocess
import sys
from pathlib import Path

# numpy<2 publishes wheels up to CPython 3.12
MIN_PYTHON = (3, 9)
MAX_TESTED_PYTHON = (3, 12)
WORKSPACE_DIRS = ['data/corpus', 'data/noise', 'logs']


def check_python_version():
    """Check the interpreter against the numpy/scipy wheels this toolkit pins."""
    version = sys.version_info[:2]
    if version < MIN_PYTHON:
        print(f"❌ vcaug needs Python {MIN_PYTHON[0]}.{MIN_PYTHON[1]} or newer, found {sys.version.split()[0]}")
        return False
    if version > MAX_TESTED_PYTHON:
        print(f"⚠️  Python {version[0]}.{version[1]} may have no numpy<2 wheel; installation can fail")
    else:
        print(f"✅ Python {version[0]}.{version[1]}")
    return True


def prepare_workspace():
    """Create the corpus, noise and log folders and a .env from the template."""
    for directory in WORKSPACE_DIRS:
        Path(directory).mkdir(parents=True, exist_ok=True)
    print(f"✅ Folders ready: {', '.join(WORKSPACE_DIRS)}")

    env_file = Path('.env')
    if env_file.exists():
        print("✅ Keeping existing .env")
    elif Path('.env.example').exists():
        shutil.copyfile('.env.example', env_file)
        print("✅ Created .env (LOG_LEVEL, VCAUG_JOBS and the bench defaults live there)")
    else:
        print("⚠️  .env.example missing; built-in defaults will be used")

    wavs = len(list(Path('data/corpus').rglob('*.wav')))
    noise = len(list(Path('data/noise').rglob('*.wav')))
    print(f"   data/corpus holds {wavs} WAV files, data/noise holds {noise}")


def install_dependencies(dev=False):
    """Install the runtime stack, plus pytest and linters with --dev."""
    requirements = 'requirements-dev.txt' if dev else 'requirements.txt'
    print(f"📦 Installing {requirements}...")
    try:
        subprocess.run([sys.executable, '-m', 'pip', 'install', '-r', requirements], check=True)
    except subprocess.CalledProcessError as e:
        print(f"❌ pip exited with status {e.returncode} while installing {requirements}")
        return False
    print("✅ Dependencies installed")
    return True


def test_imports():
    """Test if all required modules can be imported."""
    required_modules = ['numpy', 'scipy', 'scipy.io.wavfile', 'librosa', 'dotenv']

    failed_imports = []
    for module in required_modules:
        try:
            __import__(module)
            print(f"✅ {module} imported successfully")
        except ImportError:
            print(f"❌ Failed to import {module}")
            failed_imports.append(module)

    return len(failed_imports) == 0


def smoke_check():
    """Run f0 analysis and a latency report on synthetic input."""
    sys.path.insert(0, str(Path(__file__).parent / 'src'))
    try:
        import numpy as np
        from audio_core import AudioBuffer
        from pitch_analysis import SAMPLE_RATE, estimate_f0
        from rt_bench import default_encoder_stack, latency_budget

        t = np.arange(SAMPLE_RATE) / SAMPLE_RATE
        contour = estimate_f0(AudioBuffer(0.5 * np.sin(2 * np.pi * 220.0 * t), SAMPLE_RATE))
        report = latency_budget(default_encoder_stack())
        print(f"✅ F0 analysis OK (median {np.median(contour.f0_hz):.1f} Hz on a 220 Hz tone)")
        print(f"✅ Encoder stack latency {report.algorithmic_latency_ms:.0f} ms")
        return True
    except Exception as e:
        print(f"❌ Smoke check failed: {e}")
        return False


def main():
    """Main setup function."""
    print("🚀 vcaug Setup")
    print("=" * 40)

    if not check_python_version():
        return False

    prepare_workspace()

    if not install_dependencies(dev='--dev' in sys.argv[1:]):
        return False

    if not test_imports():
        print("❌ Some modules failed to import. Please check your installation.")
        return False

    if not smoke_check():
        return False

    print("\n" + "=" * 40)
    print("🎉 Setup completed!")
    print("\n✅ Try it:")
    print("   python run.py manifest build data/corpus --out data/manifest.json")
    print("   python run.py bench latency")
    print("\n📚 Documentation: README.md")

    return True


if __name__ == "__main__":
    success = main()
    sys.exit(0 if success else 1)
