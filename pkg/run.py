#!/usr/bin/env python3
"""
Run script for vcaug
Puts src/ on the path and hands the arguments to the command line.
"""

import sys
from pathlib import Path

# Add src directory to Python path
sys.path.insert(0, str(Path(__file__).parent / "src"))


def main():
    """Main run function."""
    from cli import VoiceAugCLI

    try:
        return VoiceAugCLI().run(sys.argv[1:])
    except KeyboardInterrupt:
        print("\nStopped by user", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
