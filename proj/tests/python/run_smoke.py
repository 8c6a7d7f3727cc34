"""ctest entry: skip (exit 77) unless the pulsedrf package is importable."""

import pathlib
import sys

try:
    import pulsedrf  # noqa: F401
except ImportError:
    print("pulsedrf is not installed; run: pip install --no-build-isolation -e .")
    sys.exit(77)

import pytest

sys.exit(pytest.main(["-q", "-p", "no:cacheprovider", str(pathlib.Path(__file__).parent)]))
