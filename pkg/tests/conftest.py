import sys
from pathlib import Path

import numpy as np
import pytest

# Make the sibling oracle module importable regardless of rootdir layout.
sys.path.insert(0, str(Path(__file__).resolve().parent))

from frem.rng import substream  # noqa: E402


@pytest.fixture
def rng():
    """Fresh deterministic generator per test."""
    return substream(20250825)


@pytest.fixture
def rng_factory():
    """Callable producing named independent generators."""
    def make(*key):
        return substream(20250825, *key)
    return make


def assert_close(actual, expected, rtol=0.0, atol=0.0, msg=""):
    __tracebackhide__ = True
    np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol,
                               err_msg=msg)
