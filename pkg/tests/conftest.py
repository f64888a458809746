import sys
import numpy as np
import pytest

from mcfopt.formats import FORMATS, enumerate_finite


@pytest.fixture(scope="session")
def fp8_values():
    return {name: enumerate_finite(FORMATS[name]) for name in ("fp8e4m3", "fp8e5m2")}


@pytest.fixture
def rng():
    from mcfopt.rng import SplitMix64

    return SplitMix64(1234)


def bf16_array(rng, n, lo=-8, hi=8):
    """Random BF16 values spread over binades [2**lo, 2**hi)."""
    from mcfopt.formats import BF16, round_to

    mag = np.ldexp(1.0 + rng.random(n), rng.integers(lo, hi, n))
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return np.asarray(round_to(BF16, sign * mag))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
