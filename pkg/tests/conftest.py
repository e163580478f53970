import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from forestinv.synth import SynthConfig, synth_forest  # noqa: E402


@pytest.fixture(scope="session")
def small_plot():
    """A 40 x 40 m plot with 8 trees (default stem density) on undulating ground."""
    cfg = SynthConfig(seed=3, n_trees=8, area=(40.0, 40.0), min_spacing=3.0)
    return synth_forest(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(RESULTS):
        status = "PASS" if passed else "FAIL"
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {number}: {status} - {title}{suffix}")
