import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hsefactor.synth import SynthConfig, generate  # noqa: E402


@pytest.fixture(scope="session")
def small_dataset():
    """A compact panel with a planted premium and a few delistings."""
    return generate(SynthConfig(seed=11, n_securities=80, n_months=120, premium=2.0,
                                delist_frac=0.1, window_months=48))


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
