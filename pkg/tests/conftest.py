import numpy as np
import pytest

from glyphfusion import tensor as T
from glyphfusion.glyphs import bundled_fonts
from glyphfusion.ranking import ClassifierConfig, train_glyph_classifier

CLASSIFIER_SEED = 1234


@pytest.fixture(scope="session")
def glyph_classifier():
    """One classifier shared by the ranking and acceptance tests (about a minute to train)."""
    with T.default_dtype(np.float32):
        return train_glyph_classifier(bundled_fonts(), ClassifierConfig(epochs=8, samples_per_class=30),
                                      np.random.default_rng(CLASSIFIER_SEED))


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the terminal summary prints them all in order."""
    def record(number: int, ok: bool, detail: str) -> bool:
        lines = request.config.stash.setdefault(_LINES, {})
        lines[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(lines[number])
        return ok
    return record


_LINES = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
