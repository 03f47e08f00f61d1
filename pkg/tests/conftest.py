import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from paraphrase_analogies.corpus import TokenStream

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def stream(ids, vocab_size=None, vocab_hash="ab" * 16):
    ids = np.asarray(ids, dtype=np.int32)
    v = int(ids.max()) + 1 if vocab_size is None else vocab_size
    return TokenStream(ids, len(ids), v, vocab_hash)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    def record(criterion, label, passed, detail=""):
        line = f"criterion {criterion:>3} {'PASS' if passed else 'FAIL'}  {label}" + (f"  ({detail})" if detail else "")
        VERDICTS.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
