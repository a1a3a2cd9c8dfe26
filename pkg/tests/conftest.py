import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from attrewrite import rng as rngmod  # noqa: E402
from attrewrite.data import DEFAULT_LEXICONS, default_schema, synth_corpus_generate  # noqa: E402
from attrewrite.text import BpeTokenizer  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    """A 300-sentence single-attribute synthetic corpus with a fitted tokenizer."""
    schema = default_schema(1)
    corpus = synth_corpus_generate(schema, 300, DEFAULT_LEXICONS, rngmod.stream(7, "data"))
    tok = BpeTokenizer(80).fit(corpus.texts())
    return schema, corpus, tok


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
