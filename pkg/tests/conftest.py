import time

import numpy as np
import pytest
from hypothesis import settings

from convctc.dsp import read_wav
from convctc.synthetic import make_micro_corpus
from convctc.training import Utterance
from convctc.translit import Alphabet, arabic_to_roman, encode_labels

settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")


@pytest.fixture(scope="session")
def alphabet():
    return Alphabet.from_table()


@pytest.fixture(scope="session")
def micro_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("micro")
    make_micro_corpus(d, n=5, seed=0)
    return d


@pytest.fixture(scope="session")
def micro_utterances(micro_dir, alphabet):
    from convctc.corpus import load_manifest

    out = []
    for e in load_manifest(micro_dir / "manifest.csv"):
        roman = arabic_to_roman(e.transcript)
        out.append(Utterance(e.audio_path, read_wav(micro_dir / e.audio_path), encode_labels(roman, alphabet), roman))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = []


class _Criterion:
    def __init__(self, name, budget_s):
        self.name, self.budget_s = name, budget_s
        self.detail = ""

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        over = self.budget_s is not None and elapsed > self.budget_s
        ok = exc_type is None and not over
        note = self.detail
        if exc_type is not None:
            note = f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        elif over:
            note = f"{note}; over budget {self.budget_s:g}s".lstrip("; ")
        _ACCEPTANCE.append(f"{'PASS' if ok else 'FAIL'}  {self.name}  ({elapsed:.2f}s)  {note}".rstrip())
        print(_ACCEPTANCE[-1])
        if over:
            pytest.fail(f"{self.name} took {elapsed:.1f}s, budget {self.budget_s}s")
        return False


@pytest.fixture
def criterion():
    """Time an acceptance criterion and record one PASS/FAIL line for it."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
