from __future__ import annotations

from pathlib import Path

import pytest

from racedigest.conformance import load_corpus
from racedigest.dsl import parse_program
from racedigest.model import instrument_atomicity
from racedigest.oracle import enumerate_traces

CORPUS_DIR = Path(__file__).resolve().parents[1] / "corpus"


def corpus_program(name: str):
    text = (CORPUS_DIR / name / "program.rlp").read_text(encoding="utf-8")
    return instrument_atomicity(parse_program(text))


@pytest.fixture(scope="session")
def corpus_cases():
    return load_corpus(CORPUS_DIR)


@pytest.fixture(scope="session")
def prog1():
    return corpus_program("prog1_running_example")


@pytest.fixture(scope="session")
def prog0():
    return corpus_program("prog0_unsync_writes")


@pytest.fixture(scope="session")
def once_prog():
    return corpus_program("once_device_init")


@pytest.fixture(scope="session")
def prog1_traces(prog1):
    return enumerate_traces(prog1, depth=40, width=4)


@pytest.fixture(scope="session")
def prog0_traces(prog0):
    return enumerate_traces(prog0, depth=40, width=4)
