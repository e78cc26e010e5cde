"""Test configuration and fixtures."""
import json
import os
import tempfile

import pytest

from sepinfer.api.documents import dbn_document, dumps, network_document
from sepinfer.core import generators
from sepinfer.core.prob_core import Variable


@pytest.fixture
def rng():
    """Seeded generator so every test draws the same instances."""
    return generators.make_rng(0)


@pytest.fixture
def xyz():
    """Binary X, Y and child Z."""
    return Variable("X", 2), Variable("Y", 2), Variable("Z", 2)


@pytest.fixture
def or_gate():
    """The OR-gate network as a CPT list (X, Y priors, then Z)."""
    return generators.or_gate_network()


@pytest.fixture
def switch():
    """Z copies X or Y depending on W."""
    return generators.switch_network()


@pytest.fixture
def weather():
    """Small weather system: (model, family, tree)."""
    spec = generators.random_weather_spec(3, 2, seed=0)
    return generators.make_weather(spec)


@pytest.fixture
def copy_model():
    """Two binary copies with a strongly correlated initial joint."""
    return generators.make_copy_model(0.9)


@pytest.fixture
def tmp_dir():
    """Temporary directory removed after the test."""
    with tempfile.TemporaryDirectory() as path:
        yield path


def _write(directory, name, document):
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(document))
    return path


@pytest.fixture
def or_gate_file(tmp_dir, or_gate):
    """OR-gate network document on disk."""
    return _write(tmp_dir, "or_gate.json", network_document(or_gate))


@pytest.fixture
def switch_file(tmp_dir, switch):
    """Switch network document on disk."""
    return _write(tmp_dir, "switch.json", network_document(switch))


@pytest.fixture
def weather_file(tmp_dir, weather):
    """Weather dbn document (with family and tree) on disk."""
    model, family, tree = weather
    return _write(tmp_dir, "weather.json", dbn_document(model, family, tree))


@pytest.fixture
def copy_file(tmp_dir, copy_model):
    """Copy-model dbn document with the singleton family on disk."""
    family = [(v,) for v in copy_model.state]
    return _write(tmp_dir, "copies.json", dbn_document(copy_model, family))


@pytest.fixture
def read_json():
    """Parse a document file."""

    def read(path):
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    return read
