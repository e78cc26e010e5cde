"""Unit tests for JSON documents."""
import json

import numpy as np
import pytest

from sepinfer.api import documents
from sepinfer.api.schemas import DbnDocument, NetworkDocument
from sepinfer.core import dbn, generators
from sepinfer.core.errors import InvalidModelError, NotSeparable
from sepinfer.core.inference import eliminate
from sepinfer.core.prob_core import Assignment, Cpt, Variable
from sepinfer.core.separability import conditional_separate, separate_two, tree_separate
from sepinfer.core.transform import is_selector, transform_network


def _reload(document):
    return documents.load_result(documents.dumps(document))


def test_network_round_trip(switch):
    """Test that a network document rebuilds the same CPTs."""
    text = documents.dumps(documents.network_document(switch))
    loaded = documents.load_model(text)
    assert isinstance(loaded, NetworkDocument)
    network = documents.build_network(loaded)
    assert network.cpts == switch
    assert documents.dumps(documents.network_document(network.cpts)) == text


def test_dbn_round_trip(weather):
    """Test a dbn document with its family and tree."""
    model, family, tree = weather
    text = documents.dumps(documents.dbn_document(model, family, tree))
    loaded = documents.load_model(text)
    assert isinstance(loaded, DbnDocument)
    rebuilt = documents.build_dbn(loaded)
    assert rebuilt.model.transitions == model.transitions
    assert rebuilt.model.initial_joint() == model.initial_joint()
    assert rebuilt.family == family
    assert [list(s) for s in rebuilt.tree.subsets()] == [list(s) for s in tree.subsets()]
    assert json.loads(text)["tree"]["vars"] == ["W"]


def test_random_floats_are_bit_exact(rng):
    """Test that arbitrary doubles survive serialization unchanged."""
    x, y, z = Variable("X", 3), Variable("Y", 2), Variable("Z", 4)
    cpt = generators.random_cpt(z, (x, y), rng)
    network = documents.build_network(
        documents.load_model(documents.dumps(documents.network_document([cpt])))
    )
    np.testing.assert_array_equal(network.cpts[0].table.values, cpt.table.values)


def test_invalid_json():
    """Test that malformed text is reported as an invalid model."""
    with pytest.raises(InvalidModelError):
        documents.load_model("{not json")


def test_unknown_kind():
    """Test that an unknown kind is rejected."""
    with pytest.raises(InvalidModelError):
        documents.load_model(json.dumps({"kind": "graph", "variables": []}))


def test_undeclared_variable():
    """Test that CPTs may only use declared variables."""
    text = json.dumps({
        "kind": "network",
        "variables": [{"name": "Z", "cardinality": 2}],
        "cpts": [{"child": "Z", "parents": ["X"], "table": [1, 0, 0, 1]}],
    })
    with pytest.raises(InvalidModelError):
        documents.build_network(documents.load_model(text))


def test_transition_child_needs_mark():
    """Test that dbn transitions name next-slice copies."""
    text = json.dumps({
        "kind": "dbn",
        "variables": [{"name": "X", "cardinality": 2}],
        "state": ["X"],
        "transitions": [{"child": "X", "parents": ["X"], "table": [1, 0, 0, 1]}],
        "initial": {"joint": [0.5, 0.5]},
    })
    with pytest.raises(InvalidModelError):
        documents.build_dbn(documents.load_model(text))


def test_initial_needs_exactly_one_form():
    """Test that initial carries a joint or marginals, not both."""
    text = json.dumps({
        "kind": "dbn",
        "variables": [{"name": "X", "cardinality": 2}],
        "state": ["X"],
        "transitions": [{"child": "X'", "parents": ["X"], "table": [1, 0, 0, 1]}],
        "initial": {},
    })
    with pytest.raises(InvalidModelError):
        documents.load_model(text)


def test_tree_vars_must_match_locations(weather):
    """Test that a tree document listing the wrong root variables is rejected."""
    model, family, tree = weather
    data = json.loads(documents.dumps(documents.dbn_document(model, family, tree)))
    data["tree"]["vars"] = ["X1"]
    with pytest.raises(InvalidModelError):
        documents.build_dbn(documents.load_model(json.dumps(data)))


def test_decomposition_document_revalidates(rng):
    """Test that a separable decomposition reloads and reconstructs the CPT."""
    x, y, z = Variable("X", 2), Variable("Y", 3), Variable("Z", 2)
    cpt = generators.random_separable_cpt(z, [(x,), (y,)], rng)
    decomposition = separate_two(cpt, x, y)
    loaded = documents.load_decomposition(_reload(documents.decomposition_schema(decomposition)))
    assert loaded.weights == decomposition.weights
    assert loaded.components == decomposition.components
    assert loaded.max_error(cpt) <= 1e-9


def test_conditional_document(switch):
    """Test the conditional decomposition document."""
    cpt = switch[-1]
    x, w, y = cpt.parents
    decomposition = conditional_separate(cpt, [(x, w), (w, y)], (w,))
    loaded = documents.load_conditional(_reload(documents.conditional_schema(decomposition)))
    assert loaded.weights() == decomposition.weights()
    assert loaded.max_error(cpt) <= 1e-12


def test_tree_decomposition_document(weather):
    """Test that a tree decomposition reloads with the same reconstruction."""
    model, family, tree = weather
    cpt = dbn.product_cpt(model, family[1], parents=model.state)
    decomposition = tree_separate(cpt, tree)
    loaded = documents.load_tree_decomposition(
        _reload(documents.tree_decomposition_schema(decomposition))
    )
    assert loaded.leaf_count() == decomposition.leaf_count()
    assert loaded.max_error(cpt) <= 1e-9


def test_prediction_document(weather):
    """Test that per-step marginals reload and re-validate."""
    model, family, tree = weather
    verified = dbn.check_self_sufficient(model, family, tree)
    history = dbn.predict_marginals(verified, model, 3)
    schema = _reload(documents.prediction_schema(model, history, "marginal"))
    loaded = documents.load_prediction(schema)
    assert all(a.max_abs_diff(b) == 0.0 for a, b in zip(loaded, history))


def test_error_document_carries_witness(or_gate):
    """Test the error document of a failed separation."""
    cpt = or_gate[-1]
    x, y = cpt.parents
    with pytest.raises(NotSeparable) as info:
        separate_two(cpt, x, y)
    schema = _reload(documents.error_schema(info.value))
    assert schema.error == "NotSeparable"
    assert schema.witness is not None
    assert set(schema.witness.assignment) == {"X", "Y"}


def test_factors_document_reloads(rng):
    """Test that a transformed network reloads with the same factors and selector."""
    x, y, z = Variable("X", 2), Variable("Y", 3), Variable("Z", 2)
    cpts = [
        Cpt(x, (), [0.3, 0.7]),
        Cpt(y, (), [0.2, 0.5, 0.3]),
        generators.random_separable_cpt(z, [(x,), (y,)], rng),
    ]
    factors = transform_network(cpts, {"Z": [x, y]})
    selectors = list({v.name: v for f in factors for v in f.scope if is_selector(v)}.values())
    schema = _reload(documents.selector_factors_schema(factors, selectors))
    assert schema.selectors == [selectors[0].name]
    loaded = documents.load_factors(schema)
    assert loaded == factors
    expected, _ = eliminate(factors, (x,), Assignment(((z, 1),)))
    actual, _ = eliminate(loaded, (x,), Assignment(((z, 1),)))
    assert actual.max_abs_diff(expected) == 0.0
