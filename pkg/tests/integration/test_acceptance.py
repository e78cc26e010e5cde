"""End-to-end checks of the decomposition, propagation and document layers."""
import os

import numpy as np
import pytest

from sepinfer.api import documents
from sepinfer.core import dbn, generators
from sepinfer.core.errors import NotSeparable
from sepinfer.core.inference import eliminate
from sepinfer.core.prob_core import Assignment, Cpt, Variable
from sepinfer.core.separability import (
    TreeRepresentation,
    separate_n,
    separate_two,
    sufficiency_oracle,
    tree_separate,
)
from sepinfer.core.transform import to_sum_of_products, transform_network
from sepinfer.sepinfer_cli import EXIT_OK, run

pytestmark = pytest.mark.integration


def _succeeds(separate, *args):
    try:
        return separate(*args)
    except NotSeparable:
        return None


@pytest.mark.slow
def test_two_block_separation_matches_oracle():
    """Test separate_two against the oracle on mixtures and unconstrained tables."""
    rng = generators.make_rng(11)
    disagreements = 0
    for trial in range(500):
        x = Variable("X", int(rng.integers(2, 6)))
        y = Variable("Y", int(rng.integers(2, 6)))
        z = Variable("Z", int(rng.integers(2, 6)))
        if trial % 2 == 0:
            cpt = generators.random_separable_cpt(z, [(x,), (y,)], rng)
        else:
            cpt = generators.random_cpt(z, (x, y), rng)
        decomposition = _succeeds(separate_two, cpt, x, y)
        if (decomposition is not None) != sufficiency_oracle(cpt, [(x,), (y,)]):
            disagreements += 1
        if decomposition is not None:
            assert decomposition.max_error(cpt) <= 1e-9
        if trial % 2 == 0:
            assert decomposition is not None
    assert disagreements == 0


@pytest.mark.slow
def test_n_block_separation_matches_oracle():
    """Test separate_n on three and four binary parents."""
    rng = generators.make_rng(12)
    for trial in range(200):
        parents = [Variable(f"X{i + 1}", 2) for i in range(3 + trial % 2)]
        z = Variable("Z", 2)
        blocks = [(p,) for p in parents]
        if trial % 4 < 2:
            cpt = generators.random_separable_cpt(z, blocks, rng)
        else:
            cpt = generators.random_cpt(z, parents, rng)
        decomposition = _succeeds(separate_n, cpt, blocks)
        assert (decomposition is not None) == sufficiency_oracle(cpt, blocks)
        if decomposition is not None:
            assert decomposition.max_error(cpt) <= 1e-9


@pytest.mark.slow
def test_tree_separation_matches_oracle():
    """Test tree_separate on weather transitions and on unconstrained tables."""
    rng = generators.make_rng(13)
    for trial in range(100):
        spec = generators.random_weather_spec(3, 2, seed=trial)
        model, family, tree = generators.make_weather(spec)
        cpt = dbn.product_cpt(model, family[trial % 3], parents=model.state)
        decomposition = _succeeds(tree_separate, cpt, tree)
        assert decomposition is not None
        assert sufficiency_oracle(cpt, family)
        assert decomposition.max_error(cpt) <= 1e-9

        unconstrained = generators.random_cpt(Variable("Z", 2), model.state, rng)
        assert _succeeds(tree_separate, unconstrained, tree) is None
        assert not sufficiency_oracle(unconstrained, family)


@pytest.mark.slow
def test_selector_identity_and_elimination():
    """Test the selector rewrite on many decompositions and random queries."""
    rng = generators.make_rng(14)
    for _ in range(200):
        parents = [Variable(f"X{i + 1}", int(rng.integers(2, 4))) for i in range(3)]
        z = Variable("Z", int(rng.integers(2, 4)))
        cpt = generators.random_separable_cpt(z, [(p,) for p in parents], rng)
        decomposition = separate_n(cpt, [(p,) for p in parents])
        rewritten = to_sum_of_products(decomposition)
        assert rewritten.reconstruct().max_abs_diff(decomposition.reconstruct().table) <= 1e-12
        assert rewritten.reconstruct().max_abs_diff(cpt.table) <= 1e-9

    for _ in range(50):
        parents = [Variable(f"X{i + 1}", 2) for i in range(4)]
        z = Variable("Z", 3)
        priors = [Cpt(p, (), rng.dirichlet(np.ones(2))) for p in parents]
        child = generators.random_separable_cpt(z, [(p,) for p in parents], rng)
        cpts = priors + [child]
        transformed = transform_network(cpts, {"Z": [(p,) for p in parents]})
        observed = parents[int(rng.integers(0, 4))]
        target = [p for p in parents if p != observed][int(rng.integers(0, 3))]
        evidence = Assignment(((observed, int(rng.integers(0, 2))), (z, int(rng.integers(0, 3)))))
        expected, _ = eliminate([c.table for c in cpts], (target,), evidence)
        actual, _ = eliminate(transformed, (target,), evidence)
        assert actual.max_abs_diff(expected) <= 1e-9


def test_weather_prediction_over_twenty_steps():
    """Test marginal propagation against the exact joint on the standard weather demo."""
    model, family, tree = generators.make_weather(generators.random_weather_spec(4, 4, seed=0))
    verified = dbn.check_self_sufficient(model, family, tree)
    marginal = dbn.predict_marginals(verified, model, 20)
    exact = dbn.predict_exact(model, 20)
    assert max(dbn.divergence(q, joint) for q, joint in zip(marginal, exact)) <= 1e-9


def test_cost_is_linear_in_locations():
    """Test that marginal cost grows linearly while exact cost grows exponentially."""
    sizes = list(range(2, 7))
    marginal, exact = [], []
    for n in sizes:
        model, family, tree = generators.make_weather(generators.random_weather_spec(n, 2, seed=n))
        verified = dbn.check_self_sufficient(model, family, tree)
        report = dbn.cost_report(verified, model, 5)
        marginal.append(report.marginal_operations)
        exact.append(report.exact_operations)

    slope, intercept = np.polyfit(sizes, marginal, 1)
    fitted = slope * np.array(sizes) + intercept
    residual = np.linalg.norm(np.array(marginal) - fitted) / np.linalg.norm(marginal)
    assert residual < 0.05
    growth, _ = np.polyfit(sizes, np.log2(exact), 1)
    assert 1.0 <= growth <= 2.0
    assert all(b / a >= 2 for a, b in zip(exact, exact[1:]))
    assert marginal[-1] < exact[-1]


def test_copies_lose_the_pair_joint():
    """Test exact singleton marginals but a wrong pair joint on the copy model."""
    model = generators.make_copy_model(0.9)
    x, y = model.state
    verified = dbn.check_self_sufficient(model, [(x,), (y,)])
    steps, _ = dbn.compare_predictions(verified, model, 10, query=(x, y))
    assert max(s.divergence for s in steps) <= 1e-9
    assert min(s.query_divergence for s in steps) >= 0.05
    pair = dbn.product_cpt(model, (x, y))
    assert not sufficiency_oracle(pair, [(x,), (y,)])


@pytest.mark.slow
def test_merge_rule_on_random_instances():
    """Test the pairwise-union merging rule on random separable pairs."""
    rng = generators.make_rng(15)
    a, b, c, d = (Variable(name, 2) for name in "ABCD")
    for _ in range(100):
        first = generators.random_separable_cpt(Variable("Z1", 2), [(a,), (b,)], rng)
        second = generators.random_separable_cpt(Variable("Z2", 2), [(c,), (d,)], rng)
        assert dbn.merge_rule_check(first, second, ((a,), (b,)), ((c,), (d,)))


@pytest.mark.slow
def test_filtering_policies():
    """Test strict filtering exactness and the breakdown under local evidence."""
    for seed in range(20):
        model, family, tree = generators.make_weather(generators.random_weather_spec(3, 2, seed=seed))
        verified = dbn.check_self_sufficient(model, family, tree)
        wind = model.variable("W")
        steps, _ = dbn.compare_predictions(verified, model, 3, evidence=Assignment(((wind, 0),)))
        assert max(s.divergence for s in steps) <= 1e-9

    broken = 0
    for seed in range(100):
        model, family, tree = generators.make_weather(generators.random_weather_spec(2, 2, seed=seed))
        verified = dbn.check_self_sufficient(model, family, tree)
        evidence = Assignment(((model.variable("X1"), 0),))
        steps, _ = dbn.compare_predictions(
            verified, model, 2, evidence=evidence, policy=dbn.FilterPolicy.DEMONSTRATE
        )
        if steps[-1].divergence > 1e-12:
            broken += 1
    assert broken >= 95


def test_mode_hierarchy_prediction():
    """Test that the mixed-mode model propagates exactly."""
    model, family, tree = generators.make_from_modes(generators.example_mode_spec(4))
    verified = dbn.check_self_sufficient(model, family, tree)
    steps, _ = dbn.compare_predictions(verified, model, 10)
    assert max(s.divergence for s in steps) <= 1e-9


@pytest.mark.slow
def test_documents_round_trip_bit_exactly():
    """Test that random networks serialize to the same text after a reload."""
    rng = generators.make_rng(16)
    for _ in range(100):
        x = Variable("X", int(rng.integers(2, 5)))
        y = Variable("Y", int(rng.integers(2, 5)))
        z = Variable("Z", int(rng.integers(2, 5)))
        cpts = [
            Cpt(x, (), rng.dirichlet(np.ones(x.cardinality))),
            generators.random_cpt(y, (x,), rng),
            generators.random_cpt(z, (x, y), rng),
        ]
        text = documents.dumps(documents.network_document(cpts))
        network = documents.build_network(documents.load_model(text))
        assert network.cpts == cpts
        assert documents.dumps(documents.network_document(network.cpts)) == text


def test_cli_compare_is_reproducible(tmp_dir):
    """Test that a seeded demo compared twice gives byte-identical output."""
    outputs = []
    for attempt in range(2):
        model_path = os.path.join(tmp_dir, f"weather-{attempt}.json")
        result_path = os.path.join(tmp_dir, f"comparison-{attempt}.json")
        assert run(["demo", "weather", "--seed", "5", "--output", model_path]) == EXIT_OK
        assert run(["compare", model_path, "--steps", "20", "--output", result_path]) == EXIT_OK
        with open(result_path, "rb") as fh:
            outputs.append(fh.read())
    assert outputs[0] == outputs[1]


def test_flat_tree_of_weather_matches_family():
    """Test that the weather tree is the flat tree over its family."""
    model, family, tree = generators.make_weather(generators.random_weather_spec(3, 3, seed=2))
    assert tree.subsets() == TreeRepresentation.flat(family).subsets()
    assert [v.name for v in tree.vars_at(())] == ["W"]
