"""Unit tests for variable elimination and min-fill ordering."""
import numpy as np
import pytest

from sepinfer.core import generators
from sepinfer.core.errors import ScopeError, ZeroMassError
from sepinfer.core.inference import eliminate, interaction_graph, min_fill_ordering
from sepinfer.core.prob_core import Assignment, Cpt, Variable
from sepinfer.core.separability import separate_n
from sepinfer.core.transform import to_sum_of_products


def test_interaction_graph(or_gate):
    """Test that variables sharing a factor are adjacent."""
    graph = interaction_graph([c.table for c in or_gate])
    assert set(graph.nodes) == {"X", "Y", "Z"}
    assert graph.has_edge("X", "Z") and graph.has_edge("X", "Y")
    assert graph.nodes["Z"]["variable"] == or_gate[-1].child


def test_chain_query():
    """Test a two-node chain against a hand computation."""
    a, b = Variable("A", 2), Variable("B", 2)
    prior = Cpt(a, (), [0.3, 0.7])
    link = Cpt.from_matrix(b, (a,), [[0.9, 0.1], [0.2, 0.8]])
    result, report = eliminate([prior.table, link.table], (b,))
    np.testing.assert_allclose(result.values, [0.3 * 0.9 + 0.7 * 0.2, 0.3 * 0.1 + 0.7 * 0.8])
    assert [v.name for v in report.ordering] == ["A"]
    assert report.operations > 0


def test_or_gate_posterior(or_gate):
    """Test P(X | Z=1) on the OR gate."""
    z = or_gate[-1].child
    x = or_gate[0].child
    result, _ = eliminate([c.table for c in or_gate], (x,), Assignment(((z, 1),)))
    np.testing.assert_allclose(result.values, [1 / 3, 2 / 3])


def test_unnormalized_query_gives_evidence_mass(or_gate):
    """Test that the unnormalized result sums to P(evidence)."""
    z = or_gate[-1].child
    x = or_gate[0].child
    result, _ = eliminate([c.table for c in or_gate], (x,), Assignment(((z, 0),)), normalized=False)
    assert result.total() == pytest.approx(0.25)


def test_query_also_observed(or_gate):
    """Test that a variable cannot be queried and observed together."""
    z = or_gate[-1].child
    with pytest.raises(ScopeError):
        eliminate([c.table for c in or_gate], (z,), Assignment(((z, 0),)))


def test_bad_ordering(or_gate):
    """Test an ordering that misses a hidden variable."""
    x, y, z = or_gate[0].child, or_gate[1].child, or_gate[-1].child
    with pytest.raises(ScopeError):
        eliminate([c.table for c in or_gate], (z,), ordering=[x])
    result, _ = eliminate([c.table for c in or_gate], (z,), ordering=[y, x])
    np.testing.assert_allclose(result.values, [0.25, 0.75])


def test_impossible_evidence():
    """Test evidence of probability zero."""
    a, b = Variable("A", 2), Variable("B", 2)
    prior = Cpt(a, (), [1.0, 0.0])
    copy = Cpt.from_matrix(b, (a,), np.eye(2))
    with pytest.raises(ZeroMassError):
        eliminate([prior.table, copy.table], (a,), Assignment(((b, 1),)))


@pytest.mark.parametrize("parents", [3, 4, 5, 6, 7, 8])
def test_selector_graph_keeps_scopes_small(rng, parents):
    """Test that min-fill on the rewritten node never builds more than three variables."""
    xs = [Variable(f"X{i + 1}", 2) for i in range(parents)]
    z = Variable("Z", 2)
    cpt = generators.random_separable_cpt(z, [(x,) for x in xs], rng)
    rewritten = to_sum_of_products(separate_n(cpt, [(x,) for x in xs]))
    factors = list(rewritten.factors)
    _, report = eliminate(factors, ())
    assert report.max_scope == 3

    _, direct = eliminate([cpt.table], ())
    assert direct.max_scope == parents + 1


def test_min_fill_ties_by_name():
    """Test lexicographic tie-breaking on an empty-fill graph."""
    a, b, c = Variable("A", 2), Variable("B", 2), Variable("C", 2)
    priors = [Cpt(v, (), [0.5, 0.5]).table for v in (c, a, b)]
    assert [v.name for v in min_fill_ordering(priors)] == ["A", "B", "C"]


def test_random_orderings_agree(rng):
    """Test that every valid elimination order gives the same posterior."""
    chain = [Variable(f"V{i}", 2 + i % 2) for i in range(6)]
    cpts = [generators.random_cpt(chain[0], (), rng)]
    for i in range(1, 6):
        parents = tuple(chain[max(0, i - 2):i])
        cpts.append(generators.random_cpt(chain[i], parents, rng))
    factors = [c.table for c in cpts]
    query, evidence = (chain[1],), Assignment(((chain[4], 1),))
    expected, _ = eliminate(factors, query, evidence)
    hidden = [v for v in chain if v not in query and v not in evidence.variables]
    for _ in range(10):
        ordering = [hidden[i] for i in rng.permutation(len(hidden))]
        actual, _ = eliminate(factors, query, evidence, ordering=ordering)
        assert actual.max_abs_diff(expected) <= 1e-12
