"""Unit tests for variables, factors, CPTs and marginal sets."""
import numpy as np
import pytest

from sepinfer.core.errors import (
    InvalidModelError,
    MarginalInconsistencyError,
    MissingMarginalError,
    ScopeError,
    ZeroMassError,
)
from sepinfer.core.prob_core import (
    Assignment,
    Cpt,
    Factor,
    MarginalSet,
    Variable,
    compound_variable,
    condition,
    joint_child_cpt,
    marginalize_to,
    multiply,
    normalize,
    restrict,
    sum_out,
)


def test_variable_needs_two_states():
    """Test that a variable with fewer than two states is rejected."""
    with pytest.raises(InvalidModelError):
        Variable("A", 1)


def test_assignment_index_round_trip():
    """Test mixed-radix encoding with the last variable varying fastest."""
    a, b = Variable("A", 3), Variable("B", 2)
    assignment = Assignment(((a, 2), (b, 1)))
    assert assignment.index() == 5
    assert Assignment.from_index((a, b), 5).to_dict() == {"A": 2, "B": 1}
    assert str(assignment) == "{A=2, B=1}"


def test_assignment_rejects_out_of_range():
    """Test value range checks."""
    with pytest.raises(InvalidModelError):
        Assignment(((Variable("A", 2), 2),))


def test_factor_rejects_negative_values(xyz):
    """Test that factors are non-negative."""
    x, _, _ = xyz
    with pytest.raises(InvalidModelError):
        Factor((x,), [0.5, -0.1])


def test_factor_rejects_duplicate_scope(xyz):
    """Test scope uniqueness."""
    x, _, _ = xyz
    with pytest.raises(ScopeError):
        Factor((x, x), [0.25] * 4)


def test_multiply_and_sum_out(xyz):
    """Test product over the union scope and summing out."""
    x, y, _ = xyz
    fx = Factor((x,), [0.2, 0.8])
    fy = Factor((y,), [0.5, 0.5])
    product = multiply(fx, fy)
    assert [v.name for v in product.scope] == ["X", "Y"]
    np.testing.assert_allclose(product.values, [0.1, 0.1, 0.4, 0.4])
    np.testing.assert_allclose(sum_out(product, y).values, [0.2, 0.8])


def test_reorder_transposes_table(xyz):
    """Test that reorder permutes the flat table."""
    x, y, _ = xyz
    f = Factor((x, y), [1, 2, 3, 4])
    np.testing.assert_allclose(f.reorder((y, x)).values, [1, 3, 2, 4])
    assert f.allclose(f.reorder((y, x)), atol=0.0)


def test_condition_drops_evidence_variables(xyz):
    """Test slicing at evidence without renormalization."""
    x, y, _ = xyz
    f = Factor((x, y), [1, 2, 3, 4])
    sliced = condition(f, Assignment(((x, 1),)))
    assert sliced.scope == (y,)
    np.testing.assert_allclose(sliced.values, [3, 4])


def test_restrict_keeps_scope(xyz):
    """Test that restrict zeroes inconsistent cells."""
    x, y, _ = xyz
    f = Factor((x, y), [1, 2, 3, 4])
    masked = restrict(f, Assignment(((y, 0),)))
    assert masked.scope == (x, y)
    np.testing.assert_allclose(masked.values, [1, 0, 3, 0])


def test_marginalize_orders_scope(xyz):
    """Test marginalization onto an explicitly ordered subset."""
    x, y, z = xyz
    f = Factor((x, y, z), np.arange(8, dtype=float))
    marginal = marginalize_to(f, (z, x))
    assert marginal.scope == (z, x)
    np.testing.assert_allclose(marginal.values, [0 + 2, 4 + 6, 1 + 3, 5 + 7])


def test_normalize_zero_mass(xyz):
    """Test that normalizing an all-zero factor raises."""
    x, _, _ = xyz
    with pytest.raises(ZeroMassError):
        normalize(Factor((x,), [0.0, 0.0]))


def test_cpt_rows_must_sum_to_one(xyz):
    """Test CPT normalization check."""
    x, _, z = xyz
    with pytest.raises(InvalidModelError):
        Cpt.from_matrix(z, (x,), [[0.5, 0.4], [0.5, 0.5]])


def test_cpt_distribution_and_conditioned(switch):
    """Test row lookup and slicing a CPT at a parent value."""
    cpt = switch[-1]
    x, w, y = cpt.parents
    row = cpt.distribution(Assignment(((x, 1), (w, 0), (y, 0))))
    np.testing.assert_allclose(row, [0.0, 1.0])
    sliced = cpt.conditioned(Assignment(((w, 1),)))
    assert [v.name for v in sliced.parents] == ["X", "Y"]
    np.testing.assert_allclose(sliced.matrix, [[1, 0], [0, 1], [1, 0], [0, 1]])


def test_joint_child_cpt_is_product(xyz):
    """Test the compound child of two conditionally independent children."""
    x, y, _ = xyz
    a, b = Variable("A", 2), Variable("B", 2)
    first = Cpt.from_matrix(a, (x,), [[0.9, 0.1], [0.2, 0.8]])
    second = Cpt.from_matrix(b, (y,), [[0.6, 0.4], [0.3, 0.7]])
    pair = joint_child_cpt([first, second])
    assert pair.child == compound_variable((a, b))
    assert pair.child.name == "(A,B)"
    row = pair.distribution(Assignment(((x, 0), (y, 1))))
    np.testing.assert_allclose(row, np.outer([0.9, 0.1], [0.3, 0.7]).reshape(-1))


def test_marginal_set_consistency(xyz):
    """Test that overlapping subsets must agree on shared variables."""
    x, y, z = xyz
    joint = Factor((x, y, z), np.full(8, 1 / 8))
    marginals = MarginalSet.from_joint(joint, [(x, y), (y, z)])
    np.testing.assert_allclose(marginals.marginal_over((y,)).values, [0.5, 0.5])

    skewed = Factor((y, z), [0.4, 0.4, 0.1, 0.1])
    with pytest.raises(MarginalInconsistencyError):
        MarginalSet([(x, y), (y, z)], [marginals.marginals[0], skewed])
    loose = MarginalSet([(x, y), (y, z)], [marginals.marginals[0], skewed], approximate=True)
    assert loose.approximate


def test_marginal_over_missing_subset(xyz):
    """Test reading a joint that no subset contains."""
    x, y, _ = xyz
    marginals = MarginalSet([(x,), (y,)], [Factor.uniform((x,)), Factor.uniform((y,))])
    with pytest.raises(MissingMarginalError):
        marginals.marginal_over((x, y))
    assert marginals.marginal_over(()).values.tolist() == [1.0]


def _positive(scope, rng):
    return Factor(scope, rng.uniform(0.1, 1.0, size=int(np.prod([v.cardinality for v in scope]))))


def test_multiply_is_commutative_and_associative(rng):
    """Test that the product does not depend on operand order or grouping."""
    x, y, z = Variable("X", 2), Variable("Y", 3), Variable("Z", 2)
    f, g, h = _positive((x, y), rng), _positive((y, z), rng), _positive((z, x), rng)
    assert multiply(f, g).max_abs_diff(multiply(g, f)) <= 1e-15
    left = multiply(multiply(f, g), h)
    right = multiply(f, multiply(g, h))
    assert left.max_abs_diff(right) <= 1e-14


def test_sum_out_order_commutes(rng):
    """Test that summing two variables out in either order agrees."""
    x, y, z = Variable("X", 2), Variable("Y", 3), Variable("Z", 4)
    f = _positive((x, y, z), rng)
    first = sum_out(sum_out(f, x), z)
    second = sum_out(sum_out(f, z), x)
    assert first.max_abs_diff(second) <= 1e-12


def test_marginalize_commutes_with_normalize(rng):
    """Test that normalizing before or after marginalizing gives the same table."""
    x, y, z = Variable("X", 3), Variable("Y", 2), Variable("Z", 2)
    f = _positive((x, y, z), rng)
    for subset in [(x,), (z, x), (y, z, x)]:
        early = marginalize_to(normalize(f), subset)
        late = normalize(marginalize_to(f, subset))
        assert early.max_abs_diff(late) <= 1e-12
