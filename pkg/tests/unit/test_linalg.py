"""Unit tests for the Gauss-Jordan helpers."""
import numpy as np

from sepinfer.core.linalg import annihilation_residual, null_space, row_echelon


def test_row_echelon_identity_pivots():
    """Test that a full-rank matrix reduces to the identity."""
    reduced, pivots = row_echelon([[2.0, 1.0], [1.0, 3.0]])
    np.testing.assert_allclose(reduced, np.eye(2), atol=1e-12)
    assert pivots == [0, 1]


def test_row_echelon_does_not_modify_input():
    """Test that the input matrix is copied."""
    matrix = np.array([[0.0, 1.0], [1.0, 0.0]])
    row_echelon(matrix)
    np.testing.assert_array_equal(matrix, [[0.0, 1.0], [1.0, 0.0]])


def test_null_space_of_rank_deficient_matrix():
    """Test that a repeated row leaves one free direction."""
    matrix = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]])
    basis = null_space(matrix)
    assert basis.shape == (3, 1)
    np.testing.assert_allclose(matrix @ basis, 0.0, atol=1e-12)


def test_null_space_is_annihilated():
    """Test that every null-space column maps to zero."""
    matrix = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    basis = null_space(matrix)
    assert basis.shape == (4, 2)
    np.testing.assert_allclose(matrix @ basis, 0.0, atol=1e-12)


def test_annihilation_residual():
    """Test residual of operators inside and outside the constraint row space."""
    constraints = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    inside = np.array([[0.3, 0.3, 0.9, 0.9]])
    outside = np.array([[0.3, 0.7, 0.9, 0.9]])
    assert annihilation_residual(inside, constraints) < 1e-12
    assert annihilation_residual(outside, constraints) > 0.1


def test_annihilation_residual_full_rank():
    """Test that a full-rank constraint set leaves nothing to annihilate."""
    assert annihilation_residual(np.ones((1, 2)), np.eye(2)) == 0.0
