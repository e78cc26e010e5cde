"""Separable decompositions of conditional distributions.

A CPT P(Z | X_1..X_n) is separable over blocks X_1..X_n when it equals a convex
mixture sum_i gamma_i P_i(Z | X_i). This module constructs such mixtures,
their conditional and tree-structured generalizations, and an independent
linear-algebra test of sufficiency to validate them against.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from sepinfer.core.errors import (
    ComponentNotDistribution,
    InvalidModelError,
    NotConditionallySeparable,
    NotSeparable,
    NotTSeparable,
    OracleTooLarge,
    ScopeError,
)
from sepinfer.core.linalg import annihilation_residual
from sepinfer.core.prob_core import (
    DEFAULT_TOLERANCES,
    Assignment,
    Cpt,
    Factor,
    MarginalSet,
    OpCounter,
    Subset,
    Tolerances,
    Variable,
    condition,
    expand_to,
    names,
    state_size,
)
from sepinfer.utils.config import Config

logger = logging.getLogger(__name__)

BlockLike = Union[Variable, Sequence[Variable]]

_UNCHECKED = Tolerances(norm=math.inf)


@dataclass(frozen=True)
class Witness:
    """A cell where P(z|x) differs from the additive prediction P_1 + sum_i alpha_i."""

    assignment: Assignment
    child_value: int
    expected: float
    actual: float

    @property
    def violation(self) -> float:
        return abs(self.actual - self.expected)

    def to_dict(self) -> Dict[str, object]:
        return {
            "assignment": self.assignment.to_dict(),
            "child_value": self.child_value,
            "expected": self.expected,
            "actual": self.actual,
        }

    def __str__(self):
        return (
            f"cell {self.assignment} z={self.child_value}: additivity predicts "
            f"{self.expected:.6g}, table has {self.actual:.6g}"
        )


@dataclass(frozen=True)
class DecompositionTrace:
    """Intermediate quantities of the constructive decomposition.

    ``deltas[i]`` has shape (block space, |Z|) and may be negative, so it is kept
    as a plain array rather than a Factor. Every row of a delta sums to zero.
    """

    z1: int
    reference: Assignment
    baseline: Factor
    deltas: Tuple[np.ndarray, ...]
    ranges: Tuple[float, ...]


def _mixture_table(child: Variable, parents: Subset, weights, components) -> np.ndarray:
    scope = tuple(parents) + (child,)
    shape = tuple(v.cardinality for v in scope)
    table = np.zeros(shape)
    for weight, component in zip(weights, components):
        if weight == 0.0:
            continue
        table = table + weight * expand_to(component.table, scope)
    return np.broadcast_to(table, shape).reshape(-1)


@dataclass(frozen=True)
class SeparableDecomposition:
    """sum_i weights[i] * components[i](child | blocks[i])."""

    child: Variable
    blocks: Tuple[Subset, ...]
    weights: Tuple[float, ...]
    components: Tuple[Cpt, ...]
    trace: Optional[DecompositionTrace] = field(default=None, compare=False)
    degenerate: bool = False
    tolerances: Tolerances = field(default=DEFAULT_TOLERANCES, compare=False)

    def __post_init__(self):
        if not (len(self.blocks) == len(self.weights) == len(self.components)):
            raise InvalidModelError("blocks, weights and components must align")
        if any(w < 0 for w in self.weights):
            raise InvalidModelError(f"Negative mixture weight in {self.weights}")
        if abs(sum(self.weights) - 1.0) > self.tolerances.norm:
            raise InvalidModelError(f"Mixture weights sum to {sum(self.weights)!r}")
        for block, component in zip(self.blocks, self.components):
            if component.child != self.child:
                raise InvalidModelError("Every component must share the decomposed child")
            if sorted(names(component.parents)) != sorted(names(block)):
                raise InvalidModelError(
                    f"Component parents {names(component.parents)} do not match block {names(block)}"
                )

    @property
    def parents(self) -> Subset:
        return tuple(v for block in self.blocks for v in block)

    def reconstruct(self) -> Cpt:
        """The mixture as one CPT over the concatenated blocks."""
        parents = self.parents
        table = _mixture_table(self.child, parents, self.weights, self.components)
        return Cpt(self.child, parents, table, _UNCHECKED)

    def max_error(self, cpt: Cpt) -> float:
        """Largest absolute cell difference between the mixture and ``cpt``."""
        return cpt.table.max_abs_diff(self.reconstruct().table)


@dataclass(frozen=True)
class ConditionalDecomposition:
    """One separable decomposition of P^w per assignment w of ``given``."""

    child: Variable
    given: Subset
    blocks: Tuple[Subset, ...]
    entries: Tuple[Tuple[Assignment, SeparableDecomposition], ...]

    def entry(self, assignment: Assignment) -> SeparableDecomposition:
        wanted = assignment.restrict(self.given).to_dict()
        for key, decomposition in self.entries:
            if key.to_dict() == wanted:
                return decomposition
        raise KeyError(str(assignment))

    def weights(self) -> Dict[Tuple[int, ...], Tuple[float, ...]]:
        return {key.values: d.weights for key, d in self.entries}

    def reconstruct(self) -> Cpt:
        parents = self.given + tuple(v for block in self.blocks for v in block)
        tables = [d.reconstruct().table.values for _, d in self.entries]
        return Cpt(self.child, parents, np.concatenate(tables), _UNCHECKED)

    def max_error(self, cpt: Cpt) -> float:
        return cpt.table.max_abs_diff(self.reconstruct().table)


def _as_block(block: BlockLike) -> Subset:
    if isinstance(block, Variable):
        return (block,)
    return tuple(block)


def _check_partition(parents: Subset, blocks: Sequence[Subset]):
    flat = [v.name for block in blocks for v in block]
    if len(set(flat)) != len(flat):
        raise ScopeError(f"Blocks overlap: {[list(names(b)) for b in blocks]}")
    if set(flat) != set(names(parents)):
        raise ScopeError(
            f"Blocks {[list(names(b)) for b in blocks]} do not partition parents {list(names(parents))}"
        )


def _first_violation(residual: np.ndarray, tol: float) -> Optional[int]:
    flat = np.abs(residual).reshape(-1)
    hits = np.flatnonzero(flat > tol)
    return int(hits[0]) if hits.size else None


def _clean_component(values: np.ndarray, block_index: int, tol: float) -> np.ndarray:
    minimum = float(values.min(initial=0.0))
    if minimum < -tol:
        raise ComponentNotDistribution(block_index, minimum)
    cleaned = np.where(values < 0.0, 0.0, values)
    return cleaned / cleaned.sum(axis=1, keepdims=True)


def separate_n(
    cpt: Cpt,
    blocks: Sequence[BlockLike],
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> SeparableDecomposition:
    """Write ``cpt`` as a convex mixture of conditionals, one per block.

    Args:
        cpt: The conditional distribution P(Z | parents).
        blocks: Disjoint variable subsets whose union is ``cpt.parents``. A bare
            Variable stands for a singleton block; empty blocks are allowed.
        tolerances: ``sep`` bounds the additivity residual and the clamping range.

    Returns:
        A SeparableDecomposition whose mixture reproduces ``cpt`` within
        ``tolerances.sep`` at every cell.

    Raises:
        ScopeError: If the blocks do not partition the parents.
        NotSeparable: With the first cell violating additivity.
        ComponentNotDistribution: If a component cannot be made a distribution.
    """
    blocks = tuple(_as_block(b) for b in blocks)
    if not blocks:
        raise ScopeError("At least one block is required")
    _check_partition(cpt.parents, blocks)
    child = cpt.child
    nz = child.cardinality
    tol = tolerances.sep

    order = tuple(v for block in blocks for v in block)
    sizes = tuple(state_size(block) for block in blocks)
    table = cpt.reordered(order).matrix.reshape(sizes + (nz,))
    rows = table.reshape(-1, nz)

    spread = rows.max(axis=0) - rows.min(axis=0)
    z1 = int(np.argmax(spread))
    ref_flat = int(np.argmin(rows[:, z1]))
    ref = np.unravel_index(ref_flat, sizes)
    baseline = rows[ref_flat].copy()

    deltas: List[np.ndarray] = []
    prediction = np.broadcast_to(baseline, table.shape).copy()
    for i in range(len(blocks)):
        index: List[object] = [int(r) for r in ref]
        index[i] = slice(None)
        delta = table[tuple(index)] - baseline
        deltas.append(delta)
        view = [1] * len(blocks) + [nz]
        view[i] = sizes[i]
        prediction += delta.reshape(view)
    ranges = tuple(float(d[:, z1].max()) for d in deltas)

    reference = Assignment.from_index(order, ref_flat)
    trace = DecompositionTrace(
        z1=z1,
        reference=reference,
        baseline=Factor((child,), np.clip(baseline, 0.0, None)),
        deltas=tuple(deltas),
        ranges=ranges,
    )

    violation = _first_violation(table - prediction, tol)
    if violation is not None:
        parent_index, z = divmod(violation, nz)
        witness = Witness(
            assignment=Assignment.from_index(order, parent_index),
            child_value=int(z),
            expected=float(prediction.reshape(-1)[violation]),
            actual=float(table.reshape(-1)[violation]),
        )
        raise NotSeparable(witness, trace)

    total = sum(ranges)
    n = len(blocks)
    if total <= tol:
        logger.debug("Child %s does not depend on its parents; using uniform weights", child.name)
        components = tuple(Cpt(child, block, np.tile(baseline, state_size(block)), _UNCHECKED)
                           for block in blocks)
        weights = tuple(1.0 / n for _ in blocks)
        return SeparableDecomposition(child, blocks, weights, components, trace, True, tolerances)

    shares = [r / total for r in ranges]
    matrices = _natural_components(baseline, deltas, shares, tol)
    if matrices is None:
        logger.debug("Natural components for %s leave the simplex; splitting slack", child.name)
        weights, matrices = _slack_components(baseline, deltas, shares)
    else:
        weights = shares

    components = []
    for i, (block, matrix) in enumerate(zip(blocks, matrices)):
        if weights[i] == 0.0:
            matrix = np.tile(baseline, (sizes[i], 1))
        components.append(Cpt(child, block, _clean_component(matrix, i, tol).reshape(-1), _UNCHECKED))

    total_weight = float(sum(weights))
    weights = tuple(float(w) / total_weight for w in weights)
    return SeparableDecomposition(child, blocks, weights, tuple(components), trace, False, tolerances)


def _natural_components(baseline, deltas, shares, tol) -> Optional[List[np.ndarray]]:
    """P_i = P_1 + alpha_i / gamma_i, or None when some entry drops below -tol."""
    matrices = []
    for delta, share in zip(deltas, shares):
        if share == 0.0:
            if np.max(np.abs(delta), initial=0.0) > tol:
                return None
            matrices.append(np.broadcast_to(baseline, delta.shape).copy())
            continue
        matrix = baseline + delta / share
        if matrix.min(initial=0.0) < -tol:
            return None
        matrices.append(matrix)
    return matrices


def _slack_components(baseline, deltas, shares) -> Tuple[List[float], List[np.ndarray]]:
    """Split P_1 into per-block offsets c_i with c_i + alpha_i >= 0.

    m_i(z) = max(0, -min_x alpha_i(x, z)); whatever P_1 leaves after the m_i is
    shared out in proportion to ``shares``. Non-negativity of the table at the
    per-coordinate minimizer guarantees the leftover is non-negative.
    """
    floors = [np.maximum(0.0, -delta.min(axis=0)) for delta in deltas]
    slack = np.maximum(baseline - sum(floors), 0.0)
    weights: List[float] = []
    matrices: List[np.ndarray] = []
    for delta, floor, share in zip(deltas, floors, shares):
        offset = floor + share * slack
        weight = float(offset.sum())
        weights.append(weight)
        if weight == 0.0:
            matrices.append(np.broadcast_to(baseline, delta.shape).copy())
        else:
            matrices.append((offset + delta) / weight)
    return weights, matrices


def separate_two(
    cpt: Cpt,
    left: BlockLike,
    right: BlockLike,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> SeparableDecomposition:
    """gamma P_left(Z|left) + (1 - gamma) P_right(Z|right), gamma = a*/(a* + b*)."""
    return separate_n(cpt, [left, right], tolerances)


def synergy_violation(cpt: Cpt, left: BlockLike, right: BlockLike) -> float:
    """Largest |P(z|x_i y_j) + P(z|x_k y_l) - P(z|x_i y_l) - P(z|x_k y_j)|.

    Zero (up to rounding) exactly when the CPT is separable over the two blocks.
    """
    left, right = _as_block(left), _as_block(right)
    _check_partition(cpt.parents, (left, right))
    nz = cpt.child.cardinality
    table = cpt.reordered(left + right).matrix.reshape(state_size(left), state_size(right), nz)
    ij = table[:, None, :, None, :]
    kl = table[None, :, None, :, :]
    il = table[:, None, None, :, :]
    kj = table[None, :, :, None, :]
    return float(np.max(np.abs(ij + kl - il - kj)))


def conditional_separate(
    cpt: Cpt,
    blocks: Sequence[BlockLike],
    given: Sequence[Variable],
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> ConditionalDecomposition:
    """Separate every slice P^w over the blocks with ``given`` removed.

    Raises:
        ScopeError: If ``given`` is not among the parents, the blocks do not
            cover the parents, or the reduced blocks overlap.
        NotConditionallySeparable: For the first assignment w whose slice fails.
    """
    given = tuple(given)
    blocks = tuple(_as_block(b) for b in blocks)
    parent_names = set(names(cpt.parents))
    given_names = set(names(given))
    if not given_names <= parent_names:
        raise ScopeError(f"Conditioning set {sorted(given_names)} is not among the parents")
    covered = {v.name for block in blocks for v in block}
    if covered != parent_names:
        raise ScopeError("Blocks must cover exactly the parents")
    reduced = tuple(tuple(v for v in block if v.name not in given_names) for block in blocks)
    _check_partition(tuple(v for v in cpt.parents if v.name not in given_names), reduced)

    entries = []
    for index in range(state_size(given)):
        w = Assignment.from_index(given, index)
        try:
            decomposition = separate_n(cpt.conditioned(w), reduced, tolerances)
        except NotSeparable as exc:
            raise NotConditionallySeparable(w, exc.witness, exc.trace) from exc
        entries.append((w, decomposition))
    return ConditionalDecomposition(cpt.child, given, reduced, tuple(entries))


@dataclass(frozen=True)
class TreeNode:
    """A node of a tree representation; leaves carry a subset."""

    children: Tuple["TreeNode", ...] = ()
    subset: Subset = ()

    def __post_init__(self):
        if self.children and self.subset:
            raise InvalidModelError("Only leaves carry subsets")

    @classmethod
    def leaf(cls, subset: Sequence[Variable]) -> "TreeNode":
        return cls((), tuple(subset))

    @classmethod
    def node(cls, *children: "TreeNode") -> "TreeNode":
        if not children:
            raise InvalidModelError("Internal nodes need at least one child")
        return cls(tuple(children), ())

    @property
    def is_leaf(self) -> bool:
        return not self.children


Path = Tuple[int, ...]


class TreeRepresentation:
    """Tree with one leaf per subset.

    Nodes are addressed by paths (tuples of child indices from the root). A
    variable's location is the deepest node above every leaf containing it.
    """

    def __init__(self, root: TreeNode):
        self._root = root
        self._leaves: List[Tuple[Path, Subset]] = []
        self._collect(root, ())
        self._variables: Dict[str, Variable] = {}
        for _, subset in self._leaves:
            for var in subset:
                known = self._variables.setdefault(var.name, var)
                if known != var:
                    raise InvalidModelError(f"Variable {var.name} appears with two cardinalities")
        self._locations: Dict[str, Path] = {}
        for name in self._variables:
            paths = [p for p, s in self._leaves if name in names(s)]
            prefix: Path = paths[0]
            for p in paths[1:]:
                common = 0
                while common < min(len(prefix), len(p)) and prefix[common] == p[common]:
                    common += 1
                prefix = prefix[:common]
            self._locations[name] = prefix

    def _collect(self, node: TreeNode, path: Path):
        if node.is_leaf:
            self._leaves.append((path, node.subset))
            return
        for i, child in enumerate(node.children):
            self._collect(child, path + (i,))

    @classmethod
    def flat(cls, subsets: Sequence[Sequence[Variable]]) -> "TreeRepresentation":
        """Root with one leaf per subset."""
        subsets = [tuple(s) for s in subsets]
        if len(subsets) == 1:
            return cls(TreeNode.leaf(subsets[0]))
        return cls(TreeNode.node(*(TreeNode.leaf(s) for s in subsets)))

    def restricted(self, variables: Sequence[Variable]) -> "TreeRepresentation":
        """Same shape, with every leaf cut down to ``variables``; leaves may become empty."""
        keep = set(names(variables))

        def cut(node: TreeNode) -> TreeNode:
            if node.is_leaf:
                return TreeNode.leaf(tuple(v for v in node.subset if v.name in keep))
            return TreeNode.node(*(cut(child) for child in node.children))

        return TreeRepresentation(cut(self._root))

    @property
    def root(self) -> TreeNode:
        return self._root

    def leaves(self) -> List[Tuple[Path, Subset]]:
        return list(self._leaves)

    def subsets(self) -> List[Subset]:
        return [s for _, s in self._leaves]

    def variables(self) -> Subset:
        return tuple(self._variables.values())

    def node(self, path: Path) -> TreeNode:
        node = self._root
        for i in path:
            node = node.children[i]
        return node

    def location(self, var: Variable) -> Path:
        try:
            return self._locations[var.name]
        except KeyError:
            raise ScopeError(f"{var.name} is in no leaf of the tree") from None

    def vars_at(self, path: Path) -> Subset:
        path = tuple(path)
        return tuple(v for v in self._variables.values() if self._locations[v.name] == path)

    def vars_under(self, path: Path) -> Subset:
        path = tuple(path)
        return tuple(
            v for v in self._variables.values()
            if self._locations[v.name][: len(path)] == path
        )

    def is_complete(self) -> bool:
        """Every leaf beneath a variable's location contains the variable."""
        for name, location in self._locations.items():
            for path, subset in self._leaves:
                if path[: len(location)] == location and name not in names(subset):
                    return False
        return True

    def __repr__(self):
        return f"TreeRepresentation({[list(names(s)) for s in self.subsets()]})"


@dataclass(frozen=True)
class TreeBranch:
    """Separation of one slice at an internal node."""

    assignment: Assignment
    weights: Tuple[float, ...]
    children: Tuple["TreeDecomposition", ...]
    degenerate: bool = False


@dataclass(frozen=True)
class TreeDecomposition:
    """Recursive decomposition mirroring a tree representation."""

    child: Variable
    path: Path
    conditioning: Subset = ()
    blocks: Tuple[Subset, ...] = ()
    branches: Tuple[TreeBranch, ...] = ()
    leaf: Optional[Cpt] = None

    @property
    def is_leaf(self) -> bool:
        return self.leaf is not None

    def parents(self) -> Subset:
        if self.leaf is not None:
            return self.leaf.parents
        return self.conditioning + tuple(v for block in self.blocks for v in block)

    def reconstruct(self) -> Cpt:
        """Rebuild P(Z | conditioning, blocks) from the recursion."""
        if self.leaf is not None:
            return self.leaf
        rest = tuple(v for block in self.blocks for v in block)
        tables = []
        for branch in self.branches:
            components = [c.reconstruct() for c in branch.children]
            tables.append(_mixture_table(self.child, rest, branch.weights, components))
        return Cpt(self.child, self.conditioning + rest, np.concatenate(tables), _UNCHECKED)

    def max_error(self, cpt: Cpt) -> float:
        return cpt.table.max_abs_diff(self.reconstruct().table)

    def leaf_count(self) -> int:
        if self.leaf is not None:
            return 1
        return sum(c.leaf_count() for b in self.branches for c in b.children)


def tree_separate(
    cpt: Cpt,
    tree: TreeRepresentation,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> TreeDecomposition:
    """Decompose ``cpt`` recursively along ``tree``.

    At each internal node the CPT is sliced at every assignment of the
    variables located there, each slice is separated over the variables
    located under each child, and every component is decomposed along the
    child's subtree. Leaves keep their component as is.

    Raises:
        ScopeError: If the tree's variables are not exactly the parents.
        NotTSeparable: With the failing node path, the full conditioning
            assignment and the additivity witness.
    """
    if set(names(tree.variables())) != set(names(cpt.parents)):
        raise ScopeError(
            f"Tree variables {sorted(names(tree.variables()))} do not match parents "
            f"{sorted(names(cpt.parents))}"
        )
    return _separate_at(cpt, tree, (), Assignment(), tolerances)


def _separate_at(cpt, tree, path, context, tolerances) -> TreeDecomposition:
    node = tree.node(path)
    if node.is_leaf:
        return TreeDecomposition(cpt.child, path, leaf=cpt)
    given = tree.vars_at(path)
    blocks = tuple(tree.vars_under(path + (i,)) for i in range(len(node.children)))
    branches = []
    for index in range(state_size(given)):
        w = Assignment.from_index(given, index)
        full = context.merge(w)
        try:
            decomposition = separate_n(cpt.conditioned(w), blocks, tolerances)
        except NotSeparable as exc:
            raise NotTSeparable(path, full, exc.witness, exc.trace) from exc
        logger.debug("Node %s given %s: weights %s", list(path), full, decomposition.weights)
        children = tuple(
            _separate_at(component, tree, path + (i,), full, tolerances)
            for i, component in enumerate(decomposition.components)
        )
        branches.append(TreeBranch(w, decomposition.weights, children, decomposition.degenerate))
    return TreeDecomposition(cpt.child, path, given, blocks, tuple(branches))


def subset_marginal_matrix(parents: Subset, subsets: Sequence[Sequence[Variable]]) -> np.ndarray:
    """Stacked 0/1 rows mapping a joint over ``parents`` to its subset marginals.

    A final all-ones row maps the joint to its total mass.
    """
    shape = tuple(v.cardinality for v in parents)
    columns = state_size(parents)
    grid = np.indices(shape).reshape(len(parents), columns)
    position = {v.name: i for i, v in enumerate(parents)}
    blocks = []
    for subset in subsets:
        subset = tuple(subset)
        rows = np.zeros((state_size(subset), columns))
        if subset:
            axes = [position[v.name] for v in subset]
            flat = np.ravel_multi_index(tuple(grid[a] for a in axes),
                                        tuple(v.cardinality for v in subset))
        else:
            flat = np.zeros(columns, dtype=int)
        rows[flat, np.arange(columns)] = 1.0
        blocks.append(rows)
    blocks.append(np.ones((1, columns)))
    return np.vstack(blocks)


def sufficiency_oracle(
    cpt: Cpt,
    subsets: Sequence[Sequence[Variable]],
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    cap: int = Config.ORACLE_CAP,
) -> bool:
    """Whether P(Z | q) depends on q only through its marginals over ``subsets``.

    Every zero-mass direction that leaves all subset marginals unchanged (the
    null space of the stacked marginal map) must be annihilated by the
    |Z| x parent-space matrix of conditionals.

    Raises:
        ScopeError: If the subsets do not cover exactly the parents.
        OracleTooLarge: If the parent space exceeds ``cap``.
    """
    subsets = [tuple(s) for s in subsets]
    covered = {v.name for s in subsets for v in s}
    if covered != set(names(cpt.parents)):
        raise ScopeError("Oracle subsets must cover exactly the parents")
    if cpt.parent_space > cap:
        raise OracleTooLarge(
            f"Parent space {cpt.parent_space} of {cpt.child.name} exceeds oracle cap {cap}"
        )
    constraints = subset_marginal_matrix(cpt.parents, subsets)
    residual = annihilation_residual(cpt.matrix.T, constraints, tolerances.pivot)
    logger.debug("Oracle residual for %s: %.3g", cpt.child.name, residual)
    return residual <= tolerances.sep


def apply_decomposition(
    decomposition: Union[SeparableDecomposition, TreeDecomposition],
    marginals: MarginalSet,
    counter: Optional[OpCounter] = None,
) -> Factor:
    """Evaluate the child's distribution from subset marginals.

    Raises:
        MissingMarginalError: If no subset covers a block (or a leaf plus its
            conditioning context).
        MarginalInconsistencyError: If containing subsets disagree.
    """
    child = decomposition.child
    result = np.zeros(child.cardinality)
    if isinstance(decomposition, SeparableDecomposition):
        for block, weight, component in zip(
            decomposition.blocks, decomposition.weights, decomposition.components
        ):
            if weight == 0.0:
                continue
            q = marginals.marginal_over(block)
            result += weight * (q.values @ component.reordered(block).matrix)
            if counter is not None:
                counter.add(len(q) * child.cardinality + child.cardinality)
    else:
        cache: Dict[Tuple[str, ...], Factor] = {}
        _apply_tree(decomposition, marginals, Assignment(), 1.0, result, counter, cache)
    return Factor((child,), np.clip(result, 0.0, None))


def _apply_tree(node, marginals, context, weight, out, counter, cache):
    if node.leaf is not None:
        variables = context.variables + node.leaf.parents
        key = names(variables)
        if key not in cache:
            cache[key] = marginals.marginal_over(variables)
        joint = condition(cache[key], context)
        out += weight * (joint.values @ node.leaf.matrix)
        if counter is not None:
            nz = node.child.cardinality
            counter.add(len(joint) * nz + nz)
        return
    for branch in node.branches:
        scope = context.merge(branch.assignment)
        for share, child in zip(branch.weights, branch.children):
            if share == 0.0:
                continue
            _apply_tree(child, marginals, scope, weight * share, out, counter, cache)
