"""Variables, assignments, factors and conditional probability tables.

Factor values are stored flat in mixed-radix order: the first scope variable is
the most significant digit and the last one varies fastest. This is numpy's C
order, so ``values.reshape(shape)`` gives the tensor view used by every
operation here.
"""
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from sepinfer.core.errors import (
    InvalidModelError,
    MarginalInconsistencyError,
    MissingMarginalError,
    ScopeError,
    ZeroMassError,
)
from sepinfer.utils.config import Config


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances, overridable per model."""

    norm: float = Config.EPS_NORM
    consistency: float = Config.EPS_CONSISTENCY
    sep: float = Config.EPS_SEP
    pivot: float = Config.PIVOT_TOL

    @classmethod
    def from_config(cls, cfg) -> "Tolerances":
        return cls(
            norm=cfg.EPS_NORM,
            consistency=cfg.EPS_CONSISTENCY,
            sep=cfg.EPS_SEP,
            pivot=cfg.PIVOT_TOL,
        )


DEFAULT_TOLERANCES = Tolerances.from_config(Config)


@dataclass(frozen=True)
class Variable:
    """A discrete random variable."""

    name: str
    cardinality: int

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise InvalidModelError("Variable name must be a non-empty string")
        if int(self.cardinality) != self.cardinality or self.cardinality < 2:
            raise InvalidModelError(
                f"Variable {self.name!r} needs cardinality >= 2, got {self.cardinality}"
            )

    def __repr__(self):
        return f"Variable({self.name!r}, {self.cardinality})"


Subset = Tuple[Variable, ...]


def compound_variable(variables: Sequence[Variable], name: Optional[str] = None) -> Variable:
    """Merge variables into one whose index is their mixed-radix joint index."""
    variables = tuple(variables)
    if not variables:
        raise InvalidModelError("A compound variable needs at least one member")
    if name is None:
        name = "(" + ",".join(v.name for v in variables) + ")"
    return Variable(name, math.prod(v.cardinality for v in variables))


def state_size(variables: Iterable[Variable]) -> int:
    """Number of joint assignments of ``variables``."""
    return math.prod(v.cardinality for v in variables)


def names(variables: Iterable[Variable]) -> Tuple[str, ...]:
    return tuple(v.name for v in variables)


@dataclass(frozen=True)
class Assignment:
    """An ordered list of (variable, value-index) pairs."""

    pairs: Tuple[Tuple[Variable, int], ...] = ()

    def __post_init__(self):
        pairs = tuple((var, int(value)) for var, value in self.pairs)
        seen = set()
        for var, value in pairs:
            if var.name in seen:
                raise InvalidModelError(f"Duplicate variable {var.name!r} in assignment")
            if not 0 <= value < var.cardinality:
                raise InvalidModelError(
                    f"Value {value} out of range for {var.name} (cardinality {var.cardinality})"
                )
            seen.add(var.name)
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def of(cls, mapping: Mapping[Variable, int]) -> "Assignment":
        return cls(tuple(mapping.items()))

    @classmethod
    def from_index(cls, variables: Sequence[Variable], index: int) -> "Assignment":
        """Decode a mixed-radix flat index over ``variables``."""
        variables = tuple(variables)
        if not variables:
            return cls()
        digits = np.unravel_index(int(index), tuple(v.cardinality for v in variables))
        return cls(tuple(zip(variables, (int(d) for d in digits))))

    @property
    def variables(self) -> Subset:
        return tuple(var for var, _ in self.pairs)

    @property
    def values(self) -> Tuple[int, ...]:
        return tuple(value for _, value in self.pairs)

    def index(self) -> int:
        """Mixed-radix flat index of the values over the assignment's own variables."""
        if not self.pairs:
            return 0
        return int(
            np.ravel_multi_index(self.values, tuple(v.cardinality for v in self.variables))
        )

    def restrict(self, variables: Iterable[Variable]) -> "Assignment":
        """Keep only the pairs whose variable name is among ``variables``."""
        keep = set(names(variables))
        return Assignment(tuple(p for p in self.pairs if p[0].name in keep))

    def merge(self, other: "Assignment") -> "Assignment":
        return Assignment(self.pairs + other.pairs)

    def get(self, name: str) -> Optional[int]:
        for var, value in self.pairs:
            if var.name == name:
                return value
        return None

    def to_dict(self) -> Dict[str, int]:
        return {var.name: value for var, value in self.pairs}

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __contains__(self, var):
        return any(v.name == var.name for v, _ in self.pairs)

    def __str__(self):
        inner = ", ".join(f"{var.name}={value}" for var, value in self.pairs)
        return "{" + inner + "}"


class Factor:
    """Non-negative real table over an ordered variable scope."""

    __slots__ = ("_scope", "_values")

    def __init__(self, scope: Sequence[Variable], values):
        scope = tuple(scope)
        labels = names(scope)
        if len(set(labels)) != len(labels):
            raise ScopeError(f"Duplicate variables in scope {labels}")
        array = np.array(values, dtype=np.float64).reshape(-1)
        expected = state_size(scope)
        if array.size != expected:
            raise InvalidModelError(
                f"Factor over {labels} needs {expected} values, got {array.size}"
            )
        if not np.all(np.isfinite(array)) or np.any(array < 0):
            raise InvalidModelError(f"Factor over {labels} has negative or non-finite values")
        array.setflags(write=False)
        self._scope = scope
        self._values = array

    @classmethod
    def unit(cls) -> "Factor":
        """The empty-scope factor [1], identity for multiply."""
        return cls((), [1.0])

    @classmethod
    def uniform(cls, scope: Sequence[Variable]) -> "Factor":
        scope = tuple(scope)
        size = state_size(scope)
        return cls(scope, np.full(size, 1.0 / size))

    @property
    def scope(self) -> Subset:
        return self._scope

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(v.cardinality for v in self._scope)

    @property
    def tensor(self) -> np.ndarray:
        return self._values.reshape(self.shape)

    def __len__(self):
        return self._values.size

    def index_of(self, var: Variable) -> int:
        for position, member in enumerate(self._scope):
            if member.name == var.name:
                if member.cardinality != var.cardinality:
                    raise ScopeError(
                        f"Cardinality mismatch for {var.name}: "
                        f"{member.cardinality} vs {var.cardinality}"
                    )
                return position
        raise ScopeError(f"{var.name} is not in scope {names(self._scope)}")

    def total(self) -> float:
        return float(self._values.sum())

    def value_at(self, assignment: Assignment) -> float:
        """Value at a full assignment of the scope (extra variables are ignored)."""
        digits = []
        for var in self._scope:
            value = assignment.get(var.name)
            if value is None:
                raise ScopeError(f"Assignment {assignment} does not cover {var.name}")
            digits.append(value)
        return float(self.tensor[tuple(digits)])

    def reorder(self, scope: Sequence[Variable]) -> "Factor":
        """Same table with the scope permuted to ``scope``."""
        scope = tuple(scope)
        if sorted(names(scope)) != sorted(names(self._scope)):
            raise ScopeError(f"Cannot reorder {names(self._scope)} to {names(scope)}")
        axes = [self.index_of(v) for v in scope]
        return Factor(scope, np.transpose(self.tensor, axes))

    def allclose(self, other: "Factor", atol: float) -> bool:
        """Compare values after aligning the other factor's scope to this one."""
        if sorted(names(self._scope)) != sorted(names(other.scope)):
            return False
        aligned = other.reorder(self._scope)
        return bool(np.max(np.abs(self._values - aligned.values), initial=0.0) <= atol)

    def max_abs_diff(self, other: "Factor") -> float:
        aligned = other.reorder(self._scope)
        return float(np.max(np.abs(self._values - aligned.values), initial=0.0))

    def __eq__(self, other):
        if not isinstance(other, Factor):
            return NotImplemented
        return self._scope == other.scope and np.array_equal(self._values, other.values)

    def __hash__(self):
        return hash((self._scope, self._values.tobytes()))

    def __repr__(self):
        return f"Factor({list(names(self._scope))}, {self._values.tolist()})"


def expand_to(factor: Factor, scope: Sequence[Variable]) -> np.ndarray:
    """Tensor of ``factor`` transposed and padded with unit axes to broadcast over ``scope``."""
    scope = tuple(scope)
    positions = {v.name: i for i, v in enumerate(scope)}
    for var in factor.scope:
        if var.name not in positions:
            raise ScopeError(f"{var.name} is not in target scope {names(scope)}")
        if scope[positions[var.name]].cardinality != var.cardinality:
            raise ScopeError(f"Cardinality mismatch for {var.name}")
    order = sorted(range(len(factor.scope)), key=lambda k: positions[factor.scope[k].name])
    tensor = np.transpose(factor.tensor, order)
    shape = [1] * len(scope)
    for k in order:
        shape[positions[factor.scope[k].name]] = factor.scope[k].cardinality
    return tensor.reshape(shape)


def multiply(a: Factor, b: Factor) -> Factor:
    """Pointwise product over the union scope (a's order, then b's new variables)."""
    a_vars = {v.name: v for v in a.scope}
    for var in b.scope:
        mine = a_vars.get(var.name)
        if mine is not None and mine.cardinality != var.cardinality:
            raise ScopeError(
                f"Cardinality mismatch for {var.name}: {mine.cardinality} vs {var.cardinality}"
            )
    scope = a.scope + tuple(v for v in b.scope if v.name not in a_vars)
    product = expand_to(a, scope) * expand_to(b, scope)
    return Factor(scope, np.broadcast_to(product, tuple(v.cardinality for v in scope)))


def multiply_all(factors: Iterable[Factor]) -> Factor:
    result = Factor.unit()
    for factor in factors:
        result = multiply(result, factor)
    return result


def sum_out(f: Factor, v: Variable) -> Factor:
    """Sum ``v`` out of ``f``."""
    axis = f.index_of(v)
    scope = f.scope[:axis] + f.scope[axis + 1:]
    return Factor(scope, f.tensor.sum(axis=axis))


def condition(f: Factor, evidence: Assignment) -> Factor:
    """Slice ``f`` at the evidence; evidence variables leave the scope. No renormalization."""
    index: List[object] = [slice(None)] * len(f.scope)
    fixed = set()
    for var, value in evidence:
        index[f.index_of(var)] = value
        fixed.add(var.name)
    scope = tuple(v for v in f.scope if v.name not in fixed)
    return Factor(scope, f.tensor[tuple(index)])


def restrict(f: Factor, evidence: Assignment) -> Factor:
    """Zero every entry inconsistent with the evidence; the scope is kept."""
    index: List[object] = [slice(None)] * len(f.scope)
    for var, value in evidence:
        index[f.index_of(var)] = slice(value, value + 1)
    masked = np.zeros(f.shape)
    masked[tuple(index)] = f.tensor[tuple(index)]
    return Factor(f.scope, masked)


def marginalize_to(f: Factor, subset: Sequence[Variable]) -> Factor:
    """Sum out every variable outside ``subset`` and order the scope as ``subset``."""
    subset = tuple(subset)
    labels = names(subset)
    if len(set(labels)) != len(labels):
        raise ScopeError(f"Duplicate variables in {labels}")
    keep = [f.index_of(v) for v in subset]
    drop = tuple(i for i in range(len(f.scope)) if i not in keep)
    summed = f.tensor.sum(axis=drop) if drop else f.tensor
    remaining = [i for i in range(len(f.scope)) if i not in drop]
    axes = [remaining.index(i) for i in keep]
    return Factor(subset, np.transpose(summed, axes))


def normalize(f: Factor) -> Factor:
    """Divide by the total mass."""
    total = f.total()
    if not total > 0.0:
        raise ZeroMassError(f"Cannot normalize factor over {list(names(f.scope))}: zero mass")
    return Factor(f.scope, f.values / total)


class OpCounter:
    """Running tally of multiply-add operations."""

    def __init__(self):
        self.count = 0

    def add(self, operations: int):
        self.count += int(operations)


class Cpt:
    """Conditional probability table P(child | parents)."""

    __slots__ = ("_child", "_parents", "_table")

    def __init__(
        self,
        child: Variable,
        parents: Sequence[Variable],
        table,
        tolerances: Tolerances = DEFAULT_TOLERANCES,
    ):
        parents = tuple(parents)
        if child.name in names(parents):
            raise InvalidModelError(f"{child.name} cannot be its own parent")
        scope = parents + (child,)
        if isinstance(table, Factor):
            table = table.reorder(scope)
        else:
            table = Factor(scope, table)
        sums = table.values.reshape(-1, child.cardinality).sum(axis=1)
        worst = float(np.max(np.abs(sums - 1.0)))
        if worst > tolerances.norm:
            raise InvalidModelError(
                f"CPT for {child.name} is not normalized (max row error {worst:.3g})"
            )
        self._child = child
        self._parents = parents
        self._table = table

    @classmethod
    def from_matrix(cls, child, parents, matrix, tolerances=DEFAULT_TOLERANCES) -> "Cpt":
        """Build from a (parent-space x |child|) row-stochastic matrix."""
        return cls(child, parents, np.asarray(matrix, dtype=np.float64).reshape(-1), tolerances)

    @property
    def child(self) -> Variable:
        return self._child

    @property
    def parents(self) -> Subset:
        return self._parents

    @property
    def table(self) -> Factor:
        return self._table

    @property
    def parent_space(self) -> int:
        return state_size(self._parents)

    @property
    def matrix(self) -> np.ndarray:
        """Rows are parent assignments in mixed-radix order, columns child values."""
        return self._table.values.reshape(self.parent_space, self._child.cardinality)

    def distribution(self, assignment: Assignment) -> np.ndarray:
        row = assignment.restrict(self._parents)
        if len(row) != len(self._parents):
            raise ScopeError(f"Assignment {assignment} does not cover the parents")
        ordered = Assignment(tuple((v, row.get(v.name)) for v in self._parents))
        return self.matrix[ordered.index()]

    def conditioned(self, evidence: Assignment) -> "Cpt":
        """The slice P^w(child | remaining parents)."""
        for var in evidence.variables:
            if var.name == self._child.name:
                raise ScopeError("Cannot condition a CPT on its child")
        sliced = condition(self._table, evidence)
        parents = tuple(v for v in self._parents if v not in evidence)
        return Cpt(self._child, parents, sliced, Tolerances(norm=math.inf))

    def reordered(self, parents: Sequence[Variable]) -> "Cpt":
        parents = tuple(parents)
        return Cpt(self._child, parents, self._table.reorder(parents + (self._child,)),
                   Tolerances(norm=math.inf))

    def __eq__(self, other):
        if not isinstance(other, Cpt):
            return NotImplemented
        return self._child == other.child and self._table == other.table

    def __hash__(self):
        return hash((self._child, self._table))

    def __repr__(self):
        return f"Cpt({self._child.name} | {','.join(names(self._parents))})"


def joint_child_cpt(
    cpts: Sequence[Cpt],
    parents: Optional[Sequence[Variable]] = None,
    name: Optional[str] = None,
) -> Cpt:
    """Combine CPTs whose children are independent given the parents into one CPT.

    The child is the compound of the individual children (in the given order);
    ``parents`` defaults to the union of the parent lists in order of appearance
    and may add variables none of the tables depend on.
    """
    cpts = tuple(cpts)
    if not cpts:
        raise InvalidModelError("joint_child_cpt needs at least one CPT")
    children = tuple(c.child for c in cpts)
    if len(set(names(children))) != len(children):
        raise InvalidModelError("Children must be distinct")
    if parents is None:
        seen: Dict[str, Variable] = {}
        for cpt in cpts:
            for var in cpt.parents:
                seen.setdefault(var.name, var)
        parents = tuple(seen.values())
    parents = tuple(parents)
    if set(names(parents)) & set(names(children)):
        raise InvalidModelError("A child cannot also be a parent of the combined CPT")
    scope = parents + children
    product = np.ones(tuple(v.cardinality for v in scope))
    for cpt in cpts:
        product = product * expand_to(cpt.table, scope)
    child = compound_variable(children, name)
    return Cpt(child, parents, product.reshape(-1), Tolerances(norm=math.inf))


class MarginalSet:
    """One normalized marginal per subset of a family."""

    __slots__ = ("_subsets", "_marginals", "_tolerances", "_approximate")

    def __init__(
        self,
        subsets: Sequence[Sequence[Variable]],
        marginals: Sequence[Factor],
        tolerances: Tolerances = DEFAULT_TOLERANCES,
        approximate: bool = False,
    ):
        subsets = tuple(tuple(s) for s in subsets)
        marginals = tuple(marginals)
        if len(subsets) != len(marginals):
            raise InvalidModelError("One marginal is required per subset")
        for subset, marginal in zip(subsets, marginals):
            if names(marginal.scope) != names(subset):
                raise InvalidModelError(
                    f"Marginal scope {names(marginal.scope)} does not match subset {names(subset)}"
                )
            if abs(marginal.total() - 1.0) > tolerances.norm:
                raise InvalidModelError(
                    f"Marginal over {names(subset)} sums to {marginal.total()!r}"
                )
        self._subsets = subsets
        self._marginals = marginals
        self._tolerances = tolerances
        self._approximate = approximate
        if not approximate:
            self.check_consistency()

    @classmethod
    def from_joint(cls, joint: Factor, subsets, tolerances=DEFAULT_TOLERANCES) -> "MarginalSet":
        subsets = tuple(tuple(s) for s in subsets)
        return cls(subsets, [marginalize_to(joint, s) for s in subsets], tolerances)

    @property
    def subsets(self) -> Tuple[Subset, ...]:
        return self._subsets

    @property
    def marginals(self) -> Tuple[Factor, ...]:
        return self._marginals

    @property
    def approximate(self) -> bool:
        return self._approximate

    @property
    def tolerances(self) -> Tolerances:
        return self._tolerances

    def __len__(self):
        return len(self._subsets)

    def __iter__(self) -> Iterator[Tuple[Subset, Factor]]:
        return iter(zip(self._subsets, self._marginals))

    def marginal_for(self, subset: Sequence[Variable]) -> Factor:
        target = sorted(names(subset))
        for candidate, marginal in self:
            if sorted(names(candidate)) == target:
                return marginal
        raise MissingMarginalError(f"No marginal for subset {target}")

    def marginal_over(self, variables: Sequence[Variable]) -> Factor:
        """Marginal over ``variables`` read from the lowest-indexed containing subset.

        Every other containing subset must agree within the consistency tolerance.
        """
        variables = tuple(variables)
        if not variables:
            return Factor.unit()
        wanted = set(names(variables))
        found = [m for s, m in self if wanted <= set(names(s))]
        if not found:
            raise MissingMarginalError(
                f"No subset contains {sorted(wanted)}; cannot read their joint marginal"
            )
        reference = marginalize_to(found[0], variables)
        if not self._approximate:
            for other in found[1:]:
                gap = reference.max_abs_diff(marginalize_to(other, variables))
                if gap > self._tolerances.consistency:
                    raise MarginalInconsistencyError(
                        f"Subsets disagree on {sorted(wanted)} by {gap:.3g}",
                        variables,
                        gap,
                    )
        return reference

    def check_consistency(self):
        """Overlapping subsets must agree on their shared variables."""
        for i, (first, q_first) in enumerate(self):
            for second, q_second in list(self)[i + 1:]:
                shared = tuple(v for v in first if v.name in set(names(second)))
                if not shared:
                    continue
                gap = marginalize_to(q_first, shared).max_abs_diff(
                    marginalize_to(q_second, shared)
                )
                if gap > self._tolerances.consistency:
                    raise MarginalInconsistencyError(
                        f"Subsets {names(first)} and {names(second)} disagree on "
                        f"{names(shared)} by {gap:.3g}",
                        shared,
                        gap,
                    )

    def max_abs_diff(self, other: "MarginalSet") -> float:
        """Largest absolute cell difference between matching subset marginals."""
        return max(
            (m.max_abs_diff(other.marginal_for(s)) for s, m in self),
            default=0.0,
        )

    def __repr__(self):
        listed = "; ".join(",".join(names(s)) for s in self._subsets)
        flag = ", approximate" if self._approximate else ""
        return f"MarginalSet([{listed}]{flag})"
