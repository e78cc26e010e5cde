"""Variable elimination over factor lists.

For each variable Y to eliminate, multiply the factors mentioning Y and sum Y
out of the product. Whatever is left is multiplied into the query factor.
"""
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx

from sepinfer.core.errors import ScopeError
from sepinfer.core.prob_core import (
    Assignment,
    Factor,
    Variable,
    condition,
    marginalize_to,
    multiply_all,
    names,
    normalize,
    sum_out,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EliminationReport:
    """Cost record of one elimination run.

    ``scope_sizes[k]`` is the number of variables of the product built to
    eliminate ``ordering[k]``; ``operations`` counts one multiply-add per
    entry of each product per factor multiplied into it.
    """

    ordering: Tuple[Variable, ...]
    scope_sizes: Tuple[int, ...]
    operations: int

    @property
    def max_scope(self) -> int:
        return max(self.scope_sizes, default=0)


def _variables(factors: Sequence[Factor]) -> Dict[str, Variable]:
    found: Dict[str, Variable] = {}
    for factor in factors:
        for var in factor.scope:
            found.setdefault(var.name, var)
    return found


def interaction_graph(factors: Sequence[Factor]) -> nx.Graph:
    """Variables as nodes, an edge between every pair sharing a factor."""
    graph = nx.Graph()
    for name, var in _variables(factors).items():
        graph.add_node(name, variable=var)
    for factor in factors:
        graph.add_edges_from(combinations(names(factor.scope), 2))
    return graph


def _fill_in(graph: nx.Graph, node: str) -> int:
    neighbours = list(graph.neighbors(node))
    return sum(1 for a, b in combinations(neighbours, 2) if not graph.has_edge(a, b))


def min_fill_ordering(factors: Sequence[Factor], keep: Sequence[Variable] = ()) -> List[Variable]:
    """Greedy min-fill elimination order for every variable not in ``keep``.

    Ties go to the lexicographically smallest variable name.
    """
    graph = interaction_graph(factors)
    keep_names = set(names(keep))
    ordering: List[Variable] = []
    candidates = sorted(n for n in graph.nodes if n not in keep_names)
    while candidates:
        chosen = min(candidates, key=lambda n: (_fill_in(graph, n), n))
        neighbours = list(graph.neighbors(chosen))
        graph.add_edges_from(combinations(neighbours, 2))
        ordering.append(graph.nodes[chosen]["variable"])
        graph.remove_node(chosen)
        candidates.remove(chosen)
    return ordering


def eliminate(
    factors: Sequence[Factor],
    query: Sequence[Variable],
    evidence: Assignment = Assignment(),
    ordering: Optional[Sequence[Variable]] = None,
    normalized: bool = True,
) -> Tuple[Factor, EliminationReport]:
    """Posterior (or unnormalized) marginal over ``query`` given ``evidence``.

    Args:
        factors: The factor list; its product is the (unnormalized) joint.
        query: Variables to keep, in the order of the returned scope.
        evidence: Observed values; every factor is sliced at them first.
        ordering: Elimination order for the non-query variables; min-fill by default.
        normalized: When False, return the unnormalized query factor.

    Returns:
        The query factor and an EliminationReport.

    Raises:
        ScopeError: If a query or evidence variable appears in no factor, or
            the ordering does not cover exactly the non-query variables.
        ZeroMassError: If the evidence has probability zero.
    """
    query = tuple(query)
    known = _variables(factors)
    for var in query + evidence.variables:
        if var.name not in known:
            raise ScopeError(f"{var.name} appears in no factor")
    overlap = set(names(query)) & set(names(evidence.variables))
    if overlap:
        raise ScopeError(f"Query variables are also observed: {sorted(overlap)}")

    pool = [condition(f, evidence.restrict(f.scope)) for f in factors]
    if ordering is None:
        ordering = min_fill_ordering(pool, keep=query)
    ordering = tuple(ordering)
    hidden = set(_variables(pool)) - set(names(query))
    if set(names(ordering)) != hidden or len(ordering) != len(hidden):
        raise ScopeError(
            f"Ordering {list(names(ordering))} must list each of {sorted(hidden)} once"
        )

    scope_sizes: List[int] = []
    operations = 0
    for var in ordering:
        relevant = [f for f in pool if var.name in names(f.scope)]
        pool = [f for f in pool if var.name not in names(f.scope)]
        product = multiply_all(relevant)
        operations += len(product) * len(relevant)
        scope_sizes.append(len(product.scope))
        pool.append(sum_out(product, var))

    result = multiply_all(pool)
    operations += len(result) * len(pool)
    result = marginalize_to(result, query)
    if normalized:
        result = normalize(result)
    logger.debug(
        "Eliminated %d variables, max scope %d, %d operations",
        len(ordering), max(scope_sizes, default=0), operations,
    )
    return result, EliminationReport(ordering, tuple(scope_sizes), operations)
