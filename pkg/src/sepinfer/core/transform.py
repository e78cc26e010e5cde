"""Selector-variable rewriting of separable CPTs.

sum_i gamma_i P_i(Z|X_i) becomes sum_I prod_i g_i(I, Z, X_i), where
g_i(j, z, x_i) = gamma_i P_i(z|x_i) if j == i and 1 otherwise. Each g_i spans
three variables, so elimination never has to build the (n+1)-variable table.
"""
import logging
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from sepinfer.core.errors import ScopeError
from sepinfer.core.prob_core import (
    DEFAULT_TOLERANCES,
    Cpt,
    Factor,
    Subset,
    Tolerances,
    Variable,
    multiply_all,
    names,
    sum_out,
)
from sepinfer.core.separability import BlockLike, SeparableDecomposition, separate_n

logger = logging.getLogger(__name__)

SELECTOR_SUFFIX = "#selector"


def selector_name(child: Variable) -> str:
    return f"{child.name}{SELECTOR_SUFFIX}"


def is_selector(var: Variable) -> bool:
    return var.name.endswith(SELECTOR_SUFFIX)


@dataclass(frozen=True)
class SelectorFactorization:
    """Factors g_i(I, Z, X_i) of one decomposed CPT.

    ``selector`` is None for a single-block decomposition; the lone factor is
    then P_1 itself over (Z, X_1).
    """

    child: Variable
    blocks: Tuple[Subset, ...]
    selector: Optional[Variable]
    factors: Tuple[Factor, ...]

    def reconstruct(self) -> Factor:
        """sum_I prod_i g_i, ordered as the blocks followed by the child."""
        product = multiply_all(self.factors)
        if self.selector is not None:
            product = sum_out(product, self.selector)
        parents = tuple(v for block in self.blocks for v in block)
        return product.reorder(parents + (self.child,))


def to_sum_of_products(decomposition: SeparableDecomposition) -> SelectorFactorization:
    """Build the selector factorization of a separable decomposition."""
    child = decomposition.child
    n = len(decomposition.blocks)
    if n == 1:
        component = decomposition.components[0]
        block = decomposition.blocks[0]
        factor = component.table.reorder((child,) + tuple(block))
        return SelectorFactorization(child, decomposition.blocks, None, (factor,))

    selector = Variable(selector_name(child), n)
    factors = []
    for i, (block, weight, component) in enumerate(
        zip(decomposition.blocks, decomposition.weights, decomposition.components)
    ):
        scope = (selector, child) + tuple(block)
        own = component.table.reorder((child,) + tuple(block)).tensor
        values = np.ones(tuple(v.cardinality for v in scope))
        values[i] = weight * own
        factors.append(Factor(scope, values))
    return SelectorFactorization(child, decomposition.blocks, selector, tuple(factors))


def transform_network(
    cpts: Sequence[Cpt],
    annotations: Optional[Mapping[str, Sequence[BlockLike]]] = None,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> List[Factor]:
    """Replace every annotated CPT by its selector factors.

    Args:
        cpts: The network's conditional distributions.
        annotations: Child name mapped to the blocks to separate that node into.

    Raises:
        ScopeError: If an annotation names a node that is not in the network.
        NotSeparable: If an annotated node does not separate over its blocks.
    """
    annotations = dict(annotations or {})
    unknown = set(annotations) - set(names(c.child for c in cpts))
    if unknown:
        raise ScopeError(f"Annotations name unknown nodes: {sorted(unknown)}")
    factors: List[Factor] = []
    for cpt in cpts:
        blocks = annotations.get(cpt.child.name)
        if blocks is None:
            factors.append(cpt.table)
            continue
        decomposition = separate_n(cpt, blocks, tolerances)
        rewritten = to_sum_of_products(decomposition)
        logger.debug(
            "Replaced %s by %d selector factors", cpt.child.name, len(rewritten.factors)
        )
        factors.extend(rewritten.factors)
    return factors
