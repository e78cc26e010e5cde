"""Dynamic models, self-sufficient families and marginal propagation.

Every state variable X has one transition CPT P(X' | parents) whose parents
come from the previous slice only. A family of state subsets is
self-sufficient when, for each subset, the next-slice distribution of the
subset can be computed from the current subset marginals alone; prediction
then propagates the subset marginals instead of the full joint.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from sepinfer.core.errors import (
    ComponentNotDistribution,
    InvalidModelError,
    JointTooLarge,
    NotSelfSufficient,
    NotSeparable,
    OracleDisagreement,
    ScopeError,
    SufficiencyBroken,
)
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
    joint_child_cpt,
    marginalize_to,
    multiply,
    multiply_all,
    names,
    normalize,
    restrict,
    state_size,
    sum_out,
)
from sepinfer.core.separability import (
    TreeDecomposition,
    TreeRepresentation,
    apply_decomposition,
    sufficiency_oracle,
    tree_separate,
)
from sepinfer.utils.config import Config

logger = logging.getLogger(__name__)

NEXT_MARK = "'"


def next_copy(var: Variable) -> Variable:
    """The time-t copy of a state variable."""
    return Variable(var.name + NEXT_MARK, var.cardinality)


class DbnModel:
    """State variables, one transition CPT each, and an initial distribution.

    ``initial`` is either a joint Factor over the state or a MarginalSet whose
    subsets cover the state.
    """

    def __init__(
        self,
        state: Sequence[Variable],
        transitions: Sequence[Cpt],
        initial: Union[Factor, MarginalSet],
        tolerances: Tolerances = DEFAULT_TOLERANCES,
    ):
        state = tuple(state)
        labels = names(state)
        if not state:
            raise InvalidModelError("A dynamic model needs at least one state variable")
        if len(set(labels)) != len(labels):
            raise InvalidModelError(f"Duplicate state variables in {labels}")
        by_child = {c.child.name: c for c in transitions}
        if len(by_child) != len(tuple(transitions)):
            raise InvalidModelError("Each state variable needs exactly one transition")
        ordered = []
        for var in state:
            cpt = by_child.pop(next_copy(var).name, None)
            if cpt is None:
                raise InvalidModelError(f"No transition for {var.name}")
            if cpt.child.cardinality != var.cardinality:
                raise InvalidModelError(f"Transition child for {var.name} has the wrong cardinality")
            for parent in cpt.parents:
                if parent not in state:
                    raise InvalidModelError(
                        f"Parent {parent.name} of {cpt.child.name} is not a state variable"
                    )
            ordered.append(cpt)
        if by_child:
            raise InvalidModelError(f"Transitions for unknown variables: {sorted(by_child)}")

        if isinstance(initial, Factor):
            if sorted(names(initial.scope)) != sorted(labels):
                raise InvalidModelError("Initial joint must range over the state")
            initial = initial.reorder(state)
            if abs(initial.total() - 1.0) > tolerances.norm:
                raise InvalidModelError(f"Initial joint sums to {initial.total()!r}")
        elif isinstance(initial, MarginalSet):
            covered = {v.name for s in initial.subsets for v in s}
            if covered != set(labels):
                raise InvalidModelError("Initial marginals must cover the state")
        else:
            raise InvalidModelError("initial must be a Factor or a MarginalSet")

        self._state = state
        self._transitions = tuple(ordered)
        self._initial = initial
        self._tolerances = tolerances

    @property
    def state(self) -> Subset:
        return self._state

    @property
    def transitions(self) -> Tuple[Cpt, ...]:
        return self._transitions

    @property
    def initial(self) -> Union[Factor, MarginalSet]:
        return self._initial

    @property
    def tolerances(self) -> Tolerances:
        return self._tolerances

    @property
    def state_space(self) -> int:
        return state_size(self._state)

    @property
    def max_cardinality(self) -> int:
        return max(v.cardinality for v in self._state)

    def variable(self, name: str) -> Variable:
        for var in self._state:
            if var.name == name:
                return var
        raise ScopeError(f"{name} is not a state variable")

    def transition_for(self, var: Variable) -> Cpt:
        return self._transitions[self._state.index(var)]

    def initial_joint(self) -> Factor:
        if not isinstance(self._initial, Factor):
            raise InvalidModelError("The model only carries initial marginals")
        return self._initial

    def initial_marginals(self, subsets: Sequence[Sequence[Variable]]) -> MarginalSet:
        subsets = tuple(tuple(s) for s in subsets)
        if isinstance(self._initial, Factor):
            return MarginalSet.from_joint(self._initial, subsets, self._tolerances)
        marginals = [self._initial.marginal_over(s) for s in subsets]
        return MarginalSet(subsets, marginals, self._tolerances)

    def __repr__(self):
        return f"DbnModel(state={list(names(self._state))})"


def transition_parents(model: DbnModel, subset: Sequence[Variable]) -> Subset:
    """Union of the members' transition parents, in state order."""
    wanted = {p.name for v in subset for p in model.transition_for(v).parents}
    return tuple(v for v in model.state if v.name in wanted)


def product_cpt(
    model: DbnModel,
    subset: Sequence[Variable],
    cap: int = Config.JOINT_CAP,
    parents: Optional[Sequence[Variable]] = None,
) -> Cpt:
    """P(subset' | parents) as one CPT.

    The time-t copies are independent given the previous slice, so the table
    is the product of the members' transitions. ``parents`` defaults to the
    union of their transition parents and may be widened to any superset,
    e.g. the whole state.

    Raises:
        JointTooLarge: If the table has more than ``cap`` cells.
    """
    subset = tuple(subset)
    parents = transition_parents(model, subset) if parents is None else tuple(parents)
    size = state_size(parents) * state_size(subset)
    if size > cap:
        raise JointTooLarge(f"Product CPT for {list(names(subset))} has {size} cells (cap {cap})")
    return joint_child_cpt([model.transition_for(v) for v in subset], parents=parents)


@dataclass(frozen=True)
class SubsystemFamily:
    """A verified family with the stored evaluable form of each subset's update."""

    subsets: Tuple[Subset, ...]
    tree: TreeRepresentation = field(compare=False)
    decompositions: Tuple[TreeDecomposition, ...]
    verified: bool = True
    targets: Tuple[Subset, ...] = ()
    target_decompositions: Tuple[TreeDecomposition, ...] = ()

    @property
    def n(self) -> int:
        return len(self.subsets)

    @property
    def m(self) -> int:
        return max(len(s) for s in self.subsets)

    def decomposition_for(self, subset: Sequence[Variable]) -> TreeDecomposition:
        wanted = sorted(names(subset))
        for candidate, decomposition in zip(
            self.subsets + self.targets, self.decompositions + self.target_decompositions
        ):
            if sorted(names(candidate)) == wanted:
                return decomposition
        raise ScopeError(f"No decomposition stored for {wanted}")


def _validate_family(model: DbnModel, family) -> Tuple[Subset, ...]:
    subsets = tuple(tuple(s) for s in family)
    if not subsets:
        raise InvalidModelError("A family needs at least one subset")
    for subset in subsets:
        if not subset:
            raise InvalidModelError("Family subsets must be non-empty")
        for var in subset:
            if var not in model.state:
                raise InvalidModelError(f"{var.name} is not a state variable")
    covered = {v.name for s in subsets for v in s}
    if covered != set(names(model.state)):
        missing = sorted(set(names(model.state)) - covered)
        raise InvalidModelError(f"Family does not cover the state; missing {missing}")
    return subsets


def _restrict_family(subsets: Sequence[Subset], parents: Subset) -> List[Subset]:
    keep = set(names(parents))
    cut = [tuple(v for v in s if v.name in keep) for s in subsets]
    return [s for s in cut if s]


def check_self_sufficient(
    model: DbnModel,
    family: Sequence[Sequence[Variable]],
    tree: Optional[TreeRepresentation] = None,
    targets: Sequence[Sequence[Variable]] = (),
    oracle_cap: int = Config.ORACLE_CAP,
) -> SubsystemFamily:
    """Verify that ``family`` is self-sufficient and store each subset's decomposition.

    Each subset's product CPT ranges over its members' transition parents and
    is decomposed along the tree cut down to those parents, so the check never
    builds a table over the whole state.

    Args:
        model: The dynamic model.
        family: State subsets covering the state.
        tree: Complete tree representation with one leaf per subset; a flat
            tree over ``family`` by default.
        targets: Extra subsets whose update must also be computable from the
            family marginals (they are not propagated themselves).
        oracle_cap: Largest state space cross-checked with the oracle. Above
            it only the structural check runs and ``verified`` is False.

    Raises:
        NotSelfSufficient: Naming the first failing subset and its cause.
        OracleDisagreement: If the constructive check and the oracle disagree.
        InvalidModelError: If the family or the tree does not fit the model.
    """
    subsets = _validate_family(model, family)
    targets = tuple(tuple(t) for t in targets)
    for target in targets:
        for var in target:
            if var not in model.state:
                raise InvalidModelError(f"Target variable {var.name} is not a state variable")
    if tree is None:
        tree = TreeRepresentation.flat(subsets)
    leaf_sets = sorted(tuple(sorted(names(s))) for s in tree.subsets())
    if leaf_sets != sorted(tuple(sorted(names(s))) for s in subsets):
        raise InvalidModelError("Tree leaves must be exactly the family subsets")
    if not tree.is_complete():
        raise InvalidModelError("Marginal propagation needs a complete tree representation")

    use_oracle = model.state_space <= oracle_cap
    if not use_oracle:
        logger.warning(
            "State space %d exceeds oracle cap %d; family is unverified",
            model.state_space, oracle_cap,
        )

    def verify(subset):
        cpt = product_cpt(model, subset)
        decomposition, cause = None, None
        try:
            decomposition = tree_separate(cpt, tree.restricted(cpt.parents), model.tolerances)
        except (NotSeparable, ComponentNotDistribution) as exc:
            cause = exc
        if use_oracle:
            local = _restrict_family(subsets, cpt.parents)
            sufficient = sufficiency_oracle(cpt, local, model.tolerances, oracle_cap)
            if sufficient != (decomposition is not None):
                raise OracleDisagreement(
                    f"Subset {list(names(subset))}: tree decomposition "
                    f"{'succeeded' if decomposition is not None else 'failed'} but the oracle "
                    f"says {'sufficient' if sufficient else 'not sufficient'}"
                )
        if cause is not None:
            raise NotSelfSufficient(subset, cause) from cause
        return decomposition

    decompositions = tuple(verify(s) for s in subsets)
    target_decompositions = tuple(verify(t) for t in targets)
    logger.info(
        "Family of %d subsets is self-sufficient (%s)",
        len(subsets), "oracle-verified" if use_oracle else "unverified",
    )
    return SubsystemFamily(
        subsets, tree, decompositions, use_oracle, targets, target_decompositions
    )


def _as_subset_factor(subset: Subset, values: Factor) -> Factor:
    return Factor(subset, values.values)


def propagate_step(
    family: SubsystemFamily,
    marginals: MarginalSet,
    counter: Optional[OpCounter] = None,
) -> MarginalSet:
    """One round of q_i <- Phi_i(q_1..q_n)."""
    updated = [
        _as_subset_factor(subset, apply_decomposition(d, marginals, counter))
        for subset, d in zip(family.subsets, family.decompositions)
    ]
    return MarginalSet(family.subsets, updated, marginals.tolerances, marginals.approximate)


def predict_marginals(
    family: SubsystemFamily,
    model: DbnModel,
    horizon: int,
    counter: Optional[OpCounter] = None,
) -> List[MarginalSet]:
    """Subset marginals for t = 0..horizon by marginal propagation."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    current = model.initial_marginals(family.subsets)
    history = [current]
    for _ in range(horizon):
        current = propagate_step(family, current, counter)
        history.append(current)
    return history


@dataclass(frozen=True)
class ExactPlan:
    """Order in which one exact step multiplies in the transitions.

    ``drops[k]`` lists the previous-slice variables summed out right after
    the k-th multiplication; ``leading`` those no transition reads at all.
    ``peak`` is the largest intermediate table.
    """

    order: Tuple[int, ...]
    drops: Tuple[Subset, ...]
    leading: Subset
    peak: int


def plan_exact_step(model: DbnModel) -> ExactPlan:
    """Greedy elimination order for S' from P(S) and the transitions.

    Each round picks the transition whose product leaves the smallest table
    once every previous-slice variable no remaining transition reads is
    summed out; ties go to the smaller product, then to state order.
    """
    readers = {
        v.name: {i for i, cpt in enumerate(model.transitions) if v in cpt.parents}
        for v in model.state
    }
    leading = tuple(v for v in model.state if not readers[v.name])
    previous = [v for v in model.state if readers[v.name]]
    added: List[Variable] = []
    remaining = set(range(len(model.transitions)))
    order, drops, peak = [], [], state_size(previous)
    while remaining:
        best = None
        for i in sorted(remaining):
            child = model.transitions[i].child
            product = state_size(previous) * state_size(added) * child.cardinality
            dropped = tuple(v for v in previous if not (readers[v.name] & remaining) - {i})
            kept = [v for v in previous if v not in dropped]
            after = state_size(kept) * state_size(added) * child.cardinality
            key = (after, product, i)
            if best is None or key < best[0]:
                best = (key, i, dropped)
        (_, product, _), i, dropped = best
        remaining.discard(i)
        added.append(model.transitions[i].child)
        previous = [v for v in previous if v not in dropped]
        order.append(i)
        drops.append(dropped)
        peak = max(peak, product)
    return ExactPlan(tuple(order), tuple(drops), leading, peak)


def _check_joint_cap(model: DbnModel, cap: int) -> ExactPlan:
    if model.state_space > cap:
        raise JointTooLarge(f"State space {model.state_space} exceeds the joint cap {cap}")
    plan = plan_exact_step(model)
    if plan.peak > cap:
        raise JointTooLarge(f"Exact step needs a table of {plan.peak} cells (cap {cap})")
    return plan


def exact_step(model: DbnModel, joint: Factor, plan: ExactPlan,
               counter: Optional[OpCounter] = None) -> Factor:
    """Multiply the joint by each transition and sum the previous slice out as it frees up."""
    current = joint
    for var in plan.leading:
        current = sum_out(current, var)
    for index, dropped in zip(plan.order, plan.drops):
        current = multiply(current, model.transitions[index].table)
        if counter is not None:
            counter.add(len(current))
        for var in dropped:
            current = sum_out(current, var)
    by_child = {cpt.child.name: var for var, cpt in zip(model.state, model.transitions)}
    renamed = Factor(tuple(by_child[v.name] for v in current.scope), current.values)
    return renamed.reorder(model.state)


def predict_exact(
    model: DbnModel,
    horizon: int,
    counter: Optional[OpCounter] = None,
    cap: int = Config.JOINT_CAP,
) -> List[Factor]:
    """Full joints for t = 0..horizon."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    plan = _check_joint_cap(model, cap)
    joint = model.initial_joint()
    history = [joint]
    for _ in range(horizon):
        joint = exact_step(model, joint, plan, counter)
        history.append(joint)
    return history


class FilterPolicy(str, Enum):
    """How filter_step treats evidence that not every subset contains."""

    STRICT = "strict"
    DEMONSTRATE = "demonstrate"


def filter_step(
    family: SubsystemFamily,
    marginals: MarginalSet,
    evidence: Assignment,
    policy: Union[FilterPolicy, str] = FilterPolicy.STRICT,
) -> MarginalSet:
    """Condition subset marginals on evidence.

    Strict conditions only when every evidence variable is in every subset,
    which keeps the result exact. Demonstrate conditions whichever subsets
    contain the variable and flags the result approximate.

    Raises:
        SufficiencyBroken: Strict policy, evidence missing from some subsets.
        ZeroMassError: The evidence has probability zero.
    """
    policy = FilterPolicy(policy)
    state_names = {v.name for s in family.subsets for v in s}
    for var in evidence.variables:
        if var.name not in state_names:
            raise ScopeError(f"Evidence variable {var.name} is not a state variable")
    if not len(evidence):
        return marginals

    if policy is FilterPolicy.STRICT:
        for var in evidence.variables:
            missing = [s for s in family.subsets if var.name not in names(s)]
            if missing:
                raise SufficiencyBroken(var, missing)
        updated = [normalize(restrict(q, evidence)) for _, q in marginals]
        return MarginalSet(marginals.subsets, updated, marginals.tolerances, marginals.approximate)

    logger.warning("Demonstrate filtering on %s: result is approximate", evidence)
    updated = []
    for subset, q in marginals:
        local = evidence.restrict(subset)
        updated.append(normalize(restrict(q, local)) if len(local) else q)
    return MarginalSet(marginals.subsets, updated, marginals.tolerances, approximate=True)


def filter_exact(joint: Factor, evidence: Assignment) -> Factor:
    """Condition the full joint and renormalize, keeping its scope."""
    return normalize(restrict(joint, evidence))


def monitor(
    family: SubsystemFamily,
    model: DbnModel,
    horizon: int,
    observations: Mapping[int, Assignment],
    policy: Union[FilterPolicy, str] = FilterPolicy.STRICT,
    counter: Optional[OpCounter] = None,
) -> List[MarginalSet]:
    """Alternate propagation and filtering; observations are keyed by time step."""
    current = model.initial_marginals(family.subsets)
    if 0 in observations:
        current = filter_step(family, current, observations[0], policy)
    history = [current]
    for t in range(1, horizon + 1):
        current = propagate_step(family, current, counter)
        if t in observations:
            current = filter_step(family, current, observations[t], policy)
        history.append(current)
    return history


def monitor_exact(
    model: DbnModel,
    horizon: int,
    observations: Mapping[int, Assignment],
    counter: Optional[OpCounter] = None,
    cap: int = Config.JOINT_CAP,
) -> List[Factor]:
    """Exact filtering on the full joint."""
    plan = _check_joint_cap(model, cap)
    joint = model.initial_joint()
    if 0 in observations:
        joint = filter_exact(joint, observations[0])
    history = [joint]
    for t in range(1, horizon + 1):
        joint = exact_step(model, joint, plan, counter)
        if t in observations:
            joint = filter_exact(joint, observations[t])
        history.append(joint)
    return history


def estimate_query(marginals: MarginalSet, query: Sequence[Variable]) -> Factor:
    """Joint over ``query`` as the family sees it.

    Read from a containing subset when one exists; otherwise the product of
    the single-variable marginals, which is what a family without that
    subset can offer.
    """
    query = tuple(query)
    wanted = set(names(query))
    if any(wanted <= set(names(s)) for s in marginals.subsets):
        return marginals.marginal_over(query)
    return multiply_all(marginals.marginal_over((v,)) for v in query).reorder(query)


def divergence(marginals: MarginalSet, joint: Factor) -> float:
    """Largest cell gap between each subset marginal and the joint's marginal."""
    return max(
        (q.max_abs_diff(marginalize_to(joint, subset)) for subset, q in marginals),
        default=0.0,
    )


def merge_rule_check(
    first: Cpt,
    second: Cpt,
    first_blocks: Tuple[Sequence[Variable], Sequence[Variable]],
    second_blocks: Tuple[Sequence[Variable], Sequence[Variable]],
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    cap: int = Config.ORACLE_CAP,
) -> bool:
    """Whether the pairwise unions of the two block pairs are sufficient for both children.

    With X1, Y1 sufficient for Z1 and X2, Y2 sufficient for Z2, the subsets
    X1+X2, X1+Y2, Y1+X2 and Y1+Y2 should be sufficient for Z1 x Z2.

    Raises:
        InvalidModelError: If either premise does not hold.
    """
    x1, y1 = (tuple(b) for b in first_blocks)
    x2, y2 = (tuple(b) for b in second_blocks)
    if not sufficiency_oracle(first, [x1, y1], tolerances, cap):
        raise InvalidModelError(f"Blocks are not sufficient for {first.child.name}")
    if not sufficiency_oracle(second, [x2, y2], tolerances, cap):
        raise InvalidModelError(f"Blocks are not sufficient for {second.child.name}")
    pair = joint_child_cpt([first, second])
    subsets = [_union(a, b) for a in (x1, y1) for b in (x2, y2)]
    return sufficiency_oracle(pair, subsets, tolerances, cap)


def naive_merge_check(
    first: Cpt,
    second: Cpt,
    left: Sequence[Variable],
    right: Sequence[Variable],
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    cap: int = Config.ORACLE_CAP,
) -> bool:
    """Whether the same two blocks stay sufficient for the pair of children.

    Holding for each child separately does not make this true.
    """
    pair = joint_child_cpt([first, second], parents=_union(tuple(left), tuple(right)))
    return sufficiency_oracle(pair, [tuple(left), tuple(right)], tolerances, cap)


def _union(a: Subset, b: Subset) -> Subset:
    seen: Dict[str, Variable] = {}
    for var in a + b:
        seen.setdefault(var.name, var)
    return tuple(seen.values())


@dataclass(frozen=True)
class CostReport:
    """Measured multiply-add counts and the analytic bounds T*n*b^m and T*b^M."""

    horizon: int
    n: int
    m: int
    b: int
    M: int
    marginal_operations: int
    exact_operations: int

    @property
    def marginal_bound(self) -> int:
        return self.horizon * self.n * self.b ** self.m

    @property
    def exact_bound(self) -> int:
        return self.horizon * self.b ** self.M

    def to_dict(self) -> Dict[str, int]:
        return {
            "horizon": self.horizon,
            "n": self.n,
            "m": self.m,
            "b": self.b,
            "M": self.M,
            "marginal_operations": self.marginal_operations,
            "exact_operations": self.exact_operations,
            "marginal_bound": self.marginal_bound,
            "exact_bound": self.exact_bound,
        }


def cost_report(family: SubsystemFamily, model: DbnModel, horizon: int) -> CostReport:
    """Run both predictors with instrumentation and report their counts."""
    marginal_counter, exact_counter = OpCounter(), OpCounter()
    predict_marginals(family, model, horizon, marginal_counter)
    predict_exact(model, horizon, exact_counter)
    return CostReport(
        horizon=horizon,
        n=family.n,
        m=family.m,
        b=model.max_cardinality,
        M=len(model.state),
        marginal_operations=marginal_counter.count,
        exact_operations=exact_counter.count,
    )


@dataclass(frozen=True)
class ComparisonStep:
    t: int
    divergence: float
    query_divergence: Optional[float] = None


def compare_predictions(
    family: SubsystemFamily,
    model: DbnModel,
    horizon: int,
    query: Optional[Sequence[Variable]] = None,
    evidence: Optional[Assignment] = None,
    policy: Union[FilterPolicy, str] = FilterPolicy.STRICT,
) -> Tuple[List[ComparisonStep], CostReport]:
    """Per-step divergence between the two predictors, plus the cost report.

    ``evidence``, if any, is applied at the final step with ``policy`` on the
    marginal side and exactly on the joint side. ``query`` adds the gap between
    the query joint estimated from the family and the exact one.
    """
    observations = {horizon: evidence} if evidence is not None and len(evidence) else {}
    approximate = monitor(family, model, horizon, observations, policy)
    exact = monitor_exact(model, horizon, observations)
    steps = []
    for t, (marginals, joint) in enumerate(zip(approximate, exact)):
        query_gap = None
        if query:
            estimate = estimate_query(marginals, query)
            query_gap = estimate.max_abs_diff(marginalize_to(joint, tuple(query)))
        steps.append(ComparisonStep(t, divergence(marginals, joint), query_gap))
        logger.debug("t=%d divergence %.3g", t, steps[-1].divergence)
    return steps, cost_report(family, model, horizon)
