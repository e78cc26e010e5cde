"""Conversion between core objects and JSON documents.

Floats are written with Python's shortest round-trip repr, so every value
read back is bit-identical to the value written.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, TypeAdapter, ValidationError

from sepinfer.api.schemas import (
    CheckSchema,
    ComparisonSchema,
    ComparisonStepSchema,
    ConditionalDecompositionSchema,
    ConditionalEntrySchema,
    CostSchema,
    CptSchema,
    DbnDocument,
    DecompositionSchema,
    ErrorSchema,
    FactorSchema,
    InitialSchema,
    MarginalSchema,
    ModelDocument,
    NetworkDocument,
    PredictionSchema,
    PredictionStepSchema,
    SelectorFactorsSchema,
    TolerancesSchema,
    TraceSchema,
    TreeBranchSchema,
    TreeDecompositionNodeSchema,
    TreeDecompositionSchema,
    TreeNodeSchema,
    VariableSchema,
    WitnessSchema,
)
from sepinfer.core.dbn import DbnModel, next_copy
from sepinfer.core.errors import InvalidModelError
from sepinfer.core.prob_core import (
    DEFAULT_TOLERANCES,
    Assignment,
    Cpt,
    Factor,
    MarginalSet,
    Subset,
    Tolerances,
    Variable,
    names,
)
from sepinfer.core.separability import (
    ConditionalDecomposition,
    DecompositionTrace,
    SeparableDecomposition,
    TreeBranch,
    TreeDecomposition,
    TreeNode,
    TreeRepresentation,
    Witness,
)

logger = logging.getLogger(__name__)

_MODEL_ADAPTER = TypeAdapter(ModelDocument)

_RESULT_SCHEMAS = {
    "separable": DecompositionSchema,
    "conditional": ConditionalDecompositionSchema,
    "tree": TreeDecompositionSchema,
    "check": CheckSchema,
    "factors": SelectorFactorsSchema,
    "prediction": PredictionSchema,
    "comparison": ComparisonSchema,
    "error": ErrorSchema,
}


def dumps(document: BaseModel) -> str:
    """Serialize a document as indented JSON, omitting unset optional fields."""
    return json.dumps(document.model_dump(mode="json", exclude_none=True), indent=2)


def _parse_json(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidModelError(f"Document is not valid JSON: {exc}") from exc


def load_model(text: str) -> Union[NetworkDocument, DbnDocument]:
    """Parse and schema-check a model document.

    Raises:
        InvalidModelError: On malformed JSON or a schema violation.
    """
    try:
        return _MODEL_ADAPTER.validate_python(_parse_json(text))
    except ValidationError as exc:
        raise InvalidModelError(f"Invalid model document: {exc}") from exc


def load_result(text: str) -> BaseModel:
    """Parse a result document of any kind."""
    data = _parse_json(text)
    kind = data.get("kind") if isinstance(data, dict) else None
    schema = _RESULT_SCHEMAS.get(kind)
    if schema is None:
        raise InvalidModelError(f"Unknown result document kind {kind!r}")
    try:
        return schema.model_validate(data)
    except ValidationError as exc:
        raise InvalidModelError(f"Invalid {kind} document: {exc}") from exc


# Variables and tolerances

def variable_schemas(variables: Iterable[Variable]) -> List[VariableSchema]:
    seen: Dict[str, Variable] = {}
    for var in variables:
        seen.setdefault(var.name, var)
    return [VariableSchema(name=v.name, cardinality=v.cardinality) for v in seen.values()]


def variable_table(schemas: Sequence[VariableSchema]) -> Dict[str, Variable]:
    table: Dict[str, Variable] = {}
    for schema in schemas:
        if schema.name in table:
            raise InvalidModelError(f"Variable {schema.name!r} is declared twice")
        table[schema.name] = Variable(schema.name, schema.cardinality)
    return table


def resolve(table: Mapping[str, Variable], labels: Sequence[str]) -> Subset:
    try:
        return tuple(table[label] for label in labels)
    except KeyError as exc:
        raise InvalidModelError(f"Undeclared variable {exc.args[0]!r}") from None


def tolerances_from_schema(schema: Optional[TolerancesSchema]) -> Tolerances:
    if schema is None:
        return DEFAULT_TOLERANCES
    base = DEFAULT_TOLERANCES
    return Tolerances(
        norm=schema.norm if schema.norm is not None else base.norm,
        consistency=schema.consistency if schema.consistency is not None else base.consistency,
        sep=schema.sep if schema.sep is not None else base.sep,
        pivot=schema.pivot if schema.pivot is not None else base.pivot,
    )


def tolerances_schema(tolerances: Tolerances) -> Optional[TolerancesSchema]:
    if tolerances == DEFAULT_TOLERANCES:
        return None
    return TolerancesSchema(
        norm=tolerances.norm,
        consistency=tolerances.consistency,
        sep=tolerances.sep,
        pivot=tolerances.pivot,
    )


# Tables

def cpt_schema(cpt: Cpt) -> CptSchema:
    return CptSchema(
        child=cpt.child.name,
        parents=list(names(cpt.parents)),
        table=cpt.table.values.tolist(),
    )


def cpt_from_schema(
    schema: CptSchema,
    table: Mapping[str, Variable],
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    child: Optional[Variable] = None,
) -> Cpt:
    if child is None:
        child = resolve(table, [schema.child])[0]
    return Cpt(child, resolve(table, schema.parents), schema.table, tolerances)


def marginal_schemas(marginals: MarginalSet) -> List[MarginalSchema]:
    return [
        MarginalSchema(subset=list(names(subset)), table=q.values.tolist())
        for subset, q in marginals
    ]


def load_marginal_set(
    schemas: Sequence[MarginalSchema],
    table: Mapping[str, Variable],
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    approximate: bool = False,
) -> MarginalSet:
    subsets = [resolve(table, s.subset) for s in schemas]
    factors = [Factor(subset, s.table) for subset, s in zip(subsets, schemas)]
    return MarginalSet(subsets, factors, tolerances, approximate)


# Trees

def tree_schema(tree: TreeRepresentation) -> TreeNodeSchema:
    def build(node: TreeNode, path):
        if node.is_leaf:
            return TreeNodeSchema(leaf=list(names(node.subset)))
        return TreeNodeSchema(
            vars=list(names(tree.vars_at(path))),
            children=[build(c, path + (i,)) for i, c in enumerate(node.children)],
        )

    return build(tree.root, ())


def tree_from_schema(schema: TreeNodeSchema, table: Mapping[str, Variable]) -> TreeRepresentation:
    """Rebuild a tree; any "vars" lists must match the derived locations."""

    def build(node: TreeNodeSchema) -> TreeNode:
        if node.leaf is not None:
            return TreeNode.leaf(resolve(table, node.leaf))
        return TreeNode.node(*(build(c) for c in node.children))

    tree = TreeRepresentation(build(schema))

    def check(node: TreeNodeSchema, path):
        if node.leaf is not None:
            return
        if node.vars is not None and set(node.vars) != set(names(tree.vars_at(path))):
            raise InvalidModelError(
                f"Tree node {list(path)} lists {sorted(node.vars)} but "
                f"{sorted(names(tree.vars_at(path)))} are located there"
            )
        for i, child in enumerate(node.children):
            check(child, path + (i,))

    check(schema, ())
    return tree


# Model documents

@dataclass
class Network:
    """A static network: declared variables and one CPT per node."""

    variables: Dict[str, Variable]
    cpts: List[Cpt]
    tolerances: Tolerances = field(default=DEFAULT_TOLERANCES)

    def variable(self, name: str) -> Variable:
        return resolve(self.variables, [name])[0]

    def cpt_for(self, name: str) -> Cpt:
        for cpt in self.cpts:
            if cpt.child.name == name:
                return cpt
        raise InvalidModelError(f"No CPT for node {name!r}")

    def factors(self) -> List[Factor]:
        return [c.table for c in self.cpts]


@dataclass
class LoadedDbn:
    model: DbnModel
    family: Optional[List[Subset]] = None
    tree: Optional[TreeRepresentation] = None


def build_network(document: NetworkDocument) -> Network:
    tolerances = tolerances_from_schema(document.tolerances)
    table = variable_table(document.variables)
    cpts = [cpt_from_schema(c, table, tolerances) for c in document.cpts]
    children = [c.child.name for c in cpts]
    if len(set(children)) != len(children):
        raise InvalidModelError("A node has two CPTs")
    return Network(table, cpts, tolerances)


def build_dbn(document: DbnDocument) -> LoadedDbn:
    tolerances = tolerances_from_schema(document.tolerances)
    table = variable_table(document.variables)
    state = resolve(table, document.state)
    transitions = []
    for schema in document.transitions:
        if not schema.child.endswith("'"):
            raise InvalidModelError(f"Transition child {schema.child!r} must be a next-slice copy")
        base = resolve(table, [schema.child[:-1]])[0]
        transitions.append(cpt_from_schema(schema, table, tolerances, child=next_copy(base)))
    if document.initial.joint is not None:
        initial = Factor(state, document.initial.joint)
    else:
        initial = load_marginal_set(document.initial.marginals, table, tolerances)
    model = DbnModel(state, transitions, initial, tolerances)
    family = None
    if document.family is not None:
        family = [resolve(table, subset) for subset in document.family]
    tree = tree_from_schema(document.tree, table) if document.tree is not None else None
    return LoadedDbn(model, family, tree)


def network_document(cpts: Sequence[Cpt], tolerances: Tolerances = DEFAULT_TOLERANCES) -> NetworkDocument:
    variables = [v for c in cpts for v in c.parents + (c.child,)]
    return NetworkDocument(
        kind="network",
        variables=variable_schemas(variables),
        cpts=[cpt_schema(c) for c in cpts],
        tolerances=tolerances_schema(tolerances),
    )


def dbn_document(
    model: DbnModel,
    family: Optional[Sequence[Sequence[Variable]]] = None,
    tree: Optional[TreeRepresentation] = None,
) -> DbnDocument:
    if isinstance(model.initial, Factor):
        initial = InitialSchema(joint=model.initial.values.tolist())
    else:
        initial = InitialSchema(marginals=marginal_schemas(model.initial))
    return DbnDocument(
        kind="dbn",
        variables=variable_schemas(model.state),
        state=list(names(model.state)),
        transitions=[cpt_schema(c) for c in model.transitions],
        initial=initial,
        family=[list(names(s)) for s in family] if family is not None else None,
        tree=tree_schema(tree) if tree is not None else None,
        tolerances=tolerances_schema(model.tolerances),
    )


# Decompositions

def witness_schema(witness: Witness) -> WitnessSchema:
    return WitnessSchema(**witness.to_dict())


def _assignment(table: Mapping[str, Variable], values: Mapping[str, int]) -> Assignment:
    return Assignment(tuple((resolve(table, [k])[0], v) for k, v in values.items()))


def trace_schema(trace: DecompositionTrace) -> TraceSchema:
    return TraceSchema(
        z1=trace.z1,
        reference=trace.reference.to_dict(),
        baseline=trace.baseline.values.tolist(),
        deltas=[d.reshape(-1).tolist() for d in trace.deltas],
        ranges=list(trace.ranges),
    )


def decomposition_schema(decomposition: SeparableDecomposition) -> DecompositionSchema:
    variables = [decomposition.child] + list(decomposition.parents)
    return DecompositionSchema(
        variables=variable_schemas(variables),
        child=decomposition.child.name,
        blocks=[list(names(b)) for b in decomposition.blocks],
        weights=list(decomposition.weights),
        components=[cpt_schema(c) for c in decomposition.components],
        degenerate=decomposition.degenerate,
        trace=trace_schema(decomposition.trace) if decomposition.trace is not None else None,
    )


def load_decomposition(
    schema: DecompositionSchema, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> SeparableDecomposition:
    """Rebuild a decomposition, re-validating every component and the weights."""
    table = variable_table(schema.variables)
    child = resolve(table, [schema.child])[0]
    blocks = tuple(resolve(table, b) for b in schema.blocks)
    components = tuple(cpt_from_schema(c, table, tolerances) for c in schema.components)
    trace = None
    if schema.trace is not None:
        nz = child.cardinality
        trace = DecompositionTrace(
            z1=schema.trace.z1,
            reference=_assignment(table, schema.trace.reference),
            baseline=Factor((child,), schema.trace.baseline),
            deltas=tuple(np.asarray(d).reshape(-1, nz) for d in schema.trace.deltas),
            ranges=tuple(schema.trace.ranges),
        )
    return SeparableDecomposition(
        child, blocks, tuple(schema.weights), components, trace, schema.degenerate, tolerances
    )


def conditional_schema(decomposition: ConditionalDecomposition) -> ConditionalDecompositionSchema:
    variables = [decomposition.child] + list(decomposition.given)
    variables += [v for b in decomposition.blocks for v in b]
    return ConditionalDecompositionSchema(
        variables=variable_schemas(variables),
        child=decomposition.child.name,
        given=list(names(decomposition.given)),
        blocks=[list(names(b)) for b in decomposition.blocks],
        entries=[
            ConditionalEntrySchema(
                assignment=w.to_dict(),
                weights=list(d.weights),
                components=[cpt_schema(c) for c in d.components],
                degenerate=d.degenerate,
            )
            for w, d in decomposition.entries
        ],
    )


def load_conditional(
    schema: ConditionalDecompositionSchema, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> ConditionalDecomposition:
    table = variable_table(schema.variables)
    child = resolve(table, [schema.child])[0]
    given = resolve(table, schema.given)
    blocks = tuple(resolve(table, b) for b in schema.blocks)
    entries = []
    for entry in schema.entries:
        components = tuple(cpt_from_schema(c, table, tolerances) for c in entry.components)
        decomposition = SeparableDecomposition(
            child, blocks, tuple(entry.weights), components, None, entry.degenerate, tolerances
        )
        entries.append((_assignment(table, entry.assignment), decomposition))
    return ConditionalDecomposition(child, given, blocks, tuple(entries))


def tree_decomposition_schema(decomposition: TreeDecomposition) -> TreeDecompositionSchema:
    variables = [decomposition.child] + list(decomposition.parents())

    def build(node: TreeDecomposition) -> TreeDecompositionNodeSchema:
        if node.leaf is not None:
            return TreeDecompositionNodeSchema(path=list(node.path), leaf=cpt_schema(node.leaf))
        return TreeDecompositionNodeSchema(
            path=list(node.path),
            conditioning=list(names(node.conditioning)),
            blocks=[list(names(b)) for b in node.blocks],
            branches=[
                TreeBranchSchema(
                    assignment=b.assignment.to_dict(),
                    weights=list(b.weights),
                    degenerate=b.degenerate,
                    children=[build(c) for c in b.children],
                )
                for b in node.branches
            ],
        )

    return TreeDecompositionSchema(
        variables=variable_schemas(variables),
        child=decomposition.child.name,
        root=build(decomposition),
    )


def load_tree_decomposition(
    schema: TreeDecompositionSchema, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> TreeDecomposition:
    """Rebuild a tree decomposition; every branch's weights must form a distribution."""
    table = variable_table(schema.variables)
    child = resolve(table, [schema.child])[0]

    def build(node: TreeDecompositionNodeSchema) -> TreeDecomposition:
        path = tuple(node.path)
        if node.leaf is not None:
            return TreeDecomposition(child, path, leaf=cpt_from_schema(node.leaf, table, tolerances))
        branches = []
        for branch in node.branches or []:
            weights = tuple(branch.weights)
            if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > tolerances.norm:
                raise InvalidModelError(f"Branch weights at {list(path)} are not a distribution")
            branches.append(
                TreeBranch(
                    _assignment(table, branch.assignment),
                    weights,
                    tuple(build(c) for c in branch.children),
                    branch.degenerate,
                )
            )
        return TreeDecomposition(
            child,
            path,
            resolve(table, node.conditioning or []),
            tuple(resolve(table, b) for b in node.blocks or []),
            tuple(branches),
        )

    return build(schema.root)


# Results

def selector_factors_schema(factors: Sequence[Factor], selectors: Sequence[Variable]) -> SelectorFactorsSchema:
    return SelectorFactorsSchema(
        variables=variable_schemas(v for f in factors for v in f.scope),
        selectors=list(names(selectors)),
        factors=[FactorSchema(scope=list(names(f.scope)), table=f.values.tolist()) for f in factors],
    )


def load_factors(schema: SelectorFactorsSchema) -> List[Factor]:
    table = variable_table(schema.variables)
    return [Factor(resolve(table, f.scope), f.table) for f in schema.factors]


def prediction_schema(
    model: DbnModel,
    history: Sequence[Union[MarginalSet, Factor]],
    engine: str,
) -> PredictionSchema:
    steps = []
    for t, item in enumerate(history):
        if isinstance(item, MarginalSet):
            steps.append(PredictionStepSchema(
                t=t, marginals=marginal_schemas(item), approximate=item.approximate
            ))
        else:
            steps.append(PredictionStepSchema(t=t, joint=item.values.tolist()))
    return PredictionSchema(
        engine=engine,
        variables=variable_schemas(model.state),
        state=list(names(model.state)),
        steps=steps,
    )


def load_prediction(
    schema: PredictionSchema, tolerances: Tolerances = DEFAULT_TOLERANCES
) -> List[Union[MarginalSet, Factor]]:
    """Rebuild every step; marginal steps are re-validated for consistency."""
    table = variable_table(schema.variables)
    state = resolve(table, schema.state)
    history: List[Union[MarginalSet, Factor]] = []
    for step in schema.steps:
        if step.marginals is not None:
            history.append(load_marginal_set(step.marginals, table, tolerances, step.approximate))
        elif step.joint is not None:
            history.append(Factor(state, step.joint))
        else:
            raise InvalidModelError(f"Prediction step {step.t} carries no values")
    return history


def comparison_schema(
    family: Sequence[Subset],
    steps,
    cost,
    policy: str,
    query: Optional[Sequence[Variable]] = None,
    evidence: Optional[Assignment] = None,
) -> ComparisonSchema:
    query_gaps = [s.query_divergence for s in steps if s.query_divergence is not None]
    return ComparisonSchema(
        family=[list(names(s)) for s in family],
        query=list(names(query)) if query else None,
        evidence=evidence.to_dict() if evidence is not None and len(evidence) else None,
        policy=policy,
        max_divergence=max(s.divergence for s in steps),
        max_query_divergence=max(query_gaps) if query_gaps else None,
        steps=[
            ComparisonStepSchema(t=s.t, divergence=s.divergence, query_divergence=s.query_divergence)
            for s in steps
        ],
        cost=CostSchema(**cost.to_dict()),
    )


def check_schema(target: str, method: str, sufficient: bool, **details) -> CheckSchema:
    witness = details.pop("witness", None)
    if isinstance(witness, Witness):
        witness = witness_schema(witness)
    assignment = details.pop("assignment", None)
    if isinstance(assignment, Assignment):
        assignment = assignment.to_dict()
    return CheckSchema(
        target=target,
        method=method,
        sufficient=sufficient,
        witness=witness,
        assignment=assignment,
        **details,
    )


def error_schema(exc: BaseException) -> ErrorSchema:
    witness = getattr(exc, "witness", None)
    return ErrorSchema(
        error=type(exc).__name__,
        message=str(exc),
        witness=witness_schema(witness) if isinstance(witness, Witness) else None,
    )

