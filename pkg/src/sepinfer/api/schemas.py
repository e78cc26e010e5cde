"""
pydantic models describing the JSON documents read and written by sepinfer.

Model documents (kind "network" or "dbn") describe inputs; every other kind
is a result document emitted by the command line.
"""
from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


class DocumentModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class VariableSchema(DocumentModel):
    name: str = Field(min_length=1)
    cardinality: int = Field(ge=2)


class CptSchema(DocumentModel):
    child: str
    parents: List[str] = []
    table: List[float]


class FactorSchema(DocumentModel):
    scope: List[str]
    table: List[float]


class MarginalSchema(DocumentModel):
    subset: List[str]
    table: List[float]


class TolerancesSchema(DocumentModel):
    norm: Optional[float] = Field(default=None, gt=0)
    consistency: Optional[float] = Field(default=None, gt=0)
    sep: Optional[float] = Field(default=None, gt=0)
    pivot: Optional[float] = Field(default=None, gt=0)


class InitialSchema(DocumentModel):
    joint: Optional[List[float]] = None
    marginals: Optional[List[MarginalSchema]] = None

    @model_validator(mode="after")
    def exactly_one(self):
        if (self.joint is None) == (self.marginals is None):
            raise ValueError("initial needs exactly one of 'joint' or 'marginals'")
        return self


class TreeNodeSchema(DocumentModel):
    vars: Optional[List[str]] = None
    children: Optional[List["TreeNodeSchema"]] = None
    leaf: Optional[List[str]] = None

    @model_validator(mode="after")
    def leaf_or_children(self):
        if (self.leaf is None) == (not self.children):
            raise ValueError("a tree node has either 'leaf' or 'children'")
        return self


class NetworkDocument(DocumentModel):
    kind: Literal["network"]
    variables: List[VariableSchema]
    cpts: List[CptSchema]
    tolerances: Optional[TolerancesSchema] = None


class DbnDocument(DocumentModel):
    kind: Literal["dbn"]
    variables: List[VariableSchema]
    state: List[str]
    transitions: List[CptSchema]
    initial: InitialSchema
    family: Optional[List[List[str]]] = None
    tree: Optional[TreeNodeSchema] = None
    tolerances: Optional[TolerancesSchema] = None


ModelDocument = Annotated[Union[NetworkDocument, DbnDocument], Field(discriminator="kind")]


class WitnessSchema(DocumentModel):
    assignment: Dict[str, int]
    child_value: int
    expected: float
    actual: float


class TraceSchema(DocumentModel):
    z1: int
    reference: Dict[str, int]
    baseline: List[float]
    deltas: List[List[float]]
    ranges: List[float]


class DecompositionSchema(DocumentModel):
    kind: Literal["separable"] = "separable"
    variables: List[VariableSchema]
    child: str
    blocks: List[List[str]]
    weights: List[float]
    components: List[CptSchema]
    degenerate: bool = False
    trace: Optional[TraceSchema] = None


class ConditionalEntrySchema(DocumentModel):
    assignment: Dict[str, int]
    weights: List[float]
    components: List[CptSchema]
    degenerate: bool = False


class ConditionalDecompositionSchema(DocumentModel):
    kind: Literal["conditional"] = "conditional"
    variables: List[VariableSchema]
    child: str
    given: List[str]
    blocks: List[List[str]]
    entries: List[ConditionalEntrySchema]


class TreeBranchSchema(DocumentModel):
    assignment: Dict[str, int]
    weights: List[float]
    degenerate: bool = False
    children: List["TreeDecompositionNodeSchema"]


class TreeDecompositionNodeSchema(DocumentModel):
    path: List[int]
    conditioning: Optional[List[str]] = None
    blocks: Optional[List[List[str]]] = None
    branches: Optional[List[TreeBranchSchema]] = None
    leaf: Optional[CptSchema] = None


class TreeDecompositionSchema(DocumentModel):
    kind: Literal["tree"] = "tree"
    variables: List[VariableSchema]
    child: str
    root: TreeDecompositionNodeSchema


class CheckSchema(DocumentModel):
    kind: Literal["check"] = "check"
    target: str
    method: str
    sufficient: bool
    verified: Optional[bool] = None
    subset: Optional[List[str]] = None
    path: Optional[List[int]] = None
    assignment: Optional[Dict[str, int]] = None
    witness: Optional[WitnessSchema] = None
    message: Optional[str] = None


class SelectorFactorsSchema(DocumentModel):
    kind: Literal["factors"] = "factors"
    variables: List[VariableSchema]
    selectors: List[str]
    factors: List[FactorSchema]


class PredictionStepSchema(DocumentModel):
    t: int
    marginals: Optional[List[MarginalSchema]] = None
    joint: Optional[List[float]] = None
    approximate: bool = False


class PredictionSchema(DocumentModel):
    kind: Literal["prediction"] = "prediction"
    engine: Literal["marginal", "exact"]
    variables: List[VariableSchema]
    state: List[str]
    steps: List[PredictionStepSchema]


class CostSchema(DocumentModel):
    horizon: int
    n: int
    m: int
    b: int
    M: int
    marginal_operations: int
    exact_operations: int
    marginal_bound: int
    exact_bound: int


class ComparisonStepSchema(DocumentModel):
    t: int
    divergence: float
    query_divergence: Optional[float] = None


class ComparisonSchema(DocumentModel):
    kind: Literal["comparison"] = "comparison"
    family: List[List[str]]
    query: Optional[List[str]] = None
    evidence: Optional[Dict[str, int]] = None
    policy: str
    max_divergence: float
    max_query_divergence: Optional[float] = None
    steps: List[ComparisonStepSchema]
    cost: CostSchema


class ErrorSchema(DocumentModel):
    kind: Literal["error"] = "error"
    error: str
    message: str
    witness: Optional[WitnessSchema] = None


TreeNodeSchema.model_rebuild()
TreeBranchSchema.model_rebuild()
TreeDecompositionNodeSchema.model_rebuild()
