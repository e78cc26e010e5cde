"""Exception hierarchy shared by the core modules."""


class SepInferError(Exception):
    """Base class for every error raised by sepinfer."""


class ScopeError(SepInferError, ValueError):
    """A factor operation was given variables that do not fit the scope."""


class ZeroMassError(SepInferError, ValueError):
    """A factor with zero total mass was normalized (impossible evidence)."""


class InvalidModelError(SepInferError, ValueError):
    """A table, model, spec or document violates its invariants."""


class MissingMarginalError(SepInferError, ValueError):
    """No marginal in a MarginalSet covers the requested variables."""


class MarginalInconsistencyError(SepInferError, ValueError):
    """Two overlapping marginals disagree on their shared variables."""

    def __init__(self, message, variables=(), gap=0.0):
        super().__init__(message)
        self.variables = tuple(variables)
        self.gap = gap


class NotSeparable(SepInferError):
    """The additivity identity fails; carries the violating cell."""

    def __init__(self, witness, trace=None, message=None):
        self.witness = witness
        self.trace = trace
        super().__init__(message or f"not separable: {witness}")


class NotConditionallySeparable(NotSeparable):
    """Some slice P^w is not separable."""

    def __init__(self, assignment, witness, trace=None):
        self.assignment = assignment
        super().__init__(
            witness,
            trace,
            f"not conditionally separable at {assignment}: {witness}",
        )


class NotTSeparable(NotSeparable):
    """Separation failed at some node of a tree representation."""

    def __init__(self, path, assignment, witness, trace=None):
        self.path = tuple(path)
        self.assignment = assignment
        super().__init__(
            witness,
            trace,
            f"not T-separable at node {list(self.path)} given {assignment}: {witness}",
        )


class ComponentNotDistribution(SepInferError):
    """A constructed mixture component has an entry below -eps."""

    def __init__(self, block_index, minimum):
        self.block_index = block_index
        self.minimum = minimum
        super().__init__(
            f"component {block_index} has entry {minimum!r} below tolerance"
        )


class NotSelfSufficient(SepInferError):
    """A subset's next-slice distribution is not sufficient given the family."""

    def __init__(self, subset, cause):
        self.subset = tuple(subset)
        self.cause = cause
        names = ",".join(v.name for v in self.subset)
        super().__init__(f"subset {{{names}}} is not self-sufficient: {cause}")

    @property
    def witness(self):
        return getattr(self.cause, "witness", None)


class SufficiencyBroken(SepInferError):
    """Evidence on a variable absent from some family subsets (strict filtering)."""

    def __init__(self, variable, missing):
        self.variable = variable
        self.missing = tuple(tuple(s) for s in missing)
        subsets = "; ".join(",".join(v.name for v in s) for s in self.missing)
        super().__init__(
            f"evidence on {variable.name} breaks sufficiency; missing from: {subsets}"
        )


class OracleTooLarge(SepInferError, RuntimeError):
    """The parent space exceeds the sufficiency-oracle cap."""


class JointTooLarge(SepInferError, RuntimeError):
    """The joint state space exceeds the exact-joint cap."""


class OracleDisagreement(SepInferError, RuntimeError):
    """The constructive decomposition and the linear-algebra oracle disagree."""
