"""Model generators: the weather system, copy models, mode hierarchies and
random CPT instances.

All randomness comes from ``numpy.random.Generator(PCG64(seed))`` and the
draws happen in a fixed order, so a seed always produces the same model.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from sepinfer.core.dbn import DbnModel, next_copy
from sepinfer.core.errors import InvalidModelError
from sepinfer.core.prob_core import (
    DEFAULT_TOLERANCES,
    Cpt,
    Factor,
    Subset,
    Tolerances,
    Variable,
    expand_to,
    names,
    state_size,
)
from sepinfer.core.separability import TreeNode, TreeRepresentation
from sepinfer.utils.config import Config

logger = logging.getLogger(__name__)


def make_rng(seed: Optional[int] = None) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(Config.DEFAULT_SEED if seed is None else seed))


def random_rows(rng: np.random.Generator, rows: int, cardinality: int) -> np.ndarray:
    """``rows`` independent uniform draws from the simplex over ``cardinality`` values."""
    return rng.dirichlet(np.ones(cardinality), size=rows)


def random_cpt(child: Variable, parents: Sequence[Variable], rng: np.random.Generator) -> Cpt:
    parents = tuple(parents)
    return Cpt.from_matrix(child, parents, random_rows(rng, state_size(parents), child.cardinality))


def random_separable_cpt(
    child: Variable,
    blocks: Sequence[Sequence[Variable]],
    rng: np.random.Generator,
    weights: Optional[Sequence[float]] = None,
) -> Cpt:
    """sum_i weights[i] P_i(child | blocks[i]) with random components.

    Weights default to a uniform draw from the simplex.
    """
    blocks = tuple(tuple(b) for b in blocks)
    if weights is None:
        weights = rng.dirichlet(np.ones(len(blocks)))
    parents = tuple(v for b in blocks for v in b)
    scope = parents + (child,)
    table = np.zeros(tuple(v.cardinality for v in scope))
    for weight, block in zip(weights, blocks):
        component = random_cpt(child, block, rng)
        table = table + weight * expand_to(component.table, scope)
    return Cpt(child, parents, np.broadcast_to(table, [v.cardinality for v in scope]).reshape(-1))


def random_joint(variables: Sequence[Variable], rng: np.random.Generator) -> Factor:
    variables = tuple(variables)
    return Factor(variables, rng.dirichlet(np.ones(state_size(variables))))


def or_gate_network() -> List[Cpt]:
    """Uniform binary X and Y with a deterministic Z = X or Y."""
    x, y, z = Variable("X", 2), Variable("Y", 2), Variable("Z", 2)
    gate = [[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]
    return [
        Cpt(x, (), [0.5, 0.5]),
        Cpt(y, (), [0.5, 0.5]),
        Cpt.from_matrix(z, (x, y), gate),
    ]


def switch_network() -> List[Cpt]:
    """Z = (X and not W) or (Y and W): W switches which parent Z copies."""
    x, w, y, z = Variable("X", 2), Variable("W", 2), Variable("Y", 2), Variable("Z", 2)
    rows = []
    for xv in (0, 1):
        for wv in (0, 1):
            for yv in (0, 1):
                on = (xv and not wv) or (yv and wv)
                rows.append([0.0, 1.0] if on else [1.0, 0.0])
    return [
        Cpt(x, (), [0.5, 0.5]),
        Cpt(w, (), [0.5, 0.5]),
        Cpt(y, (), [0.5, 0.5]),
        Cpt.from_matrix(z, (x, w, y), rows),
    ]


def noisy_or_cpt(parents: Sequence[Variable], activation: float = 0.5, leak: float = 0.0) -> Cpt:
    """P(Z=0 | x) = (1 - leak) * prod over active parents of (1 - activation)."""
    parents = tuple(parents)
    child = Variable("Z", 2)
    rows = []
    for index in range(state_size(parents)):
        active = np.unravel_index(index, tuple(v.cardinality for v in parents))
        off = (1.0 - leak) * (1.0 - activation) ** sum(1 for a in active if a > 0)
        rows.append([off, 1.0 - off])
    return Cpt.from_matrix(child, parents, rows)


@dataclass
class WeatherModelSpec:
    """Locations on a line, a prevailing wind, and packet-of-air transitions.

    ``selection[w, i, j]`` is the probability that location i is influenced by
    location j when the wind was w; ``packets[(i, j)]`` is the |X| x |X| matrix
    P_ij(X_i' | X_j), rows indexed by the source value.
    """

    locations: int
    directions: int
    wind_transition: np.ndarray
    selection: np.ndarray
    packets: Dict[Tuple[int, int], np.ndarray]
    initial: np.ndarray
    cardinality: int = 2
    tolerances: Tolerances = field(default=DEFAULT_TOLERANCES)

    def __post_init__(self):
        n, d, b = self.locations, self.directions, self.cardinality
        if n < 1 or d < 2 or b < 2:
            raise InvalidModelError("Need at least one location, two directions and cardinality 2")
        eps = self.tolerances.norm
        self.wind_transition = np.asarray(self.wind_transition, dtype=np.float64)
        self.selection = np.asarray(self.selection, dtype=np.float64)
        if self.wind_transition.shape != (d, d):
            raise InvalidModelError("wind_transition must be directions x directions")
        if np.any(np.abs(self.wind_transition.sum(axis=1) - 1.0) > eps):
            raise InvalidModelError("wind_transition rows must sum to 1")
        if self.selection.shape != (d, n, n) or np.any(self.selection < 0):
            raise InvalidModelError("selection must be a non-negative directions x n x n array")
        if np.any(np.abs(self.selection.sum(axis=2) - 1.0) > eps):
            raise InvalidModelError("Each selection distribution must sum to 1")
        for w, i, j in zip(*np.nonzero(self.selection)):
            packet = self.packets.get((int(i), int(j)))
            if packet is None:
                raise InvalidModelError(f"Missing packet model for location {i} from {j}")
        for key, packet in self.packets.items():
            packet = np.asarray(packet, dtype=np.float64)
            if packet.shape != (b, b) or np.any(np.abs(packet.sum(axis=1) - 1.0) > eps):
                raise InvalidModelError(f"Packet model {key} must be a stochastic {b} x {b} matrix")
            self.packets[key] = packet
        self.initial = np.asarray(self.initial, dtype=np.float64).reshape(-1)
        if self.initial.size != d * b ** n:
            raise InvalidModelError("initial must be a joint over wind and every location")

    def sources(self, i: int) -> Tuple[int, ...]:
        """Locations with positive selection probability for location i under some wind."""
        return tuple(int(j) for j in np.flatnonzero(self.selection[:, i, :].sum(axis=0) > 0))


def neighbourhood(i: int, locations: int) -> Tuple[int, ...]:
    return tuple(j for j in (i - 1, i, i + 1) if 0 <= j < locations)


def random_weather_spec(
    locations: int,
    directions: int,
    seed: Optional[int] = None,
    cardinality: int = 2,
) -> WeatherModelSpec:
    """Random weather system where location i draws air from i-1, i or i+1."""
    rng = make_rng(seed)
    wind = random_rows(rng, directions, directions)
    selection = np.zeros((directions, locations, locations))
    for w in range(directions):
        for i in range(locations):
            sources = neighbourhood(i, locations)
            selection[w, i, list(sources)] = rng.dirichlet(np.ones(len(sources)))
    packets = {}
    for i in range(locations):
        for j in neighbourhood(i, locations):
            packets[(i, j)] = random_rows(rng, cardinality, cardinality)
    initial = rng.dirichlet(np.ones(directions * cardinality ** locations))
    return WeatherModelSpec(locations, directions, wind, selection, packets, initial, cardinality)


def make_weather(spec: WeatherModelSpec) -> Tuple[DbnModel, List[Subset], TreeRepresentation]:
    """Build the weather DBN, the family {W, X_i} and its tree rooted at {W}.

    P(X_i' | W, sources) = sum_j selection[w, i, j] * P_ij(X_i' | X_j).
    """
    wind = Variable("W", spec.directions)
    places = [Variable(f"X{i + 1}", spec.cardinality) for i in range(spec.locations)]
    state = (wind,) + tuple(places)

    transitions = [Cpt.from_matrix(next_copy(wind), (wind,), spec.wind_transition, spec.tolerances)]
    for i, place in enumerate(places):
        sources = spec.sources(i)
        parents = (wind,) + tuple(places[j] for j in sources)
        child = next_copy(place)
        scope = parents + (child,)
        table = np.zeros(tuple(v.cardinality for v in scope))
        for w in range(spec.directions):
            for j in sources:
                weight = spec.selection[w, i, j]
                if weight == 0.0:
                    continue
                packet = Factor((places[j], child), spec.packets[(i, j)])
                table[w] = table[w] + weight * expand_to(packet, scope[1:])
        transitions.append(Cpt(child, parents, table.reshape(-1), spec.tolerances))

    initial = Factor(state, spec.initial)
    model = DbnModel(state, transitions, initial, spec.tolerances)
    family = [(wind, place) for place in places]
    return model, family, TreeRepresentation.flat(family)


def make_copy_model(agreement: float = 0.9, initial: Optional[Factor] = None) -> DbnModel:
    """X and Y each copy themselves forward; the initial joint correlates them.

    The default initial joint is [a/2, (1-a)/2, (1-a)/2, a/2] over (X, Y).
    """
    x, y = Variable("X", 2), Variable("Y", 2)
    identity = np.eye(2)
    transitions = [
        Cpt.from_matrix(next_copy(x), (x,), identity),
        Cpt.from_matrix(next_copy(y), (y,), identity),
    ]
    if initial is None:
        if not 0.0 <= agreement <= 1.0:
            raise InvalidModelError("agreement must lie in [0, 1]")
        a = agreement
        initial = Factor((x, y), [a / 2, (1 - a) / 2, (1 - a) / 2, a / 2])
    return DbnModel((x, y), transitions, initial)


def make_figure5(agreement: float = 0.9) -> DbnModel:
    """The two-copy counterexample under its demo name, see make_copy_model."""
    return make_copy_model(agreement)


def random_copy_model(seed: Optional[int] = None, cardinality: int = 2) -> DbnModel:
    """Copy model over larger variables with a random (generally correlated) initial joint."""
    rng = make_rng(seed)
    x, y = Variable("X", cardinality), Variable("Y", cardinality)
    identity = np.eye(cardinality)
    transitions = [
        Cpt.from_matrix(next_copy(x), (x,), identity),
        Cpt.from_matrix(next_copy(y), (y,), identity),
    ]
    return DbnModel((x, y), transitions, random_joint((x, y), rng))


def make_coupled_pair(seed: Optional[int] = None) -> DbnModel:
    """Two variables whose transitions each mix a dependence on X and on Y."""
    rng = make_rng(seed)
    x, y = Variable("X", 2), Variable("Y", 2)
    transitions = [
        random_separable_cpt(next_copy(x), [(x,), (y,)], rng),
        random_separable_cpt(next_copy(y), [(x,), (y,)], rng),
    ]
    return DbnModel((x, y), transitions, random_joint((x, y), rng))


@dataclass(frozen=True)
class Mode:
    """One information-flow pattern: ``sources[k]`` is the leaf that leaf k reads from."""

    name: str
    sources: Tuple[int, ...]


def top_down_mode(tree: TreeRepresentation, name: str = "top-down") -> Mode:
    """Every subsystem reads its own previous state."""
    return Mode(name, tuple(range(len(tree.leaves()))))


def take_over_mode(
    tree: TreeRepresentation,
    leaf: Sequence[int],
    node: Sequence[int],
    name: Optional[str] = None,
) -> Mode:
    """The subsystem at path ``leaf`` drives every subsystem beneath ``node``."""
    leaf, node = tuple(leaf), tuple(node)
    paths = [p for p, _ in tree.leaves()]
    if leaf not in paths:
        raise InvalidModelError(f"{list(leaf)} is not a leaf path")
    if leaf[: len(node)] != node:
        raise InvalidModelError(f"Node {list(node)} is not above leaf {list(leaf)}")
    driver = paths.index(leaf)
    sources = tuple(driver if p[: len(node)] == node else k for k, p in enumerate(paths))
    return Mode(name or f"take-over-{driver}", sources)


def mode_parents(tree: TreeRepresentation, mode: Mode, var: Variable) -> Subset:
    """Variables of var's source subsystems that every one of them contains."""
    leaves = tree.leaves()
    containing = [k for k, (_, subset) in enumerate(leaves) if var in subset]
    common = None
    for k in containing:
        source = set(names(leaves[mode.sources[k]][1]))
        common = source if common is None else common & source
    return tuple(v for v in tree.variables() if v.name in (common or set()))


@dataclass
class ModeSpec:
    """Complete tree of subsystems, operating modes, and per-mode local dynamics.

    ``local[(variable name, mode name)]`` is P(X' | parents) for that mode;
    its parents must be among ``mode_parents`` of the variable in that mode.
    ``mode_transition`` is P(M' | parents) over the mode variable, whose
    parents may only be ``M`` and variables located at the root.
    """

    tree: TreeRepresentation
    modes: Tuple[Mode, ...]
    local: Mapping[Tuple[str, str], Cpt]
    mode_transition: Optional[Cpt]
    initial: Factor
    mode_name: str = "M"

    def __post_init__(self):
        self.modes = tuple(self.modes)
        if not self.modes:
            raise InvalidModelError("At least one mode is required")
        if len({m.name for m in self.modes}) != len(self.modes):
            raise InvalidModelError("Mode names must be unique")
        if not self.tree.is_complete():
            raise InvalidModelError("Mode hierarchies need a complete tree representation")
        count = len(self.tree.leaves())
        for mode in self.modes:
            if len(mode.sources) != count or not all(0 <= s < count for s in mode.sources):
                raise InvalidModelError(f"Mode {mode.name} must name one source leaf per leaf")
        for var in self.tree.variables():
            for mode in self.modes:
                cpt = self.local.get((var.name, mode.name))
                if cpt is None:
                    raise InvalidModelError(f"No local transition for {var.name} in mode {mode.name}")
                if cpt.child != next_copy(var):
                    raise InvalidModelError(f"Local transition for {var.name} has the wrong child")
                allowed = set(names(mode_parents(self.tree, mode, var)))
                extra = set(names(cpt.parents)) - allowed
                if extra:
                    raise InvalidModelError(
                        f"{var.name} in mode {mode.name} may not depend on {sorted(extra)}"
                    )
        if len(self.modes) > 1:
            mode_var = self.mode_variable
            if self.mode_transition is None or self.mode_transition.child != next_copy(mode_var):
                raise InvalidModelError(f"A transition for {self.mode_name}' is required")
            root = set(names(self.tree.vars_at(()))) | {mode_var.name}
            extra = set(names(self.mode_transition.parents)) - root
            if extra:
                raise InvalidModelError(
                    f"Mode selection may only depend on root-level variables, not {sorted(extra)}"
                )

    @property
    def mode_variable(self) -> Optional[Variable]:
        if len(self.modes) == 1:
            return None
        return Variable(self.mode_name, len(self.modes))


def _with_variable(node: TreeNode, var: Variable) -> TreeNode:
    if node.is_leaf:
        return TreeNode.leaf(node.subset + (var,))
    return TreeNode.node(*(_with_variable(c, var) for c in node.children))


def make_from_modes(spec: ModeSpec) -> Tuple[DbnModel, List[Subset], TreeRepresentation]:
    """Mix the per-mode dynamics into one transition per variable.

    With several modes a mode variable joins every subsystem; its previous
    value selects the mode, so P(X' | M=mu, S) = local[(X, mu)].
    """
    base = spec.tree.variables()
    mode_var = spec.mode_variable
    transitions = []
    for var in base:
        child = next_copy(var)
        used = set()
        for mode in spec.modes:
            used |= set(names(spec.local[(var.name, mode.name)].parents))
        parents = tuple(v for v in base if v.name in used)
        if mode_var is None:
            cpt = spec.local[(var.name, spec.modes[0].name)]
            transitions.append(Cpt(child, parents, cpt.table))
            continue
        scope = parents + (child,)
        table = np.zeros((mode_var.cardinality,) + tuple(v.cardinality for v in scope))
        for mu, mode in enumerate(spec.modes):
            local = spec.local[(var.name, mode.name)]
            table[mu] = np.broadcast_to(expand_to(local.table, scope), table.shape[1:])
        transitions.append(Cpt(child, (mode_var,) + parents, table.reshape(-1)))

    if mode_var is None:
        state, tree = base, spec.tree
    else:
        state = base + (mode_var,)
        transitions.append(spec.mode_transition)
        tree = TreeRepresentation(_with_variable(spec.tree.root, mode_var))
    model = DbnModel(state, transitions, spec.initial)
    return model, tree.subsets(), tree


def example_hierarchy() -> TreeRepresentation:
    """Seven binary variables V1..V7.

    V3 sits at the root, V2 is shared by the two leaves of the left branch
    and V6 by the two leaves of the right branch.
    """
    v = {i: Variable(f"V{i}", 2) for i in range(1, 8)}

    def leaf(*members):
        return TreeNode.leaf(tuple(v[i] for i in members))

    return TreeRepresentation(
        TreeNode.node(
            TreeNode.node(leaf(1, 2, 3), leaf(2, 3, 4)),
            TreeNode.node(leaf(3, 5, 6), leaf(3, 6, 7)),
        )
    )


def random_mode_spec(
    tree: TreeRepresentation,
    modes: Sequence[Mode],
    seed: Optional[int] = None,
    mode_weights: Optional[Sequence[float]] = None,
) -> ModeSpec:
    """Random local dynamics over the full allowed parent set of every (variable, mode)."""
    rng = make_rng(seed)
    modes = tuple(modes)
    local = {}
    for var in tree.variables():
        for mode in modes:
            parents = mode_parents(tree, mode, var)
            local[(var.name, mode.name)] = random_cpt(next_copy(var), parents, rng)
    mode_transition = None
    variables = tree.variables()
    if len(modes) > 1:
        mode_var = Variable("M", len(modes))
        weights = np.full(len(modes), 1.0 / len(modes)) if mode_weights is None else mode_weights
        mode_transition = Cpt(next_copy(mode_var), (), weights)
        variables = variables + (mode_var,)
    initial = random_joint(variables, rng)
    return ModeSpec(tree, modes, local, mode_transition, initial)


def example_mode_spec(seed: Optional[int] = None) -> ModeSpec:
    """Top-down operation mixed 50/50 with {V2,V3,V4} taking over its branch."""
    tree = example_hierarchy()
    modes = (top_down_mode(tree), take_over_mode(tree, (0, 1), (0,), "take-over"))
    return random_mode_spec(tree, modes, seed)
