#!/usr/bin/env python
"""
sepinfer command line.

Reads model documents (JSON, from a path or standard input), runs separability
checks, decompositions, the selector transform, marginal prediction and
comparisons against exact prediction, and writes result documents to standard
output or --output. Progress goes to standard error.

Exit codes: 0 success, 1 structural failure (a witness is reported), 2 usage
or parse error.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Mapping, Optional, Sequence

from sepinfer.api.documents import (
    LoadedDbn,
    Network,
    build_dbn,
    build_network,
    check_schema,
    comparison_schema,
    conditional_schema,
    dbn_document,
    decomposition_schema,
    dumps,
    error_schema,
    load_model,
    network_document,
    prediction_schema,
    selector_factors_schema,
    tree_decomposition_schema,
    tree_from_schema,
)
from sepinfer.api.schemas import DbnDocument, TreeNodeSchema
from sepinfer.core import dbn, generators
from sepinfer.core.errors import (
    InvalidModelError,
    MissingMarginalError,
    NotSelfSufficient,
    NotSeparable,
    NotTSeparable,
    ScopeError,
    SepInferError,
)
from sepinfer.core.prob_core import Assignment, Variable, names
from sepinfer.core.separability import (
    TreeRepresentation,
    conditional_separate,
    separate_n,
    sufficiency_oracle,
    tree_separate,
)
from sepinfer.core.transform import is_selector, transform_network
from sepinfer.utils.config import get_config
from sepinfer.utils.file_utils import read_text, write_text

logger = logging.getLogger("sepinfer")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_USAGE_ERRORS = (InvalidModelError, ScopeError, MissingMarginalError, FileNotFoundError)


class UsageError(Exception):
    """Flags that do not fit the loaded document."""


def configure_logging(level: Optional[str] = None):
    """Route log records to standard error as 'LEVEL: message' lines."""
    level = (level or get_config().LOG_LEVEL).upper()
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)


def _split(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _resolve(lookup: Mapping[str, Variable], labels: Sequence[str]) -> tuple:
    try:
        return tuple(lookup[label] for label in labels)
    except KeyError as exc:
        raise UsageError(f"Unknown variable {exc.args[0]!r}") from None


def parse_subsets(lookup: Mapping[str, Variable], items: Optional[Sequence[str]]):
    """'A,B' 'C' -> [(A, B), (C,)]."""
    if not items:
        return None
    return [_resolve(lookup, _split(item)) for item in items]


def parse_evidence(lookup: Mapping[str, Variable], text: Optional[str]) -> Assignment:
    """'X=1,Y=0' -> Assignment."""
    if not text:
        return Assignment()
    pairs = []
    for item in _split(text):
        if "=" not in item:
            raise UsageError(f"Evidence item {item!r} must look like VAR=VALUE")
        label, value = item.split("=", 1)
        try:
            pairs.append((_resolve(lookup, [label.strip()])[0], int(value)))
        except ValueError:
            raise UsageError(f"Evidence value {value!r} is not an integer") from None
    return Assignment(tuple(pairs))


def parse_tree(lookup: Mapping[str, Variable], text: Optional[str]) -> Optional[TreeRepresentation]:
    """A tree given inline as JSON or as a path to a JSON file."""
    if not text:
        return None
    raw = read_text(text) if os.path.isfile(text) else text
    try:
        schema = TreeNodeSchema.model_validate(json.loads(raw))
    except (json.JSONDecodeError, ValueError) as exc:
        raise UsageError(f"--tree is not a valid tree document: {exc}") from None
    return tree_from_schema(schema, lookup)


def load_input(path: str):
    document = load_model(read_text(path))
    if isinstance(document, DbnDocument):
        loaded = build_dbn(document)
        logger.info(
            "Loaded dbn with %d state variables (state space %d)",
            len(loaded.model.state), loaded.model.state_space,
        )
        return loaded
    network = build_network(document)
    logger.info("Loaded network with %d nodes", len(network.cpts))
    return network


def _state_lookup(loaded: LoadedDbn):
    return {v.name: v for v in loaded.model.state}


def _family_and_tree(loaded: LoadedDbn, args):
    lookup = _state_lookup(loaded)
    family = parse_subsets(lookup, args.family) or loaded.family
    tree = parse_tree(lookup, args.tree) or (loaded.tree if not args.family else None)
    if family is None:
        if tree is None:
            raise UsageError("A family is required: pass --family or include one in the document")
        family = tree.subsets()
    return family, tree


def _require(loaded, kind):
    if kind == "network" and not isinstance(loaded, Network):
        raise UsageError("This command needs a network document")
    if kind == "dbn" and not isinstance(loaded, LoadedDbn):
        raise UsageError("This command needs a dbn document")


def _node_and_blocks(network: Network, args):
    if not args.node:
        raise UsageError("--node is required for network documents")
    cpt = network.cpt_for(args.node)
    blocks = parse_subsets(network.variables, args.blocks)
    given = parse_subsets(network.variables, [args.given])[0] if args.given else ()
    return cpt, blocks, given


def cmd_check(args) -> int:
    """Separability of one node, or self-sufficiency of a dbn family."""
    loaded = load_input(args.model)
    if isinstance(loaded, LoadedDbn):
        family, tree = _family_and_tree(loaded, args)
        lookup = _state_lookup(loaded)
        targets = parse_subsets(lookup, [args.query]) if args.query else ()
        try:
            verified = dbn.check_self_sufficient(loaded.model, family, tree, targets)
        except NotSelfSufficient as exc:
            cause = exc.cause
            document = check_schema(
                "family", "tree_separate", False,
                subset=list(names(exc.subset)),
                path=list(getattr(cause, "path", ())) or None,
                assignment=getattr(cause, "assignment", None),
                witness=exc.witness,
                message=str(exc),
            )
            write_text(dumps(document), args.output)
            logger.error("%s", exc)
            return EXIT_FAILURE
        document = check_schema("family", "tree_separate", True, verified=verified.verified)
        write_text(dumps(document), args.output)
        return EXIT_OK

    cpt, blocks, given = _node_and_blocks(loaded, args)
    tree = parse_tree(loaded.variables, args.tree)
    target = cpt.child.name
    if tree is None and not blocks:
        raise UsageError("--blocks or --tree is required")
    method = "tree_separate" if tree is not None else "conditional_separate" if given else "separate"
    try:
        if tree is not None:
            tree_separate(cpt, tree, loaded.tolerances)
        elif given:
            conditional_separate(cpt, blocks, given, loaded.tolerances)
        else:
            separate_n(cpt, blocks, loaded.tolerances)
    except NotSeparable as exc:
        document = check_schema(
            target, method, False,
            path=list(exc.path) if isinstance(exc, NotTSeparable) else None,
            assignment=getattr(exc, "assignment", None),
            witness=exc.witness,
            message=str(exc),
        )
        write_text(dumps(document), args.output)
        logger.error("%s", exc)
        return EXIT_FAILURE
    verified = None
    subsets = tree.subsets() if tree is not None else blocks
    checkable = tree is None or tree.is_complete()
    if checkable and cpt.parent_space <= get_config().ORACLE_CAP:
        verified = sufficiency_oracle(cpt, subsets, loaded.tolerances)
        if not verified:
            logger.warning("Oracle does not confirm the decomposition of %s", target)
    write_text(dumps(check_schema(target, method, True, verified=verified)), args.output)
    return EXIT_OK


def cmd_decompose(args) -> int:
    """Emit the decomposition document of a node (or a dbn subset)."""
    loaded = load_input(args.model)
    if isinstance(loaded, LoadedDbn):
        if not args.query:
            raise UsageError("--query SUBSET is required to decompose a dbn subset")
        family, tree = _family_and_tree(loaded, args)
        tree = tree or TreeRepresentation.flat(family)
        subset = parse_subsets(_state_lookup(loaded), [args.query])[0]
        cpt = dbn.product_cpt(loaded.model, subset)
        local = tree.restricted(cpt.parents)
        decomposition = tree_separate(cpt, local, loaded.model.tolerances)
        write_text(dumps(tree_decomposition_schema(decomposition)), args.output)
        return EXIT_OK

    cpt, blocks, given = _node_and_blocks(loaded, args)
    tree = parse_tree(loaded.variables, args.tree)
    if tree is None and not blocks:
        raise UsageError("--blocks or --tree is required")
    if tree is not None:
        document = tree_decomposition_schema(tree_separate(cpt, tree, loaded.tolerances))
    elif given:
        document = conditional_schema(conditional_separate(cpt, blocks, given, loaded.tolerances))
    else:
        decomposition = separate_n(cpt, blocks, loaded.tolerances)
        if decomposition.degenerate:
            logger.warning("%s does not depend on its parents; weights are uniform", cpt.child.name)
        logger.info("Weights for %s: %s", cpt.child.name, list(decomposition.weights))
        document = decomposition_schema(decomposition)
    write_text(dumps(document), args.output)
    return EXIT_OK


def cmd_transform(args) -> int:
    """Emit the network's factor list with the annotated node rewritten."""
    loaded = load_input(args.model)
    _require(loaded, "network")
    annotations = {}
    if args.node:
        cpt, blocks, _ = _node_and_blocks(loaded, args)
        annotations[cpt.child.name] = blocks or [(p,) for p in cpt.parents]
    factors = transform_network(loaded.cpts, annotations, loaded.tolerances)
    selectors = [v for f in factors for v in f.scope if is_selector(v)]
    unique = list({v.name: v for v in selectors}.values())
    logger.info("Transformed network has %d factors", len(factors))
    write_text(dumps(selector_factors_schema(factors, unique)), args.output)
    return EXIT_OK


def _evidence_and_policy(loaded: LoadedDbn, args):
    evidence = parse_evidence(_state_lookup(loaded), args.evidence)
    return evidence, dbn.FilterPolicy(args.policy)


def cmd_predict(args) -> int:
    """Per-step marginals (or joints with --exact) up to --steps."""
    loaded = load_input(args.model)
    _require(loaded, "dbn")
    evidence, policy = _evidence_and_policy(loaded, args)
    observations = {args.steps: evidence} if len(evidence) else {}
    logger.info("Predicting %d steps (%s)", args.steps, "exact" if args.exact else "marginal")
    if args.exact:
        history = dbn.monitor_exact(loaded.model, args.steps, observations)
        document = prediction_schema(loaded.model, history, "exact")
    else:
        family, tree = _family_and_tree(loaded, args)
        verified = dbn.check_self_sufficient(loaded.model, family, tree)
        history = dbn.monitor(verified, loaded.model, args.steps, observations, policy)
        document = prediction_schema(loaded.model, history, "marginal")
    write_text(dumps(document), args.output)
    return EXIT_OK


def cmd_compare(args) -> int:
    """Per-step divergence between marginal and exact prediction, plus costs."""
    loaded = load_input(args.model)
    _require(loaded, "dbn")
    evidence, policy = _evidence_and_policy(loaded, args)
    family, tree = _family_and_tree(loaded, args)
    verified = dbn.check_self_sufficient(loaded.model, family, tree)
    query = parse_subsets(_state_lookup(loaded), [args.query])[0] if args.query else None
    steps, cost = dbn.compare_predictions(verified, loaded.model, args.steps, query, evidence, policy)
    document = comparison_schema(verified.subsets, steps, cost, policy.value, query, evidence)
    logger.info(
        "Max divergence %.3g; marginal cost %d vs exact cost %d",
        document.max_divergence, cost.marginal_operations, cost.exact_operations,
    )
    write_text(dumps(document), args.output)
    return EXIT_OK


def cmd_demo(args) -> int:
    """Emit one of the built-in model documents."""
    seed = args.seed if args.seed is not None else get_config().DEFAULT_SEED
    if args.name == "weather":
        spec = generators.random_weather_spec(args.locations, args.directions, seed)
        model, family, tree = generators.make_weather(spec)
        document = dbn_document(model, family, tree)
    elif args.name in ("copies", "figure5"):
        model = generators.make_figure5(args.agreement)
        document = dbn_document(model, [(v,) for v in model.state])
    elif args.name == "modes":
        model, family, tree = generators.make_from_modes(generators.example_mode_spec(seed))
        document = dbn_document(model, family, tree)
    elif args.name == "or-gate":
        document = network_document(generators.or_gate_network())
    else:
        document = network_document(generators.switch_network())
    write_text(dumps(document), args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sepinfer",
        description="Separability analysis and marginal propagation for Bayesian networks",
    )
    parser.add_argument("--log-level", help="Logging level (default from SEPINFER_LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    def model_command(name, handler, help_text):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("model", nargs="?", default="-", help="Model document path ('-' for stdin)")
        sub.add_argument("--output", help="Write the result here instead of standard output")
        sub.set_defaults(handler=handler)
        return sub

    def node_flags(sub):
        sub.add_argument("--node", help="Network node to analyse")
        sub.add_argument("--blocks", nargs="+", help="Parent blocks, each as A,B,...")
        sub.add_argument("--given", help="Conditioning set W as A,B,...")

    def family_flags(sub):
        sub.add_argument("--family", nargs="+", help="Family subsets, each as A,B,...")
        sub.add_argument("--tree", help="Tree representation as JSON text or a JSON file path")
        sub.add_argument("--query", help="Query subset as A,B,...")

    def dynamics_flags(sub):
        sub.add_argument("--steps", type=int, default=10, help="Prediction horizon T")
        sub.add_argument("--evidence", help="Evidence VAR=VAL[,...] applied at the final step")
        sub.add_argument(
            "--policy",
            choices=[p.value for p in dbn.FilterPolicy],
            default=dbn.FilterPolicy.STRICT.value,
            help="Filtering policy for evidence",
        )

    check = model_command("check", cmd_check, "Check separability or self-sufficiency")
    node_flags(check)
    family_flags(check)

    decompose = model_command("decompose", cmd_decompose, "Emit a decomposition document")
    node_flags(decompose)
    family_flags(decompose)

    transform = model_command("transform", cmd_transform, "Emit the selector factor list")
    node_flags(transform)

    predict = model_command("predict", cmd_predict, "Predict marginals over time")
    family_flags(predict)
    dynamics_flags(predict)
    predict.add_argument("--exact", action="store_true", help="Propagate the full joint instead")

    compare = model_command("compare", cmd_compare, "Compare marginal and exact prediction")
    family_flags(compare)
    dynamics_flags(compare)

    demo = commands.add_parser("demo", help="Emit a built-in model document")
    demo.add_argument(
        "name", choices=["weather", "copies", "figure5", "modes", "or-gate", "switch"]
    )
    demo.add_argument("--seed", type=int, help="Random seed")
    demo.add_argument("--locations", type=int, default=4, help="Weather locations")
    demo.add_argument("--directions", type=int, default=4, help="Wind directions")
    demo.add_argument("--agreement", type=float, default=0.9, help="Copy-model initial agreement")
    demo.add_argument("--output", help="Write the document here instead of standard output")
    demo.set_defaults(handler=cmd_demo)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, dispatch, and map failures onto exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    configure_logging(args.log_level)
    logger.info("Running %s", args.command)
    if getattr(args, "steps", 0) < 0:
        print("ERROR: --steps must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.handler(args)
    except (UsageError,) + _USAGE_ERRORS as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SepInferError as exc:
        logger.error("%s", exc)
        write_text(dumps(error_schema(exc)), getattr(args, "output", None))
        return EXIT_FAILURE


def main():
    """CLI entrypoint."""
    sys.exit(run())


if __name__ == "__main__":
    main()
