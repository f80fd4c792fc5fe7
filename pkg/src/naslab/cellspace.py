"""Recurrent-cell DAG search space.

A cell is a DAG over ``n`` nodes: node 1 consumes the step input and the
previous hidden state, every later node applies a sampled activation to one
earlier node's value, and the cell output averages the leaf nodes. An
architecture is the ordered decision list (activation for node 1, then
predecessor plus activation for each further node).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

from .numkit import Rng, sample_categorical

__all__ = [
    "Activation",
    "ACTIVATION_NAMES",
    "Architecture",
    "SearchSpace",
    "SchemaStep",
    "InvalidArchitectureError",
    "decision_schema",
    "space_size",
    "random_architecture",
    "validate",
    "codec",
    "parse",
    "to_json",
    "from_json",
    "edge_set",
    "leaf_set",
]


class Activation(IntEnum):
    """The four node activations, with a stable ordinal encoding."""

    TANH = 0
    RELU = 1
    SIGMOID = 2
    IDENTITY = 3


ACTIVATION_NAMES = ("tanh", "relu", "sigmoid", "identity")
_NAME_TO_ACTIVATION = {name: Activation(i) for i, name in enumerate(ACTIVATION_NAMES)}
N_ACTIVATIONS = len(ACTIVATION_NAMES)


class InvalidArchitectureError(ValueError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    """Cell search space: node count plus the fixed activation set."""

    n_nodes: int = 12

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")


@dataclass(frozen=True)
class Architecture:
    """One sampled cell. ``predecessors[i]`` is the (1-based) input node of
    node ``i + 2``; ``activations[i]`` belongs to node ``i + 1``."""

    n_nodes: int
    activations: tuple[Activation, ...]
    predecessors: tuple[int, ...]

    def to_actions(self) -> list[int]:
        """Flatten to the controller's action sequence, length 2n - 1.

        Activation steps carry the activation ordinal; predecessor steps
        carry the predecessor as a 0-based choice index (node j -> j - 1).
        """
        actions = [int(self.activations[0])]
        for i in range(2, self.n_nodes + 1):
            actions.append(self.predecessors[i - 2] - 1)
            actions.append(int(self.activations[i - 1]))
        return actions

    @staticmethod
    def from_actions(space: SearchSpace, actions) -> "Architecture":
        schema = decision_schema(space)
        actions = list(actions)
        if len(actions) != len(schema):
            raise InvalidArchitectureError(
                f"expected {len(schema)} actions for n={space.n_nodes}, got {len(actions)}"
            )
        acts: list[Activation] = []
        preds: list[int] = []
        for step, action in zip(schema, actions):
            if not 0 <= action < step.choices:
                raise InvalidArchitectureError(
                    f"action {action} out of range at step {step.index} ({step.kind})"
                )
            if step.kind == "activation":
                acts.append(Activation(action))
            else:
                preds.append(action + 1)
        arch = Architecture(space.n_nodes, tuple(acts), tuple(preds))
        validate(arch)
        return arch


class SchemaStep(NamedTuple):
    index: int  # 1-based position in the action sequence
    kind: str  # "activation" | "predecessor"
    choices: int


def decision_schema(space: SearchSpace) -> list[SchemaStep]:
    """Per-step decision layout: activation for node 1, then (predecessor,
    activation) for each node 2..n; 2n - 1 steps in total."""
    steps = [SchemaStep(1, "activation", N_ACTIVATIONS)]
    for node in range(2, space.n_nodes + 1):
        steps.append(SchemaStep(len(steps) + 1, "predecessor", node - 1))
        steps.append(SchemaStep(len(steps) + 1, "activation", N_ACTIVATIONS))
    return steps


def space_size(space: SearchSpace) -> int:
    """Exact number of distinct cells: 4^n * (n-1)!."""
    return N_ACTIVATIONS ** space.n_nodes * math.factorial(space.n_nodes - 1)


def random_architecture(rng: Rng, space: SearchSpace) -> Architecture:
    """Sample every schema step uniformly and independently."""
    actions = []
    for step in decision_schema(space):
        uniform = [1.0 / step.choices] * step.choices
        actions.append(sample_categorical(rng, uniform))
    return Architecture.from_actions(space, actions)


def validate(arch: Architecture) -> None:
    """Raise InvalidArchitectureError on the first violated invariant."""
    if arch.n_nodes < 1:
        raise InvalidArchitectureError("n_nodes must be >= 1")
    if len(arch.activations) != arch.n_nodes:
        raise InvalidArchitectureError(
            f"expected {arch.n_nodes} activations, got {len(arch.activations)}"
        )
    if len(arch.predecessors) != arch.n_nodes - 1:
        raise InvalidArchitectureError(
            f"expected {arch.n_nodes - 1} predecessors, got {len(arch.predecessors)}"
        )
    for pos, act in enumerate(arch.activations, start=1):
        if not 0 <= int(act) < N_ACTIVATIONS:
            raise InvalidArchitectureError(f"node {pos}: unknown activation {act!r}")
    for node in range(2, arch.n_nodes + 1):
        pred = arch.predecessors[node - 2]
        if not 1 <= pred < node:
            raise InvalidArchitectureError(
                f"node {node}: predecessor must be < node index (got {pred})"
            )


def codec(arch: Architecture) -> str:
    """Canonical one-line text form, e.g. ``tanh 1:relu 2:tanh``."""
    validate(arch)
    tokens = [ACTIVATION_NAMES[arch.activations[0]]]
    for node in range(2, arch.n_nodes + 1):
        pred = arch.predecessors[node - 2]
        tokens.append(f"{pred}:{ACTIVATION_NAMES[arch.activations[node - 1]]}")
    return " ".join(tokens)


def parse(text: str, space: SearchSpace) -> Architecture:
    """Inverse of :func:`codec`; rejects malformed or out-of-space strings."""
    tokens = text.split()
    if len(tokens) != space.n_nodes:
        raise InvalidArchitectureError(
            f"expected {space.n_nodes} tokens for n={space.n_nodes}, got {len(tokens)}"
        )
    acts = [_parse_activation(tokens[0], node=1)]
    preds = []
    for node, token in enumerate(tokens[1:], start=2):
        head, sep, tail = token.partition(":")
        if not sep:
            raise InvalidArchitectureError(f"node {node}: expected '<pred>:<activation>', got {token!r}")
        try:
            pred = int(head)
        except ValueError:
            raise InvalidArchitectureError(f"node {node}: bad predecessor {head!r}") from None
        if not 1 <= pred < node:
            raise InvalidArchitectureError(
                f"node {node}: predecessor must be < node index (got {pred})"
            )
        preds.append(pred)
        acts.append(_parse_activation(tail, node=node))
    arch = Architecture(space.n_nodes, tuple(acts), tuple(preds))
    validate(arch)
    return arch


def _parse_activation(name: str, node: int) -> Activation:
    try:
        return _NAME_TO_ACTIVATION[name]
    except KeyError:
        raise InvalidArchitectureError(f"node {node}: unknown activation {name!r}") from None


def to_json(arch: Architecture) -> str:
    """JSON form: {"n": int, "nodes": [{"act": str}, {"prev": int, "act": str}, ...]}."""
    validate(arch)
    nodes: list[dict] = [{"act": ACTIVATION_NAMES[arch.activations[0]]}]
    for node in range(2, arch.n_nodes + 1):
        nodes.append(
            {
                "prev": arch.predecessors[node - 2],
                "act": ACTIVATION_NAMES[arch.activations[node - 1]],
            }
        )
    return json.dumps({"n": arch.n_nodes, "nodes": nodes})


def from_json(text: str, space: SearchSpace) -> Architecture:
    doc = json.loads(text)
    if doc.get("n") != space.n_nodes:
        raise InvalidArchitectureError(f"expected n={space.n_nodes}, got {doc.get('n')!r}")
    nodes = doc.get("nodes")
    if not isinstance(nodes, list) or len(nodes) != space.n_nodes:
        raise InvalidArchitectureError("nodes must list one entry per node")
    acts = [_parse_activation(str(nodes[0].get("act")), node=1)]
    preds = []
    for node, entry in enumerate(nodes[1:], start=2):
        pred = entry.get("prev")
        if not isinstance(pred, int) or not 1 <= pred < node:
            raise InvalidArchitectureError(
                f"node {node}: predecessor must be < node index (got {pred!r})"
            )
        preds.append(pred)
        acts.append(_parse_activation(str(entry.get("act")), node=node))
    arch = Architecture(space.n_nodes, tuple(acts), tuple(preds))
    validate(arch)
    return arch


def edge_set(arch: Architecture) -> set[tuple[int, int]]:
    """Directed edges (predecessor, node); exactly n - 1 of them."""
    validate(arch)
    return {(arch.predecessors[node - 2], node) for node in range(2, arch.n_nodes + 1)}


def leaf_set(arch: Architecture) -> set[int]:
    """Nodes never chosen as a predecessor; the cell output averages these."""
    validate(arch)
    used = set(arch.predecessors)
    return {node for node in range(1, arch.n_nodes + 1) if node not in used}
