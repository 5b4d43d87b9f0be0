"""Pearl's pi/lambda belief propagation on a loopy round-based schedule.

Every directed message (pi from parent to child, lambda from child to parent)
is updated once per round in a fresh random order. A node recomputes its
internal pi (lambda) value as soon as all of its incoming pi (lambda)
messages have been updated in the current round. Rounds repeat until the
largest absolute change of any message mean is at most ``epsilon``.

Messages are kept at a fixed scale: pi-messages are normalized to sum to one
and lambda-messages are rescaled so that their largest entry is one. Beliefs
are invariant to both.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InconsistentEvidenceError
from .model import ConcreteNetwork, Evidence, NetworkStructure, RowMoments, point_moments

PI = "pi"
LAMBDA = "lambda"


class MessageKey(NamedTuple):
    kind: str
    source: int
    target: int


@dataclass(frozen=True)
class ConvergenceReport:
    rounds: int
    max_delta: float
    converged: bool


@lru_cache(maxsize=None)
def parent_configurations(parent_cards: tuple[int, ...]) -> tuple[np.ndarray, ...]:
    """For each parent i, the state of parent i in every table row (mixed radix)."""
    n_rows = int(np.prod(parent_cards, dtype=np.int64))
    configs = np.array(list(np.ndindex(*parent_cards)), dtype=np.intp).reshape(n_rows, len(parent_cards))
    columns = tuple(np.ascontiguousarray(configs[:, i]) for i in range(len(parent_cards)))
    for c in columns:
        c.setflags(write=False)
    return columns


@lru_cache(maxsize=None)
def parent_selectors(parent_cards: tuple[int, ...]) -> tuple[np.ndarray, ...]:
    """For each parent i, the 0/1 matrix (card_i, n_rows) mapping rows to parent states."""
    out = []
    for card, column in zip(parent_cards, parent_configurations(parent_cards)):
        sel = np.zeros((card, column.size))
        sel[column, np.arange(column.size)] = 1.0
        sel.setflags(write=False)
        out.append(sel)
    return tuple(out)


def parent_weights(messages: Sequence[np.ndarray | None], parent_cards: Sequence[int], skip: Sequence[int] = ()) -> np.ndarray:
    """Product of parent message entries for every table row.

    Entry r is the product over parents i not in ``skip`` of
    ``messages[i][x_i]`` where x is the parent configuration of row r.
    """
    columns = parent_configurations(tuple(parent_cards))
    w = None
    for i, column in enumerate(columns):
        if i in skip:
            continue
        term = messages[i][column]
        w = term if w is None else w * term
    if w is None:
        return np.ones(int(np.prod(parent_cards, dtype=np.int64)))
    return w


def internal_pi(table: np.ndarray, parent_messages: Sequence[np.ndarray], parent_cards: Sequence[int] = ()) -> np.ndarray:
    """Internal pi value: sum over parent configurations of row times message product.

    ``table`` is the (n_rows, card) table of row means.
    """
    if not parent_messages:
        return np.array(table[0], dtype=float)
    return parent_weights(parent_messages, parent_cards) @ table


def internal_lambda(child_messages: Sequence[np.ndarray], cardinality: int) -> np.ndarray:
    """Elementwise product of incoming lambda-messages; all ones for a leaf."""
    out = np.ones(cardinality)
    for m in child_messages:
        out = out * m
    return out


def pi_message(internal: np.ndarray, other_lambda: Sequence[np.ndarray]) -> np.ndarray:
    """Pi-message to one child: internal pi times lambda-messages of the other children."""
    out = np.array(internal, dtype=float)
    for m in other_lambda:
        out = out * m
    return out


def lambda_message(
    internal: np.ndarray,
    table: np.ndarray,
    parent_messages: Sequence[np.ndarray | None],
    parent: int,
    parent_cards: Sequence[int],
) -> np.ndarray:
    """Lambda-message to parent number ``parent`` (its position in the parent list).

    The entry of ``parent_messages`` at ``parent`` is ignored.
    """
    parent_cards = tuple(parent_cards)
    w = parent_weights(parent_messages, parent_cards, skip=(parent,))
    return parent_selectors(parent_cards)[parent] @ (w * (table @ internal))


def belief(internal_pi_value: np.ndarray, internal_lambda_value: np.ndarray) -> np.ndarray:
    product = internal_pi_value * internal_lambda_value
    total = product.sum()
    if not total > 0:
        raise InconsistentEvidenceError("belief has zero total mass")
    return product / total


def one_hot(state: int, cardinality: int) -> np.ndarray:
    out = np.zeros(cardinality)
    out[state] = 1.0
    return out


class LoopyPropagation:
    """Round-based message schedule shared by the first- and second-order engines.

    Subclasses decide what a message is (a vector, or a mean with covariance)
    by implementing the ``_compute_*`` hooks and :meth:`_mean`.
    """

    def __init__(self, structure: NetworkStructure, moments: Sequence[RowMoments], evidence: Evidence):
        self.structure = structure
        self.evidence = structure.check_evidence(evidence)
        self.moments = moments
        cards = structure.cardinalities
        self.parent_cards = [structure.parent_cardinalities(i) for i in range(structure.n_variables)]
        self.keys = [MessageKey(PI, p, c) for p, c in structure.edges] + [
            MessageKey(LAMBDA, c, p) for p, c in structure.edges
        ]
        self.pi_msg = {(p, c): self._initial(np.full(cards[p], 1.0 / cards[p])) for p, c in structure.edges}
        self.lambda_msg = {(p, c): self._initial(np.ones(cards[p])) for p, c in structure.edges}
        self.internal_pi = [None] * structure.n_variables
        self.internal_lambda = [None] * structure.n_variables
        for node in range(structure.n_variables):
            if node in self.evidence:
                clamp = one_hot(self.evidence[node], cards[node])
                self.internal_pi[node] = self._initial(clamp)
                self.internal_lambda[node] = self._initial(clamp.copy())
            else:
                self._update_internal_pi(node)
                self._update_internal_lambda(node)
        self.rounds = 0

    # -- hooks -----------------------------------------------------------
    def _initial(self, mean: np.ndarray):
        raise NotImplementedError

    def _mean(self, message) -> np.ndarray:
        raise NotImplementedError

    def _compute_internal_pi(self, node, parent_messages):
        raise NotImplementedError

    def _compute_internal_lambda(self, node, child_messages):
        raise NotImplementedError

    def _compute_pi_message(self, internal, other_lambda):
        raise NotImplementedError

    def _compute_lambda_message(self, node, internal, parent_messages, position):
        raise NotImplementedError

    # -- updates ---------------------------------------------------------
    def _update_internal_pi(self, node):
        parents = self.structure.parents[node]
        self.internal_pi[node] = self._compute_internal_pi(node, [self.pi_msg[(p, node)] for p in parents])

    def _update_internal_lambda(self, node):
        children = self.structure.children[node]
        self.internal_lambda[node] = self._compute_internal_lambda(
            node, [self.lambda_msg[(node, c)] for c in children]
        )

    def _update_pi_message(self, parent, child):
        others = [self.lambda_msg[(parent, c)] for c in self.structure.children[parent] if c != child]
        self.pi_msg[(parent, child)] = self._compute_pi_message(self.internal_pi[parent], others)

    def _update_lambda_message(self, child, parent):
        parents = self.structure.parents[child]
        position = parents.index(parent)
        messages = [None if p == parent else self.pi_msg[(p, child)] for p in parents]
        self.lambda_msg[(parent, child)] = self._compute_lambda_message(
            child, self.internal_lambda[child], messages, position
        )

    def message_means(self) -> np.ndarray:
        parts = [self._mean(self.pi_msg[(k.source, k.target)]) for k in self.keys if k.kind == PI]
        parts += [self._mean(self.lambda_msg[(k.target, k.source)]) for k in self.keys if k.kind == LAMBDA]
        return np.concatenate(parts) if parts else np.zeros(0)

    def run_round(self, rng: np.random.Generator):
        s = self.structure
        pi_seen = [0] * s.n_variables
        lambda_seen = [0] * s.n_variables
        for k in rng.permutation(len(self.keys)):
            key = self.keys[k]
            if key.kind == PI:
                self._update_pi_message(key.source, key.target)
                node = key.target
                pi_seen[node] += 1
                if pi_seen[node] == len(s.parents[node]) and node not in self.evidence:
                    self._update_internal_pi(node)
            else:
                self._update_lambda_message(key.source, key.target)
                node = key.target
                lambda_seen[node] += 1
                if lambda_seen[node] == len(s.children[node]) and node not in self.evidence:
                    self._update_internal_lambda(node)
        self.rounds += 1

    def run(self, epsilon: float, max_rounds: int, rng: np.random.Generator) -> ConvergenceReport:
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        current = self.message_means()
        # the reference snapshot starts at zero
        delta = float(np.max(np.abs(current))) if current.size else 0.0
        while delta > epsilon and self.rounds < max_rounds:
            previous = current
            self.run_round(rng)
            current = self.message_means()
            delta = float(np.max(np.abs(current - previous)))
        return ConvergenceReport(self.rounds, delta, delta <= epsilon)


class BeliefPropagation(LoopyPropagation):
    """First-order engine: messages are plain vectors."""

    def _initial(self, mean):
        return np.asarray(mean, dtype=float)

    def _mean(self, message):
        return message

    def _compute_internal_pi(self, node, parent_messages):
        return internal_pi(self.moments[node].means, parent_messages, self.parent_cards[node])

    def _compute_internal_lambda(self, node, child_messages):
        return internal_lambda(child_messages, self.structure.variables[node].cardinality)

    def _compute_pi_message(self, internal, other_lambda):
        m = pi_message(internal, other_lambda)
        total = m.sum()
        return m / total if total > 0 else m

    def _compute_lambda_message(self, node, internal, parent_messages, position):
        m = lambda_message(internal, self.moments[node].means, parent_messages, position, self.parent_cards[node])
        top = m.max()
        return m / top if top > 0 else m

    def beliefs(self) -> list[np.ndarray]:
        return [belief(p, l) for p, l in zip(self.internal_pi, self.internal_lambda)]


@dataclass(frozen=True)
class BPResult:
    beliefs: list[np.ndarray]
    report: ConvergenceReport


def run_bp(
    bn: ConcreteNetwork,
    evidence: Evidence,
    epsilon: float = 1e-8,
    max_rounds: int = 200,
    rng: np.random.Generator | None = None,
) -> BPResult:
    """Loopy belief propagation; exact on polytrees."""
    rng = np.random.default_rng(0) if rng is None else rng
    engine = BeliefPropagation(bn.structure, point_moments(bn), evidence)
    report = engine.run(epsilon, max_rounds, rng)
    return BPResult(engine.beliefs(), report)
