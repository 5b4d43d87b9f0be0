"""Arithmetic-circuit compilation of Bayesian networks and second-order queries.

A network is compiled by variable elimination into a circuit whose leaves
are state indicators and table parameters. Evaluating the circuit with the
indicators of evidence-inconsistent states set to 0 gives p(e); one backward
pass gives the derivative of the root with respect to every node.

Evaluation is batched: one forward/backward sweep evaluates several
indicator settings at once (the evidence alone plus the evidence extended by
each state of each queried variable), which is what the second-order query
needs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CapacityError, InconsistentEvidenceError
from .model import (
    Evidence,
    MarginalEstimate,
    NetworkStructure,
    RowMoments,
    UncertainNetwork,
    moments_of,
    parent_config_index,
)

INDICATOR, PARAMETER, SUM, PRODUCT = 0, 1, 2, 3
KIND_NAMES = {INDICATOR: "indicator", PARAMETER: "parameter", SUM: "sum", PRODUCT: "product"}
MAX_FACTOR_ENTRIES = 2**25
DUMP_HEADER = "sobn.spn 1"


@dataclass(frozen=True)
class Spn:
    """Compiled circuit; node ids are a topological order (children first).

    ``leaf[i]`` is ``(variable, state)`` for indicators and
    ``(variable, row, state)`` for parameters. ``flat[i]`` is the position of
    a leaf in the flattened indicator or parameter vector.
    """

    structure: NetworkStructure
    kinds: np.ndarray
    children: tuple[tuple[int, ...], ...]
    leaf: tuple[tuple[int, ...] | None, ...]
    flat: np.ndarray
    root: int
    indicator_offsets: tuple[int, ...]
    parameter_offsets: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.kinds)

    @property
    def n_edges(self) -> int:
        return sum(len(c) for c in self.children)

    @property
    def n_indicators(self) -> int:
        return self.indicator_offsets[-1]

    @property
    def n_parameters(self) -> int:
        return self.parameter_offsets[-1]


def default_elimination_order(structure: NetworkStructure) -> list[int]:
    """Reverse topological elimination, ties broken by fewest fill-in edges.

    A variable becomes eligible once all of its children are eliminated;
    among eligible variables the one adding the fewest edges to the current
    interaction graph goes first (then the one latest in topological order).
    """
    n = structure.n_variables
    neighbors = [set() for _ in range(n)]
    for node in range(n):
        scope = structure.parents[node] + (node,)
        for a in scope:
            neighbors[a].update(b for b in scope if b != a)
    position = {v: k for k, v in enumerate(structure.topological_order)}
    remaining_children = [len(structure.children[v]) for v in range(n)]
    eliminated = set()
    order = []
    while len(order) < n:
        eligible = [v for v in range(n) if v not in eliminated and remaining_children[v] == 0]

        def fill(v):
            nb = sorted(neighbors[v])
            return sum(1 for a, b in itertools.combinations(nb, 2) if b not in neighbors[a])

        best = min(eligible, key=lambda v: (fill(v), -position[v]))
        nb = neighbors[best]
        for a in nb:
            neighbors[a].discard(best)
            neighbors[a].update(b for b in nb if b != a)
        neighbors[best] = set()
        eliminated.add(best)
        order.append(best)
        for p in structure.parents[best]:
            remaining_children[p] -= 1
    return order


class _Builder:
    def __init__(self):
        self.kinds = []
        self.children = []
        self.leaf = []
        self.cache = {}

    def add(self, kind, children=(), leaf=None):
        key = (kind, children, leaf)
        node = self.cache.get(key)
        if node is None:
            node = len(self.kinds)
            self.kinds.append(kind)
            self.children.append(children)
            self.leaf.append(leaf)
            self.cache[key] = node
        return node

    def product(self, children):
        children = tuple(sorted(children))
        if len(children) == 1:
            return children[0]
        return self.add(PRODUCT, children)

    def sum(self, children):
        return self.add(SUM, tuple(children))


def compile_spn(structure: NetworkStructure, order: Sequence[int] | None = None) -> Spn:
    """Compile ``structure`` into a circuit by eliminating variables in ``order``."""
    order = default_elimination_order(structure) if order is None else list(order)
    if sorted(order) != list(range(structure.n_variables)):
        raise ValueError("elimination order must be a permutation of the variables")
    cards = structure.cardinalities
    b = _Builder()
    factors = []
    for node in range(structure.n_variables):
        scope = structure.parents[node] + (node,)
        pcards = structure.parent_cardinalities(node)
        table = np.empty(tuple(cards[v] for v in scope), dtype=np.int64)
        for idx in np.ndindex(table.shape):
            row = parent_config_index(idx[:-1], pcards)
            indicator = b.add(INDICATOR, leaf=(node, idx[-1]))
            parameter = b.add(PARAMETER, leaf=(node, row, idx[-1]))
            table[idx] = b.product((indicator, parameter))
        factors.append((scope, table))

    for var in order:
        involved = [f for f in factors if var in f[0]]
        factors = [f for f in factors if var not in f[0]]
        union = sorted(set().union(*(f[0] for f in involved)))
        total = int(np.prod([cards[v] for v in union], dtype=np.int64))
        if total > MAX_FACTOR_ENTRIES:
            raise CapacityError(f"intermediate factor with {total} entries exceeds {MAX_FACTOR_ENTRIES}")
        scope = tuple(v for v in union if v != var)
        table = np.empty(tuple(cards[v] for v in scope), dtype=np.int64)
        for idx in np.ndindex(table.shape):
            assign = dict(zip(scope, idx))
            terms = []
            for state in range(cards[var]):
                assign[var] = state
                terms.append(b.product([t[tuple(assign[v] for v in s)] for s, t in involved]))
            table[idx] = b.sum(terms)
        factors.append((scope, table))
    root = b.product([int(t[()]) for _, t in factors])

    ind_off = [0]
    par_off = [0]
    for node in range(structure.n_variables):
        ind_off.append(ind_off[-1] + cards[node])
        par_off.append(par_off[-1] + structure.n_rows(node) * cards[node])
    flat = np.full(len(b.kinds), -1, dtype=np.int64)
    for i, (kind, leaf) in enumerate(zip(b.kinds, b.leaf)):
        if kind == INDICATOR:
            flat[i] = ind_off[leaf[0]] + leaf[1]
        elif kind == PARAMETER:
            v, row, state = leaf
            flat[i] = par_off[v] + row * cards[v] + state
    return Spn(
        structure,
        np.array(b.kinds, dtype=np.int8),
        tuple(b.children),
        tuple(b.leaf),
        flat,
        root,
        tuple(ind_off),
        tuple(par_off),
    )


def flatten_parameters(tables: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(t, dtype=float).reshape(-1) for t in tables])


def indicator_settings(spn: Spn, evidence: Evidence, clamps: Sequence[tuple[int, int]] = ()) -> np.ndarray:
    """Indicator matrix, one row for ``evidence`` then one per extra clamp.

    Each clamp ``(variable, state)`` is applied on top of the evidence.
    """
    structure = spn.structure
    base = np.ones(spn.n_indicators)
    for var, state in structure.check_evidence(evidence).items():
        off = spn.indicator_offsets[var]
        base[off : off + structure.variables[var].cardinality] = 0.0
        base[off + state] = 1.0
    rows = [base]
    for var, state in clamps:
        row = base.copy()
        off = spn.indicator_offsets[var]
        row[off : off + structure.variables[var].cardinality] = 0.0
        row[off + state] = base[off + state]
        rows.append(row)
    return np.array(rows)


def forward(spn: Spn, parameters: np.ndarray, indicators: np.ndarray) -> np.ndarray:
    """Node values for every indicator setting: shape ``(n_nodes, batch)``.

    ``parameters`` is the flattened table vector, ``indicators`` is
    ``(batch, n_indicators)`` or a single setting.
    """
    indicators = np.atleast_2d(indicators)
    batch = indicators.shape[0]
    values = np.empty((spn.size, batch))
    kinds, children, flat = spn.kinds, spn.children, spn.flat
    for i in range(spn.size):
        kind = kinds[i]
        if kind == INDICATOR:
            values[i] = indicators[:, flat[i]]
        elif kind == PARAMETER:
            values[i] = parameters[flat[i]]
        elif kind == SUM:
            values[i] = values[list(children[i])].sum(axis=0)
        else:
            values[i] = values[list(children[i])].prod(axis=0)
    return values


def evidence_probability(spn: Spn, parameters: np.ndarray, evidence: Evidence) -> float:
    return float(forward(spn, parameters, indicator_settings(spn, evidence))[spn.root, 0])


@dataclass(frozen=True)
class SpnEvaluation:
    """Forward values and root derivatives per node, each ``(n_nodes, batch)``."""

    values: np.ndarray
    derivatives: np.ndarray

    def root_values(self, spn: Spn) -> np.ndarray:
        return self.values[spn.root]


def backward(spn: Spn, values: np.ndarray) -> SpnEvaluation:
    """Derivative of the root with respect to every node value."""
    grads = np.zeros_like(values)
    grads[spn.root] = 1.0
    kinds, children = spn.kinds, spn.children
    for i in range(spn.size - 1, -1, -1):
        kind = kinds[i]
        if kind == SUM:
            for c in children[i]:
                grads[c] += grads[i]
        elif kind == PRODUCT:
            ch = children[i]
            vals = values[list(ch)]
            # product of siblings via prefix/suffix products (zero-safe)
            prefix = np.cumprod(np.vstack([np.ones_like(vals[:1]), vals[:-1]]), axis=0)
            suffix = np.vstack([np.cumprod(vals[:0:-1], axis=0)[::-1], np.ones_like(vals[:1])])
            for k, c in enumerate(ch):
                grads[c] += grads[i] * prefix[k] * suffix[k]
    return SpnEvaluation(values, grads)


def parameter_gradients(spn: Spn, evaluation: SpnEvaluation) -> np.ndarray:
    """d root / d theta for every flattened parameter: ``(n_parameters, batch)``."""
    out = np.zeros((spn.n_parameters, evaluation.values.shape[1]))
    mask = spn.kinds == PARAMETER
    np.add.at(out, spn.flat[mask], evaluation.derivatives[mask])
    return out


def joint_marginals(spn: Spn, parameters: np.ndarray, evidence: Evidence) -> list[np.ndarray]:
    """p(y, e) for every state of every unobserved variable from one backward pass.

    Uses p(y, e) = sum over parent configurations x of theta_{y|x} times
    d p(e) / d theta_{y|x}. Observed variables get p(e) on their observed
    state.
    """
    structure = spn.structure
    evidence = structure.check_evidence(evidence)
    values = forward(spn, parameters, indicator_settings(spn, evidence))
    grads = parameter_gradients(spn, backward(spn, values))[:, 0]
    out = []
    for v in range(structure.n_variables):
        card = structure.variables[v].cardinality
        lo, hi = spn.parameter_offsets[v], spn.parameter_offsets[v + 1]
        contrib = (grads[lo:hi] * parameters[lo:hi]).reshape(-1, card).sum(axis=0)
        out.append(contrib)
    return out


def sospn_query(
    uncertain: UncertainNetwork,
    evidence: Evidence,
    spn: Spn | None = None,
    moments: Sequence[RowMoments] | None = None,
) -> list[MarginalEstimate]:
    """Posterior means and delta-method covariances of p(Y | e) for every variable.

    Each query g(theta) = p(y, e) / p(e) is differentiated through the
    circuit; its covariance is the sum over independent table rows of
    J_row sigma_row J_row^T. ``moments`` overrides the Dirichlet row moments.
    """
    structure = uncertain.structure
    evidence = structure.check_evidence(evidence)
    spn = compile_spn(structure) if spn is None else spn
    moments = moments_of(uncertain) if moments is None else moments
    theta = flatten_parameters([m.means for m in moments])
    queried = [v for v in range(structure.n_variables) if v not in evidence]
    clamps = [(v, s) for v in queried for s in range(structure.variables[v].cardinality)]
    settings = indicator_settings(spn, evidence, clamps)
    values = forward(spn, theta, settings)
    p = values[spn.root]
    p_e = p[0]
    if not p_e > 0:
        raise InconsistentEvidenceError("evidence has probability zero at the mean parameters")
    grads = parameter_gradients(spn, backward(spn, values))
    # gradient of p(y, e) / p(e), one column per clamp
    jac = (p_e * grads[:, 1:] - p[1:][None, :] * grads[:, :1]) / p_e**2
    out = []
    column = 0
    for v in range(structure.n_variables):
        card = structure.variables[v].cardinality
        if v in evidence:
            mean = np.zeros(card)
            mean[evidence[v]] = 1.0
            out.append(MarginalEstimate(v, mean, np.zeros((card, card))))
            continue
        block = jac[:, column : column + card]
        mean = p[1 + column : 1 + column + card] / p_e
        column += card
        cov = np.zeros((card, card))
        for u, m in enumerate(moments):
            lo, hi = spn.parameter_offsets[u], spn.parameter_offsets[u + 1]
            g = block[lo:hi].T.reshape(card, m.n_rows, -1)
            cov += np.einsum("ark,rkl,brl->ab", g, m.covs, g)
        out.append(MarginalEstimate(v, mean, 0.5 * (cov + cov.T)))
    return out


def dump(spn: Spn) -> str:
    """Versioned text listing: one node per line, children by id."""
    names = [v.name for v in spn.structure.variables]
    lines = [DUMP_HEADER, f"nodes {spn.size} edges {spn.n_edges}"]
    for i in range(spn.size):
        kind = int(spn.kinds[i])
        if kind == INDICATOR:
            v, s = spn.leaf[i]
            args = f"{names[v]} {s}"
        elif kind == PARAMETER:
            v, row, s = spn.leaf[i]
            args = f"{names[v]} {row} {s}"
        else:
            args = " ".join(str(c) for c in spn.children[i])
        lines.append(f"{i} {KIND_NAMES[kind]} {args}")
    lines.append(f"root {spn.root}")
    return "\n".join(lines) + "\n"
