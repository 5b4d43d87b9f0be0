"""Discrete Bayesian networks with point-valued or Dirichlet-distributed tables.

Conditional tables are stored as 2-D arrays with one row per parent
configuration. Rows are addressed with a mixed-radix index over the parent
cardinalities, first-listed parent most significant; every other module relies
on this convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import CycleError, DomainError, StructureError

Evidence = Mapping[int, int]


def parent_config_index(parent_states: Sequence[int], parent_cardinalities: Sequence[int]) -> int:
    """Row index of a parent configuration (first parent most significant)."""
    if len(parent_states) != len(parent_cardinalities):
        raise StructureError(
            f"got {len(parent_states)} parent states for {len(parent_cardinalities)} parents"
        )
    index = 0
    for state, card in zip(parent_states, parent_cardinalities):
        if not 0 <= state < card:
            raise StructureError(f"parent state {state} out of range for cardinality {card}")
        index = index * card + int(state)
    return index


def parent_config_states(index: int, parent_cardinalities: Sequence[int]) -> tuple[int, ...]:
    """Inverse of :func:`parent_config_index`."""
    n_rows = int(np.prod(parent_cardinalities, dtype=np.int64))
    if not 0 <= index < n_rows:
        raise StructureError(f"row index {index} out of range for {n_rows} rows")
    states = []
    for card in reversed(parent_cardinalities):
        index, state = divmod(index, card)
        states.append(state)
    return tuple(reversed(states))


def _check_alpha(alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim < 1 or not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise DomainError(f"Dirichlet parameters must be finite and positive, got {alpha}")
    return alpha


def dirichlet_mean(alpha) -> np.ndarray:
    """Mean of Dirichlet(alpha); works row-wise on 2-D input."""
    alpha = _check_alpha(alpha)
    return alpha / alpha.sum(axis=-1, keepdims=True)


def dirichlet_covariance(alpha) -> np.ndarray:
    """Covariance matrix of Dirichlet(alpha).

    Entry (k, l) is mu_k (delta_kl - mu_l) / (S + 1) with S the Dirichlet
    strength. A 2-D ``alpha`` gives a stack of matrices, one per row.
    """
    alpha = _check_alpha(alpha)
    strength = alpha.sum(axis=-1, keepdims=True)
    mu = alpha / strength
    eye = np.eye(alpha.shape[-1])
    cov = mu[..., :, None] * (eye - mu[..., None, :])
    cov /= (strength + 1.0)[..., None]
    # exact symmetry; the product above is symmetric only up to round-off
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


@dataclass(frozen=True)
class Variable:
    id: int
    name: str
    cardinality: int
    state_names: tuple[str, ...]

    def __post_init__(self):
        if self.cardinality < 2:
            raise StructureError(f"variable {self.name!r} needs at least 2 states")
        if len(self.state_names) != self.cardinality:
            raise StructureError(f"variable {self.name!r}: state names do not match cardinality")
        if len(set(self.state_names)) != len(self.state_names):
            raise StructureError(f"variable {self.name!r} has duplicate state names")


def make_variables(names: Sequence[str], cardinalities: Sequence[int]) -> tuple[Variable, ...]:
    """Variables with state names ``"0"``, ``"1"``, ..."""
    return tuple(
        Variable(i, name, card, tuple(str(s) for s in range(card)))
        for i, (name, card) in enumerate(zip(names, cardinalities))
    )


@dataclass(frozen=True)
class NetworkStructure:
    """A DAG over discrete variables with ordered parent lists."""

    variables: tuple[Variable, ...]
    parents: tuple[tuple[int, ...], ...]
    children: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    topological_order: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        variables = tuple(self.variables)
        parents = tuple(tuple(int(p) for p in ps) for ps in self.parents)
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "parents", parents)
        n = len(variables)
        if len(parents) != n:
            raise StructureError("one parent list per variable is required")
        names = [v.name for v in variables]
        if len(set(names)) != n:
            raise StructureError("variable names must be unique")
        for i, v in enumerate(variables):
            if v.id != i:
                raise StructureError(f"variable {v.name!r} has id {v.id}, expected {i}")
        children = [[] for _ in range(n)]
        for child, ps in enumerate(parents):
            if len(set(ps)) != len(ps):
                raise StructureError(f"variable {names[child]!r} lists a parent twice")
            for p in ps:
                if not 0 <= p < n or p == child:
                    raise StructureError(f"invalid parent {p} for variable {names[child]!r}")
                children[p].append(child)
        object.__setattr__(self, "children", tuple(tuple(c) for c in children))
        object.__setattr__(self, "topological_order", self._toposort())

    def _toposort(self) -> tuple[int, ...]:
        indegree = [len(ps) for ps in self.parents]
        ready = [i for i, d in enumerate(indegree) if d == 0]
        order = []
        while ready:
            node = ready.pop(0)
            order.append(node)
            for c in self.children[node]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    ready.append(c)
        if len(order) != len(self.variables):
            stuck = [self.variables[i].name for i, d in enumerate(indegree) if d > 0]
            raise CycleError(f"directed cycle through {stuck}")
        return tuple(order)

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(v.cardinality for v in self.variables)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(p, c) for c, ps in enumerate(self.parents) for p in ps]

    def parent_cardinalities(self, node: int) -> tuple[int, ...]:
        return tuple(self.variables[p].cardinality for p in self.parents[node])

    def n_rows(self, node: int) -> int:
        return int(np.prod(self.parent_cardinalities(node), dtype=np.int64))

    def degree(self, node: int) -> int:
        return len(self.parents[node]) + len(self.children[node])

    def index_of(self, name: str) -> int:
        for v in self.variables:
            if v.name == name:
                return v.id
        raise StructureError(f"unknown variable {name!r}")

    def is_polytree(self) -> bool:
        """True when the underlying undirected graph is a forest."""
        root = list(range(self.n_variables))

        def find(i):
            while root[i] != i:
                root[i] = root[root[i]]
                i = root[i]
            return i

        for p, c in self.edges:
            a, b = find(p), find(c)
            if a == b:
                return False
            root[a] = b
        return True

    def check_evidence(self, evidence: Evidence) -> dict[int, int]:
        checked = {}
        for var, state in evidence.items():
            var, state = int(var), int(state)
            if not 0 <= var < self.n_variables:
                raise StructureError(f"evidence on unknown variable {var}")
            if not 0 <= state < self.variables[var].cardinality:
                raise StructureError(
                    f"evidence state {state} out of range for {self.variables[var].name!r}"
                )
            checked[var] = state
        return checked


def _frozen(array) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def _check_table_shapes(structure: NetworkStructure, tables) -> tuple[np.ndarray, ...]:
    if len(tables) != structure.n_variables:
        raise StructureError("one table per variable is required")
    frozen = []
    for i, table in enumerate(tables):
        table = _frozen(table)
        expected = (structure.n_rows(i), structure.variables[i].cardinality)
        if table.shape != expected:
            raise StructureError(
                f"table of {structure.variables[i].name!r} has shape {table.shape}, expected {expected}"
            )
        frozen.append(table)
    return tuple(frozen)


class _Network:
    structure: NetworkStructure
    tables: tuple[np.ndarray, ...]

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return self.structure == other.structure and all(
            np.array_equal(a, b) for a, b in zip(self.tables, other.tables)
        )

    def __hash__(self):
        return hash((type(self), self.structure))

    def __repr__(self):
        return f"{type(self).__name__}({self.structure.n_variables} variables, {len(self.structure.edges)} edges)"


class ConcreteNetwork(_Network):
    """Bayesian network with point-valued conditional probability tables."""

    def __init__(self, structure: NetworkStructure, tables: Sequence):
        self.structure = structure
        self.tables = _check_table_shapes(structure, tables)
        for i, table in enumerate(self.tables):
            if np.any(table < 0) or not np.all(np.isfinite(table)):
                raise DomainError(f"table of {structure.variables[i].name!r} has invalid entries")
            if np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-12):
                raise DomainError(f"rows of {structure.variables[i].name!r} do not sum to 1")


class UncertainNetwork(_Network):
    """Bayesian network whose table rows are independent Dirichlet variables.

    ``tables`` holds the alpha parameters, one row per parent configuration.
    """

    def __init__(self, structure: NetworkStructure, tables: Sequence):
        self.structure = structure
        self.tables = _check_table_shapes(structure, tables)
        for i, table in enumerate(self.tables):
            if np.any(table <= 0) or not np.all(np.isfinite(table)):
                raise DomainError(f"alphas of {structure.variables[i].name!r} must be positive")

    @property
    def alphas(self) -> tuple[np.ndarray, ...]:
        return self.tables

    def mean_network(self) -> ConcreteNetwork:
        return ConcreteNetwork(self.structure, [dirichlet_mean(a) for a in self.tables])


@dataclass(frozen=True)
class RowMoments:
    """Means ``(n_rows, k)`` and covariances ``(n_rows, k, k)`` of one table."""

    means: np.ndarray
    covs: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.means.shape[0]


def moments_of(uncertain: UncertainNetwork) -> tuple[RowMoments, ...]:
    """Per-variable row moments. Rows are independent, so no cross terms exist."""
    return tuple(
        RowMoments(_frozen(dirichlet_mean(a)), _frozen(dirichlet_covariance(a)))
        for a in uncertain.tables
    )


def point_moments(network: ConcreteNetwork) -> tuple[RowMoments, ...]:
    """Row moments of a point-valued network (zero covariance)."""
    return tuple(
        RowMoments(t, _frozen(np.zeros(t.shape + (t.shape[1],)))) for t in network.tables
    )


@dataclass
class MessageStats:
    """Mean vector and covariance matrix of a message or internal value."""

    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def constant(cls, mean) -> "MessageStats":
        mean = np.asarray(mean, dtype=float)
        return cls(mean, np.zeros((mean.size, mean.size)))


@dataclass(frozen=True)
class MarginalEstimate:
    """Posterior mean and covariance of p(Y | e) for one variable."""

    variable: int
    mean: np.ndarray
    cov: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.cov).copy()
