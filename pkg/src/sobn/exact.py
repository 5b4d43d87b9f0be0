"""Exact enumeration, ancestral sampling, Dirichlet learning, Monte-Carlo oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, InconsistentEvidenceError
from .ingest import sample_dirichlet_rows
from .model import (
    ConcreteNetwork,
    Evidence,
    MarginalEstimate,
    NetworkStructure,
    UncertainNetwork,
)

MAX_JOINT_STATES = 2**25


@dataclass(frozen=True)
class EnumerationResult:
    """Posterior marginals p(Y | e) for every variable and the evidence probability."""

    marginals: tuple[np.ndarray, ...]
    evidence_probability: float


def _joint_over_free(structure: NetworkStructure, tables, evidence: dict[int, int]):
    """Unnormalized joint over the unobserved variables.

    ``tables`` may carry leading batch axes (same for every table); the
    result has shape ``batch + (card of each free variable,)``.
    """
    free = [i for i in range(structure.n_variables) if i not in evidence]
    cards = structure.cardinalities
    size = int(np.prod([cards[i] for i in free], dtype=np.int64))
    if size > MAX_JOINT_STATES:
        raise CapacityError(f"enumeration over {size} joint states exceeds {MAX_JOINT_STATES}")
    lead = np.shape(tables[0])[:-2]
    axis_of = {v: len(lead) + k for k, v in enumerate(free)}
    joint = np.ones(lead + tuple(cards[i] for i in free))
    for node in range(structure.n_variables):
        scope = structure.parents[node] + (node,)
        factor = np.asarray(tables[node]).reshape(lead + tuple(cards[v] for v in scope))
        index = tuple(slice(None) for _ in lead) + tuple(
            evidence[v] if v in evidence else slice(None) for v in scope
        )
        factor = factor[index]
        kept = [v for v in scope if v not in evidence]
        # move kept axes into free-variable order, then broadcast
        order = sorted(range(len(kept)), key=lambda k: axis_of[kept[k]])
        factor = np.transpose(factor, tuple(range(len(lead))) + tuple(len(lead) + k for k in order))
        shape = list(lead) + [1] * len(free)
        for v in kept:
            shape[axis_of[v]] = cards[v]
        joint = joint * factor.reshape(shape)
    return joint, free


def _marginals_from_joint(structure, joint, free, evidence, lead_ndim):
    """Per-variable posteriors and p(e) from a (batched) free joint."""
    free_axes = tuple(range(lead_ndim, joint.ndim))
    p_e = joint.sum(axis=free_axes)
    marginals = []
    for node in range(structure.n_variables):
        card = structure.variables[node].cardinality
        if node in evidence:
            m = np.zeros(np.shape(p_e) + (card,))
            m[..., evidence[node]] = 1.0
        else:
            axis = lead_ndim + free.index(node)
            other = tuple(a for a in free_axes if a != axis)
            with np.errstate(divide="ignore", invalid="ignore"):
                m = joint.sum(axis=other) / np.asarray(p_e)[..., None]
        marginals.append(m)
    return marginals, p_e


def enumerate_query(bn: ConcreteNetwork, evidence: Evidence) -> EnumerationResult:
    """Exact posteriors by summing the joint over all evidence-compatible assignments."""
    structure = bn.structure
    evidence = structure.check_evidence(evidence)
    joint, free = _joint_over_free(structure, bn.tables, evidence)
    p_e = float(joint.sum())
    if not p_e > 0:
        raise InconsistentEvidenceError("evidence has probability zero")
    marginals, _ = _marginals_from_joint(structure, joint, free, evidence, 0)
    return EnumerationResult(tuple(marginals), p_e)


def joint_evidence_probability(bn: ConcreteNetwork, evidence: Evidence) -> list[np.ndarray]:
    """p(y, e) for every variable, stacked per variable as a list of vectors."""
    result = enumerate_query(bn, evidence)
    return [m * result.evidence_probability for m in result.marginals]


def ancestral_samples(bn: ConcreteNetwork, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` complete assignments, shape ``(n, n_variables)``.

    Variables are drawn in topological order from the table row selected by
    the already-sampled parents.
    """
    structure = bn.structure
    out = np.zeros((n, structure.n_variables), dtype=int)
    for node in structure.topological_order:
        rows = np.zeros(n, dtype=int)
        for p in structure.parents[node]:
            rows = rows * structure.variables[p].cardinality + out[:, p]
        cdf = np.cumsum(bn.tables[node][rows], axis=1)
        u = rng.random(n)[:, None]
        # guard the last bin against cumulative round-off below 1
        out[:, node] = np.minimum((u >= cdf).sum(axis=1), structure.variables[node].cardinality - 1)
    return out


def ancestral_sample(bn: ConcreteNetwork, rng: np.random.Generator) -> np.ndarray:
    return ancestral_samples(bn, 1, rng)[0]


def learn_dirichlet(structure: NetworkStructure, data) -> UncertainNetwork:
    """Dirichlet posteriors from complete data under a uniform prior.

    Each alpha is one plus the number of cases with that child state and
    parent configuration.
    """
    data = np.asarray(data, dtype=int).reshape(-1, structure.n_variables)
    tables = []
    for node, var in enumerate(structure.variables):
        rows = np.zeros(len(data), dtype=int)
        for p in structure.parents[node]:
            rows = rows * structure.variables[p].cardinality + data[:, p]
        counts = np.zeros((structure.n_rows(node), var.cardinality))
        np.add.at(counts, (rows, data[:, node]), 1.0)
        tables.append(counts + 1.0)
    return UncertainNetwork(structure, tables)


def sample_parameters(uncertain: UncertainNetwork, rng: np.random.Generator) -> ConcreteNetwork:
    """One network with every row drawn from its Dirichlet posterior."""
    return ConcreteNetwork(
        uncertain.structure, [sample_dirichlet_rows(a, rng) for a in uncertain.tables]
    )


@dataclass(frozen=True)
class MonteCarloResult:
    estimates: dict[int, MarginalEstimate]
    samples: dict[int, np.ndarray]
    n_rejected: int


def monte_carlo_second_order(
    uncertain: UncertainNetwork,
    evidence: Evidence,
    n_samples: int,
    rng: np.random.Generator,
    chunk: int = 20000,
) -> MonteCarloResult:
    """Sample mean and covariance of p(Y | e) under the Dirichlet posteriors.

    Draws whole parameter sets, solves each drawn network exactly (in vector
    form over a chunk of draws), and keeps the resulting posterior vectors
    of every unobserved variable. Draws with p(e) = 0 are rejected; at most
    ``10 * n_samples`` draws are attempted.
    """
    structure = uncertain.structure
    evidence = structure.check_evidence(evidence)
    queried = [i for i in range(structure.n_variables) if i not in evidence]
    kept = {i: [] for i in queried}
    n_kept = 0
    n_drawn = 0
    while n_kept < n_samples:
        if n_drawn >= 10 * n_samples:
            raise InconsistentEvidenceError(
                f"only {n_kept} of {n_drawn} parameter draws gave p(e) > 0"
            )
        k = min(chunk, n_samples - n_kept, 10 * n_samples - n_drawn)
        tables = [
            sample_dirichlet_rows(np.broadcast_to(a, (k,) + a.shape), rng) for a in uncertain.tables
        ]
        n_drawn += k
        joint, free = _joint_over_free(structure, tables, evidence)
        marginals, p_e = _marginals_from_joint(structure, joint, free, evidence, 1)
        ok = np.isfinite(p_e) & (p_e > 0)
        for i in queried:
            kept[i].append(marginals[i][ok])
        n_kept += int(ok.sum())
    samples = {i: np.concatenate(kept[i])[:n_samples] for i in queried}
    estimates = {
        i: MarginalEstimate(i, s.mean(axis=0), np.atleast_2d(np.cov(s, rowvar=False, ddof=1)))
        for i, s in samples.items()
    }
    return MonteCarloResult(estimates, samples, n_drawn - n_kept)
