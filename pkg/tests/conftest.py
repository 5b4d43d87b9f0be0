import itertools

import numpy as np
import pytest
from hypothesis import strategies as st

from sobn import ingest
from sobn.exact import ancestral_samples, learn_dirichlet
from sobn.model import ConcreteNetwork, NetworkStructure, UncertainNetwork, make_variables

POLYTREES = ("chain3", "tent3", "v3")
LOOPY = ("triangle", "diamond")
SMALL = POLYTREES + LOOPY


def brute_force(bn, evidence):
    """Posteriors by looping over every full assignment (independent of sobn.exact)."""
    s = bn.structure
    cards = [v.cardinality for v in s.variables]
    sums = [np.zeros(c) for c in cards]
    total = 0.0
    for assignment in itertools.product(*[range(c) for c in cards]):
        if any(assignment[v] != x for v, x in evidence.items()):
            continue
        p = 1.0
        for node in range(len(cards)):
            row = 0
            for q in s.parents[node]:
                row = row * cards[q] + assignment[q]
            p *= bn.tables[node][row, assignment[node]]
        total += p
        for node in range(len(cards)):
            sums[node][assignment[node]] += p
    return [x / total for x in sums], total


def random_structure(rng, n_max=5, max_parents=2, cards=(2, 3)):
    n = int(rng.integers(1, n_max + 1))
    card = [int(rng.choice(cards)) for _ in range(n)]
    parents = []
    for i in range(n):
        k = int(rng.integers(0, min(i, max_parents) + 1))
        parents.append(tuple(sorted(int(p) for p in rng.choice(i, size=k, replace=False))) if k else ())
    return NetworkStructure(make_variables([f"V{i}" for i in range(n)], card), tuple(parents))


def random_concrete(structure, rng, concentration=1.0):
    tables = [
        rng.dirichlet(np.full(v.cardinality, concentration), size=structure.n_rows(i))
        for i, v in enumerate(structure.variables)
    ]
    return ConcreteNetwork(structure, tables)


def random_uncertain(structure, rng, low=1.0, high=30.0):
    tables = [
        rng.uniform(low, high, size=(structure.n_rows(i), v.cardinality))
        for i, v in enumerate(structure.variables)
    ]
    return UncertainNetwork(structure, tables)


def random_evidence(structure, rng, p=0.4):
    return {
        i: int(rng.integers(structure.variables[i].cardinality))
        for i in range(structure.n_variables)
        if rng.random() < p
    }


def learned(name, rng, n_train=100):
    structure = ingest.builtin_structure(name)
    truth = ingest.sample_ground_truth(structure, rng)
    return truth, learn_dirichlet(structure, ancestral_samples(truth, n_train, rng))


seeds = st.integers(min_value=0, max_value=2**32 - 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
CRITERIA_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA_LINES):
            terminalreporter.write_line(CRITERIA_LINES[n])
