import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_force, random_concrete, random_evidence, random_structure, random_uncertain
from sobn import exact, ingest
from sobn.errors import CapacityError, InconsistentEvidenceError
from sobn.model import ConcreteNetwork, NetworkStructure, UncertainNetwork, make_variables

COPY = np.array([[1.0, 0.0], [0.0, 1.0]])


def chain(tables):
    return ConcreteNetwork(ingest.builtin_structure("chain3"), tables)


def test_uniform_chain_is_symmetric():
    half = np.full((2, 2), 0.5)
    result = exact.enumerate_query(chain([half[:1], half, half]), {0: 0})
    np.testing.assert_allclose(result.marginals[2], [0.5, 0.5])
    np.testing.assert_array_equal(result.marginals[0], [1, 0])


def test_copy_chain_is_deterministic():
    result = exact.enumerate_query(chain([[[0.5, 0.5]], COPY, COPY]), {0: 1})
    np.testing.assert_allclose(result.marginals[2], [0, 1])
    assert result.evidence_probability == pytest.approx(0.5)


def test_v3_by_hand():
    s = ingest.builtin_structure("v3")
    a, b = [0.3, 0.7], [0.6, 0.4]
    c = [[0.9, 0.1], [0.5, 0.5], [0.2, 0.8], [0.05, 0.95]]
    result = exact.enumerate_query(ConcreteNetwork(s, [[a], [b], c]), {2: 1})
    joint = np.array([[a[i] * b[j] * c[2 * i + j][1] for j in range(2)] for i in range(2)])
    np.testing.assert_allclose(result.marginals[0], joint.sum(1) / joint.sum(), atol=1e-15)
    np.testing.assert_allclose(result.marginals[1], joint.sum(0) / joint.sum(), atol=1e-15)
    assert result.evidence_probability == pytest.approx(joint.sum(), abs=1e-15)


@pytest.mark.parametrize("name", ["chain3", "tent3", "v3", "triangle"])
def test_matches_assignment_loop_oracle(name):
    rng = np.random.default_rng(sum(map(ord, name)))
    s = ingest.builtin_structure(name)
    for _ in range(100):
        bn = random_concrete(s, rng)
        evidence = random_evidence(s, rng)
        result = exact.enumerate_query(bn, evidence)
        expected, p_e = brute_force(bn, evidence)
        for m, e in zip(result.marginals, expected):
            np.testing.assert_allclose(m, e, atol=1e-12)
            assert m.sum() == pytest.approx(1, abs=1e-12)
        assert result.evidence_probability == pytest.approx(p_e, rel=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_oracle_on_random_networks(seed):
    rng = np.random.default_rng(seed)
    s = random_structure(rng, n_max=6, max_parents=3)
    bn = random_concrete(s, rng)
    evidence = random_evidence(s, rng)
    result = exact.enumerate_query(bn, evidence)
    expected, _ = brute_force(bn, evidence)
    for m, e in zip(result.marginals, expected):
        np.testing.assert_allclose(m, e, atol=1e-12)


def test_zero_probability_evidence():
    bn = chain([[[1.0, 0.0]], COPY, COPY])
    with pytest.raises(InconsistentEvidenceError):
        exact.enumerate_query(bn, {2: 1})


def test_capacity_guard():
    s = NetworkStructure(make_variables([f"V{i}" for i in range(26)], [2] * 26), ((),) * 26)
    bn = ConcreteNetwork(s, [np.full((1, 2), 0.5)] * 26)
    with pytest.raises(CapacityError):
        exact.enumerate_query(bn, {})
    exact.enumerate_query(bn, {0: 0})


def test_joint_evidence_probability_sums_to_p_e(rng):
    bn = random_concrete(ingest.builtin_structure("diamond"), rng)
    joint = exact.joint_evidence_probability(bn, {3: 1})
    p_e = exact.enumerate_query(bn, {3: 1}).evidence_probability
    for j in joint:
        assert j.sum() == pytest.approx(p_e, rel=1e-12)


def test_ancestral_sampling():
    rng = np.random.default_rng(0)
    certain = ConcreteNetwork(ingest.builtin_structure("chain3"), [[[1.0, 0.0]], COPY, COPY])
    assert np.all(exact.ancestral_samples(certain, 200, rng) == 0)
    copies = chain([[[0.5, 0.5]], COPY, COPY])
    draws = exact.ancestral_samples(copies, 500, rng)
    assert np.all(draws[:, 0] == draws[:, 1]) and np.all(draws[:, 1] == draws[:, 2])
    skewed = chain([[[0.3, 0.7]], COPY, COPY])
    freq = np.mean(exact.ancestral_samples(skewed, 10_000, rng)[:, 0] == 0)
    assert abs(freq - 0.3) < 0.015
    assert exact.ancestral_sample(skewed, rng).shape == (3,)


def test_ancestral_sampling_matches_joint(rng):
    s = ingest.builtin_structure("triangle")
    bn = random_concrete(s, rng)
    draws = exact.ancestral_samples(bn, 40_000, rng)
    for v in range(3):
        expected = exact.enumerate_query(bn, {}).marginals[v]
        freq = np.bincount(draws[:, v], minlength=2) / len(draws)
        np.testing.assert_allclose(freq, expected, atol=0.015)


def test_learn_dirichlet_examples():
    root = NetworkStructure(make_variables("A", [2]), ((),))
    np.testing.assert_array_equal(exact.learn_dirichlet(root, np.zeros((0, 1))).tables[0], [[1, 1]])
    np.testing.assert_array_equal(exact.learn_dirichlet(root, [[0], [0], [1]]).tables[0], [[3, 2]])
    s = ingest.builtin_structure("chain3")
    learned = exact.learn_dirichlet(s, [[0, 0, 0], [0, 1, 1]])
    np.testing.assert_array_equal(learned.tables[1][1], [1, 1])
    np.testing.assert_array_equal(learned.tables[1][0], [2, 2])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_learned_counts_match_rows(seed):
    rng = np.random.default_rng(seed)
    s = random_structure(rng)
    data = exact.ancestral_samples(random_concrete(s, rng), int(rng.integers(0, 60)), rng)
    learned = exact.learn_dirichlet(s, data)
    for node in range(s.n_variables):
        rows = np.zeros(len(data), dtype=int)
        for p in s.parents[node]:
            rows = rows * s.variables[p].cardinality + data[:, p]
        counts = np.bincount(rows, minlength=s.n_rows(node))
        np.testing.assert_array_equal(learned.tables[node].sum(axis=1) - s.variables[node].cardinality, counts)


def test_sample_parameters():
    s = NetworkStructure(make_variables("A", [2]), ((),))
    tight = UncertainNetwork(s, [[[1e6, 1e6]]])
    assert np.abs(exact.sample_parameters(tight, np.random.default_rng(0)).tables[0] - 0.5).max() < 0.01
    loose = UncertainNetwork(s, [[[1.0, 3.0]]])
    a = exact.sample_parameters(loose, np.random.default_rng(9))
    assert a == exact.sample_parameters(loose, np.random.default_rng(9))
    rng = np.random.default_rng(2)
    draws = np.array([exact.sample_parameters(loose, rng).tables[0][0] for _ in range(10_000)])
    np.testing.assert_allclose(draws.mean(axis=0), [0.25, 0.75], atol=0.01)


def test_monte_carlo_single_root():
    s = NetworkStructure(make_variables("A", [2]), ((),))
    mc = exact.monte_carlo_second_order(UncertainNetwork(s, [[[2.0, 2.0]]]), {}, 10_000, np.random.default_rng(0))
    est = mc.estimates[0]
    np.testing.assert_allclose(est.mean, [0.5, 0.5], atol=0.01)
    assert abs(est.cov[0, 0] - 0.05) < 0.005
    assert mc.samples[0].shape == (10_000, 2)


def test_monte_carlo_concentrates(rng):
    s = ingest.builtin_structure("diamond")
    mean_net = random_concrete(s, rng)
    huge = UncertainNetwork(s, [t * 1e6 for t in mean_net.tables])
    mc = exact.monte_carlo_second_order(huge, {3: 0}, 5_000, rng)
    expected = exact.enumerate_query(huge.mean_network(), {3: 0}).marginals
    for v, est in mc.estimates.items():
        assert est.variance.max() < 1e-5
        np.testing.assert_allclose(est.mean, expected[v], atol=1e-3)


def test_monte_carlo_all_observed(rng):
    s = ingest.builtin_structure("chain3")
    mc = exact.monte_carlo_second_order(ingest.uniform_prior(s), {0: 0, 1: 1, 2: 0}, 100, rng)
    assert mc.estimates == {} and mc.samples == {}


def test_monte_carlo_is_deterministic(rng):
    un = random_uncertain(ingest.builtin_structure("v3"), rng)
    a = exact.monte_carlo_second_order(un, {2: 1}, 3000, np.random.default_rng(4), chunk=1000)
    b = exact.monte_carlo_second_order(un, {2: 1}, 3000, np.random.default_rng(4), chunk=1000)
    np.testing.assert_array_equal(a.samples[0], b.samples[0])
    np.testing.assert_allclose(a.samples[0].sum(axis=1), 1, atol=1e-12)


def test_monte_carlo_rejects_zero_probability_draws():
    s = ingest.builtin_structure("chain3")
    # tiny alphas give nearly one-hot rows, so many draws make C = 1 impossible
    un = UncertainNetwork(s, [np.full((s.n_rows(i), 2), 1e-3) for i in range(3)])
    mc = exact.monte_carlo_second_order(un, {2: 1}, 1000, np.random.default_rng(0))
    assert mc.n_rejected > 0
    assert len(mc.samples[0]) == 1000
    assert np.all(np.isfinite(mc.samples[0]))


def test_tiny_alphas_give_valid_rows():
    rows = ingest.sample_dirichlet_rows(np.full((50, 3), 1e-4), np.random.default_rng(1))
    np.testing.assert_allclose(rows.sum(axis=1), 1, atol=1e-12)
    assert np.all(rows >= 0)
