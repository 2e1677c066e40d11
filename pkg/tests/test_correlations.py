import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import logm

from rapidmix.correlations import (MEASURES, chain_scan_geometry, covariance, covariance_sup, decay_scan,
                                   fit_decay, l2_clustering_value, local_indist, max_mutual_information,
                                   measure_value, mixing_condition, mutual_information, relation_epsilon,
                                   relation_properties_check, similarity, strong_local_indist)
from rapidmix.errors import DomainError
from rapidmix.linalg import PAULI, QuantumState, embed_array, ptrace_array, random_density

from conftest import chain

PAULIS = [PAULI[k] for k in "XYZ"]


def vn_entropy(r):
    w = np.linalg.eigvalsh(r)
    w = w[w > 1e-15]
    return float(-(w * np.log(w)).sum())


def mi_oracle(rho):
    """I(A:C) = S(A) + S(C) - S(AC) for a two-qubit state."""
    rA = np.einsum("aibi->ab", rho.reshape(2, 2, 2, 2))
    rC = np.einsum("iaib->ab", rho.reshape(2, 2, 2, 2))
    return vn_entropy(rA) + vn_entropy(rC) - vn_entropy(rho)


def pauli_cov_oracle(sig, sites, a, c):
    """Single-qubit A and C: the sup is the top singular value of the Pauli cross-covariance."""
    M = np.empty((3, 3))
    for i, p in enumerate(PAULIS):
        for j, q in enumerate(PAULIS):
            f = embed_array(p, (a,), sites, 2)
            g = embed_array(q, (c,), sites, 2)
            M[i, j] = (np.trace(sig @ f @ g) - np.trace(sig @ f) * np.trace(sig @ g)).real
    return np.linalg.svd(M, compute_uv=False)[0]


def test_covariance_brute_force():
    E = chain(4, beta=0.5)
    sites = E.graph.vertices
    sig = E.sigma(sites)
    f = embed_array(PAULI["Z"], (0,), sites, 2)
    g = embed_array(PAULI["Z"], (3,), sites, 2)
    want = np.trace(sig @ f @ g).real - np.trace(sig @ f).real * np.trace(sig @ g).real
    assert covariance(sig, f, g) == pytest.approx(want, abs=1e-14)
    assert covariance(sig, np.eye(16), np.eye(16)) == pytest.approx(0.0, abs=1e-14)


def test_covariance_product_state(rng):
    rho = np.kron(random_density(2, rng), random_density(2, rng))
    f = np.kron(PAULI["X"], np.eye(2))
    g = np.kron(np.eye(2), PAULI["Y"])
    assert abs(covariance(rho, f, g)) < 1e-14


@pytest.mark.parametrize("beta", [0.3, 0.5, 1.0])
def test_covariance_sup_vs_pauli_oracle(beta, rng):
    E = chain(6, beta=beta)
    sites = E.graph.vertices
    sig = E.gibbs(sites)
    cs = covariance_sup(sig, (0,), (5,), rng=rng)
    assert cs.value == pytest.approx(pauli_cov_oracle(sig.mat, sites, 0, 5), abs=1e-6)
    assert cs.value <= cs.upper_bound + 1e-12


def test_covariance_sup_heisenberg(rng):
    E = chain(4, "heisenberg", beta=0.4)
    sig = E.gibbs(E.graph.vertices)
    cs = covariance_sup(sig, (1,), (3,), rng=rng)
    assert cs.value == pytest.approx(pauli_cov_oracle(sig.mat, E.graph.vertices, 1, 3), abs=1e-6)


def test_covariance_zero_cases(rng):
    E = chain(5, beta=0.0)
    assert covariance_sup(E.gibbs(E.graph.vertices), (0,), (4,), rng=rng).value < 1e-12
    assert l2_clustering_value(E.sigma(E.graph.vertices), (0,), (4,), sites=E.graph.vertices) < 1e-12


@pytest.mark.parametrize("A, C", [((0,), (5,)), ((0,), (3,)), ((1, 2), (4,))])
def test_l2_dominates_covariance(A, C, rng):
    E = chain(6, beta=0.5)
    sites = E.graph.vertices
    l2 = l2_clustering_value(E.sigma(sites), A, C, sites=sites)
    cs = covariance_sup(E.gibbs(sites), A, C, rng=rng).value
    assert l2 >= cs - 1e-9


def test_local_indist_decays():
    E = chain(6, beta=0.5)
    near = local_indist(E, (0,), (1,), (2, 3, 4, 5))
    far = local_indist(E, (0,), (1, 2, 3), (4, 5))
    assert far < near
    assert local_indist(chain(6, beta=0.0), (0,), (1,), (2, 3)) < 1e-14


def test_strong_local_indist_bounds_trace_distance():
    E = chain(6, beta=0.7)
    for l in (1, 2, 3):
        A, B, C = chain_scan_geometry(l)
        eps = strong_local_indist(E, A, B, C)
        assert local_indist(E, A, B, C) <= eps + 1e-12


def test_strong_local_indist_noncommuting_decay():
    E = chain(6, "heisenberg", beta=0.3)
    # width-2 A: single-site marginals of an SU(2)-invariant state are maximally mixed
    vals = [strong_local_indist(E, *chain_scan_geometry(l, width_A=2, width_C=4 - l)) for l in (1, 2, 3)]
    assert all(np.isfinite(vals))
    assert vals[0] > vals[1] > vals[2]


def test_mixing_bounds_mutual_information():
    E = chain(8, beta=0.5)
    sig = E.gibbs(E.graph.vertices)
    assert mutual_information(sig, (0,), (7,)) <= mixing_condition(sig, (0,), (7,))
    assert mixing_condition(chain(4, beta=0.0).gibbs((0, 1, 2, 3)), (0,), (3,)) < 1e-14


def test_mixing_condition_singular():
    rho = np.zeros((4, 4))
    rho[0, 0] = 1.0
    with pytest.raises(DomainError):
        mixing_condition(rho, (0,), (1,), sites=(0, 1))


def test_bell_pair_information():
    bell = np.zeros(4, complex)
    bell[[0, 3]] = 1 / np.sqrt(2)
    rho = np.outer(bell, bell.conj())
    assert mutual_information(rho, (0,), (1,), sites=(0, 1)) == pytest.approx(2 * np.log(2))
    prod = np.kron(np.diag([0.3, 0.7]), np.eye(2) / 2)
    assert mutual_information(prod, (0,), (1,), sites=(0, 1)) == pytest.approx(0.0, abs=1e-12)
    assert max_mutual_information(prod, (0,), (1,), sites=(0, 1)) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_mutual_information_oracle(seed):
    rho = random_density(4, np.random.default_rng(seed))
    mi = mutual_information(rho, (0,), (1,), sites=(0, 1))
    assert mi == pytest.approx(mi_oracle(rho), abs=1e-10)
    assert mi <= max_mutual_information(rho, (0,), (1,), sites=(0, 1)) + 1e-10


def test_similarity_examples():
    r = similarity(np.diag([0.6, 0.4]), np.diag([0.5, 0.5]))
    assert r.epsilon == pytest.approx(0.2)
    assert r.bracket_ok()
    assert similarity(np.diag([0.6, 0.4]), np.diag([0.6, 0.4])).epsilon == pytest.approx(0.0, abs=1e-14)


def test_similarity_trace_norm_implication(rng):
    for _ in range(20):
        om, ta = random_density(4, rng), random_density(4, rng)
        eps = similarity(om, ta).epsilon
        assert np.abs(np.linalg.eigvalsh(om - ta)).sum() <= eps + 1e-10


def test_diagonal_transitivity_example():
    A = np.diag([1.1, 1.0, 0.95])
    B = np.eye(3)
    C = np.diag([1.0, 1 / 1.1, 1 / 0.9])
    e1, e2 = relation_epsilon(A, B), relation_epsilon(B, C)
    assert e1 == pytest.approx(0.1) and e2 == pytest.approx(0.1)
    assert relation_epsilon(A, C) <= 0.21 + 1e-12


def test_diagonal_chaining_example():
    ops = [np.diag([1.05 ** k, 1.0]) for k in range(4)]
    eps = max(relation_epsilon(ops[k + 1], ops[k]) for k in range(3))
    assert eps == pytest.approx(0.05)
    assert relation_epsilon(ops[3], ops[0]) <= 1.05 ** 3 - 1 + 1e-12
    same = [np.diag([0.3, 0.7])] * 4
    assert relation_epsilon(same[0], same[-1]) == pytest.approx(0.0, abs=1e-14)


def test_relation_properties_small_run(rng):
    rep = relation_properties_check(rng, samples=40, max_dim=8)
    assert set(rep) == {"symmetry", "inverse_symmetry", "transitivity", "tensor", "locality", "normalization",
                        "chaining", "dmax_bracket"}
    assert all(v["failures"] == 0 for v in rep.values())


def test_pinsker_like_dmax_bracket(rng):
    for _ in range(20):
        om, ta = random_density(4, rng), random_density(4, rng)
        assert similarity(om, ta).bracket_ok()


def test_fit_decay_synthetic():
    ls = np.arange(1, 7)
    fit = fit_decay(ls, 3.0 * np.exp(-0.7 * ls))
    assert fit.rate == pytest.approx(0.7)
    assert fit.prefactor == pytest.approx(3.0)
    assert fit.r_squared == pytest.approx(1.0)
    z = fit_decay(ls, np.zeros(6))
    assert z.exact_zero and np.isinf(z.rate)
    with pytest.raises(ValueError):
        fit_decay(ls, [1.0, 0.5, 0.0, 0.0, 0.0, 0.0])


def test_scan_infinite_temperature():
    E = chain(10, beta=0.0)
    for m in MEASURES:
        res = decay_scan(E, m)
        assert res.fit.exact_zero, m
        assert max(r["value"] for r in res.rows) < 1e-12


def test_scan_covariance_and_mi():
    E = chain(10, beta=0.5)
    cov = decay_scan(E, "covariance")
    mi = decay_scan(E, "mutual_information")
    assert cov.fit.r_squared >= 0.95
    assert 1 / 3 <= mi.fit.rate / cov.fit.rate <= 3
    assert [r["l"] for r in cov.rows] == list(range(1, 7))


def test_measure_value_rejects_unknown():
    with pytest.raises(ValueError):
        measure_value(chain(4), "nope", (0,), (1,), (2,))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_mutual_information_symmetric_nonnegative(seed):
    rng = np.random.default_rng(seed)
    rho = random_density(8, rng)
    sites = (0, 1, 2)
    a = mutual_information(rho, (0,), (1, 2), sites=sites)
    swapped = QuantumState(rho, sites)
    b = mutual_information(swapped, (1, 2), (0,))
    assert a >= -1e-12
    assert a == pytest.approx(b, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), s=st.floats(-3, 3))
def test_covariance_bilinear(seed, s):
    rng = np.random.default_rng(seed)
    rho = random_density(4, rng)
    f = np.kron(PAULI["X"], np.eye(2))
    f2 = np.kron(PAULI["Z"], np.eye(2))
    g = np.kron(np.eye(2), PAULI["Y"])
    lhs = covariance(rho, f + s * f2, g)
    assert lhs == pytest.approx(covariance(rho, f, g) + s * covariance(rho, f2, g), abs=1e-12)
