import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm, logm, sqrtm

from rapidmix.errors import DomainError
from rapidmix.linalg import (PAULI, DenseOperator, QuantumState, embed, embed_array, gns_inner, herm_eig, kms_inner,
                             matfun, merge_local, modular_conjugate, partial_trace, ptrace_array, random_density,
                             random_hermitian, schatten, split_local, weighted_norm)

I2, X, Z = PAULI["I"], PAULI["X"], PAULI["Z"]


def kron_oracle(ops_by_site, sites, d=2):
    out = np.ones((1, 1), complex)
    for s in sites:
        out = np.kron(out, ops_by_site.get(s, np.eye(d)))
    return out


def ptrace_oracle(m, n, keep, d=2):
    """Partial trace by explicit index loops over the traced basis."""
    traced = [s for s in range(n) if s not in keep]
    dk = d ** len(keep)
    out = np.zeros((dk, dk), complex)
    t = m.reshape([d] * (2 * n))
    for idx in np.ndindex(*([d] * len(traced))):
        sl = [slice(None)] * (2 * n)
        for s, i in zip(traced, idx):
            sl[s] = i
            sl[n + s] = i
        out += t[tuple(sl)].reshape(dk, dk)
    return out


def test_embed_examples():
    z = DenseOperator(Z, (0,))
    assert np.allclose(embed(z, (0, 1)).mat, np.kron(Z, I2))
    one = DenseOperator(np.eye(4), (1, 3))
    assert np.allclose(embed(one, (0, 1, 2, 3)).mat, np.eye(16))
    x = DenseOperator(X, (1,))
    assert np.allclose(embed(x, (0, 1, 2)).mat, kron_oracle({1: X}, (0, 1, 2)))


@pytest.mark.parametrize("loc, full", [((0,), (0, 1, 2)), ((2,), (0, 1, 2)), ((0, 2), (0, 1, 2)),
                                       ((1, 3), (0, 1, 2, 3)), ((3, 5), (1, 3, 4, 5))])
def test_embed_matches_kronecker(loc, full, rng):
    ops = {s: random_hermitian(2, rng) for s in loc}
    local = kron_oracle(ops, loc)
    assert np.allclose(embed_array(local, loc, full, 2), kron_oracle(ops, full))


def test_partial_trace_examples(rng):
    rho = random_density(4, rng)
    tau = random_density(2, rng)
    out = partial_trace(DenseOperator(np.kron(rho, tau), (0, 1, 2)), (2,))
    assert out.support == (0, 1)
    assert np.allclose(out.mat, rho)
    bell = np.zeros(4, complex)
    bell[[0, 3]] = 1 / np.sqrt(2)
    red = partial_trace(DenseOperator(np.outer(bell, bell), (0, 1)), (1,))
    assert np.allclose(red.mat, np.eye(2) / 2)


@pytest.mark.parametrize("n, keep", [(3, (0,)), (3, (1,)), (3, (0, 2)), (4, (1, 2)), (4, (3,))])
def test_partial_trace_vs_loops(n, keep, rng):
    m = random_hermitian(2 ** n, rng)
    got = ptrace_array(m, tuple(range(n)), keep, 2)
    assert np.allclose(got, ptrace_oracle(m, n, keep))
    assert np.isclose(np.trace(got), np.trace(m))


def test_split_merge_roundtrip(rng):
    m = random_hermitian(32, rng) + 1j * random_hermitian(32, rng)
    sites, loc = (0, 1, 2, 3, 4), (1, 3)
    t = split_local(m, sites, loc, 2)
    assert t.shape == (4, 8, 4, 8)
    assert np.allclose(merge_local(t, sites, loc, 2), m)


def test_spectrum_examples(rng):
    assert np.allclose(herm_eig(Z).values, [-1, 1])
    assert np.allclose(herm_eig(np.eye(4)).values, np.ones(4))
    H = random_hermitian(8, rng)
    w = herm_eig(H).values
    assert abs(w.sum() - np.trace(H).real) < 1e-9
    assert abs((w ** 2).sum() - np.trace(H @ H).real) < 1e-9
    assert np.allclose(herm_eig(H).reconstruct(), H)


def test_matfun_examples(rng):
    assert np.allclose(matfun(np.zeros((2, 2)), "exp"), np.eye(2))
    assert np.allclose(matfun(matfun(Z, "exp"), "log"), Z)
    assert np.allclose(matfun(np.diag([4.0, 9.0]), "pow", 0.5), np.diag([2.0, 3.0]))
    rho = random_density(6, rng)
    assert np.allclose(matfun(rho, "log"), logm(rho), atol=1e-8)
    assert np.allclose(matfun(rho, "sqrt"), sqrtm(rho), atol=1e-8)
    H = random_hermitian(6, rng)
    assert np.allclose(matfun(H, "exp"), expm(H))


def test_log_of_singular_raises():
    with pytest.raises(DomainError):
        matfun(np.diag([1.0, 0.0]), "log")
    assert np.allclose(matfun(np.diag([1.0, 0.0]), "ginv"), np.diag([1.0, 0.0]))


def test_weighted_norms(rng):
    sig = random_density(4, rng)
    assert weighted_norm(np.eye(4), sig, 1) == pytest.approx(1.0)
    X = random_hermitian(4, rng)
    for p in (1, 2, 3):
        assert weighted_norm(X, np.eye(4) / 4, p) == pytest.approx(4 ** (-1 / p) * schatten(X, p))
    for _ in range(10):
        X = random_hermitian(4, rng)
        a, b, c = (weighted_norm(X, sig, p) for p in (1, 2, np.inf))
        assert a <= b + 1e-12 and b <= c + 1e-12


def test_inner_products(rng):
    sig = random_density(4, rng)
    assert kms_inner(np.eye(4), np.eye(4), sig) == pytest.approx(1.0)
    X, Y = random_hermitian(4, rng) + 1j * random_hermitian(4, rng), random_hermitian(4, rng)
    assert gns_inner(X, np.eye(4), sig) == pytest.approx(np.conj(np.trace(sig @ X)))
    assert gns_inner(X, Y, sig) == pytest.approx(np.conj(gns_inner(Y, X, sig)))
    mix = np.eye(4) / 4
    hs = np.trace(X.conj().T @ Y) / 4
    assert kms_inner(X, Y, mix) == pytest.approx(hs)
    assert gns_inner(X, Y, mix) == pytest.approx(hs)


def test_modular_conjugation(rng):
    sig = random_density(4, rng)
    X = random_hermitian(4, rng) + 1j * random_hermitian(4, rng)
    assert np.allclose(modular_conjugate(X, sig, 0.0), X)
    w, v = np.linalg.eigh(sig)
    C = v @ np.diag(rng.normal(size=4)) @ v.conj().T
    for s in (0.4, -1.3, 2.0):
        assert np.allclose(modular_conjugate(C, sig, s), C)
        Y = modular_conjugate(X, sig, s)
        assert weighted_norm(Y, sig, 2) == pytest.approx(weighted_norm(X, sig, 2))


def test_state_validation():
    with pytest.raises(ValueError):
        QuantumState(np.diag([0.7, 0.7]), (0,))
    with pytest.raises(ValueError):
        QuantumState(np.diag([1.2, -0.2]), (0,))
    with pytest.raises(ValueError):
        DenseOperator(np.eye(3), (0,))


def test_json_roundtrip(rng):
    op = DenseOperator(random_hermitian(4, rng), (2, 5))
    back = DenseOperator.from_json(op.to_json())
    assert back.support == (2, 5) and np.array_equal(back.mat, op.mat)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(2, 4))
def test_trace_of_embedding(seed, n):
    rng = np.random.default_rng(seed)
    k = rng.integers(1, n)
    loc = tuple(sorted(rng.choice(n, size=k, replace=False)))
    A = random_hermitian(2 ** k, rng)
    big = embed_array(A, loc, tuple(range(n)), 2)
    assert np.isclose(np.trace(big), np.trace(A) * 2 ** (n - k))
    assert np.allclose(ptrace_array(big, tuple(range(n)), loc, 2), A * 2 ** (n - k))
