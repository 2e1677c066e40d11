import numpy as np
import pytest
from scipy.linalg import expm

from rapidmix.channels import condexp_residuals
from rapidmix.davies import DaviesGenerator, detailed_balance_residual
from rapidmix.errors import UnsupportedModelError
from rapidmix.hamiltonian import GibbsEnsemble, build_potential
from rapidmix.lattice import build_graph
from rapidmix.linalg import PAULI, ptrace_array, random_density, random_hermitian
from rapidmix.schmidt import (algebra_residuals, build_boundary_blocks, condexp_commutation_check,
                              edge_schmidt_decompose, full_span, generated_dimension, q_l1_linf_norm, q_norm_oracle,
                              sandwich_check, schmidt_algebra, schmidt_condexp, schmidt_lindbladian,
                              span_intersection, tau_state)

from conftest import chain

Z = PAULI["Z"]


def decoupled(n):
    P = build_potential(build_graph("chain", n=n), "custom", term=np.zeros((4, 4)))
    return GibbsEnsemble(P, 1.0)


def realign_rank(M, d=2):
    """Operator Schmidt rank from the realigned matrix, computed directly."""
    R = np.einsum("ijkl->ikjl", M.reshape(d, d, d, d)).reshape(d * d, d * d)
    s = np.linalg.svd(R, compute_uv=False)
    return int((s > 1e-12 * s.max()).sum())


def test_edge_schmidt_trivial():
    f = edge_schmidt_decompose(decoupled(2), (0, 1))
    assert f.rank == 1
    a, b = f.factors_b[0], f.factors_c[0]
    assert np.allclose(np.kron(a, b), np.eye(4))
    assert np.allclose(a / a[0, 0], np.eye(2))


def test_edge_schmidt_ising():
    E = chain(2, beta=0.7, g=0.0)
    f = edge_schmidt_decompose(E, (0, 1))
    assert f.rank == 2 == realign_rank(expm(-0.7 * np.kron(Z, Z)))
    for X in f.factors_b + f.factors_c:
        assert np.allclose(X, np.diag(np.diag(X)))
    assert np.allclose(f.reconstruct(), expm(-0.7 * np.kron(Z, Z)))


@pytest.mark.parametrize("seed", range(4))
def test_edge_schmidt_reconstruction(seed):
    E = chain(3, "random_commuting", beta=0.9, seed=seed)
    for e in E.graph.edges:
        f = edge_schmidt_decompose(E, e)
        assert np.abs(f.reconstruct() - expm(-0.9 * E.potential.terms[e])).max() < 1e-10


def test_blocks_trivial_at_infinite_temperature():
    bb = build_boundary_blocks(chain(5, beta=0.0), (2,))
    assert len(bb.blocks) == 1
    assert np.allclose(bb.blocks[0].tau, np.eye(bb.blocks[0].tau.shape[0]) / bb.blocks[0].tau.shape[0])


def test_blocks_ising_interior():
    E = chain(5, beta=0.5)
    bb = build_boundary_blocks(E, (2,))
    # boundary sites 1 and 3 each split along the Z eigenbasis
    assert sorted(bb.sites) == [1, 3]
    for sb in bb.sites.values():
        assert len(sb.isometries) == 2
        assert sb.out_dims == (1, 1) and sb.in_dims == (1, 1)
    assert len(bb.blocks) == 4


def test_blocks_invariants_random_commuting():
    E = chain(5, "random_commuting", beta=0.8, seed=3)
    bb = build_boundary_blocks(E, (2,))
    alg = schmidt_algebra(E, (2,))
    inv = bb.invariants(alg.site_algebras)
    assert max(inv.values()) < 1e-9


def test_decoupled_condexp_is_replacement(rng):
    # trivial edge factors generate only scalars, so the whole of a∂ is replaced
    E = decoupled(5)
    e = schmidt_condexp(E, (2,))
    rho = random_density(32, rng)
    red = ptrace_array(rho, E.graph.vertices, (0, 4), 2).reshape(2, 2, 2, 2)
    want = np.einsum("acbd,ij->aicbjd", red, np.eye(8) / 8).reshape(32, 32)
    assert np.allclose(e.schrodinger(rho), want)


@pytest.mark.parametrize("kind", ["ising", "random_commuting"])
@pytest.mark.parametrize("method", ["kms_projection", "block_formula"])
def test_schmidt_condexp_axioms(kind, method, rng):
    E = chain(5, kind, beta=0.6)
    sig = E.sigma(E.graph.vertices)
    res = condexp_residuals(schmidt_condexp(E, (2,), method=method), sig, rng)
    for k in ("idempotence", "unitality", "sigma_invariance", "modular"):
        assert res[k] < 1e-8, k
    assert res["choi_min_eig"] > -1e-8


@pytest.mark.parametrize("A", [(2,), (1, 2), (0,)])
def test_methods_agree(A, rng):
    E = chain(5, "random_commuting", beta=0.7, seed=5)
    e1 = schmidt_condexp(E, A)
    e2 = schmidt_condexp(E, A, method="block_formula")
    for _ in range(3):
        X = random_hermitian(32, rng)
        assert np.abs(e1.heisenberg(X) - e2.heisenberg(X)).max() < 1e-8


def test_algebra_closed_and_modular_invariant():
    alg = schmidt_algebra(chain(5, "random_commuting", beta=0.7, seed=1), (2,))
    res = algebra_residuals(alg)
    assert res["closure"] < 1e-9 and res["modular"] < 1e-9


def test_noncommuting_rejected():
    with pytest.raises(UnsupportedModelError):
        schmidt_condexp(chain(4, "heisenberg"), (1,))


def test_tau_state():
    E = chain(5, beta=0.0)
    bb = build_boundary_blocks(E, (2,))
    tau = tau_state(E, (2,), bb.blocks[0].label)
    assert np.allclose(tau, np.eye(tau.shape[0]) / tau.shape[0])
    E = chain(5, beta=0.6)
    for blk in build_boundary_blocks(E, (2,)).blocks:
        t = tau_state(E, (2,), blk.label)
        assert np.trace(t).real == pytest.approx(1.0)
        assert np.linalg.eigvalsh(t).min() > 0


def test_tau_invariance_identity():
    # E^{(α)} applied to P^{(α)} σ P^{(α)} (normalized) reproduces it
    E = chain(5, beta=0.6)
    sig = E.sigma(E.graph.vertices)
    e = schmidt_condexp(E, (2,), method="block_formula")
    bb = build_boundary_blocks(E, (2,))
    for blk in bb.blocks:
        P = blk.V @ blk.V.conj().T
        from rapidmix.linalg import embed_array
        Pf = embed_array(P, bb.loc, E.graph.vertices, 2)
        r = Pf @ sig @ Pf
        r /= np.trace(r).real
        assert np.abs(e.schrodinger(r) - r).max() < 1e-9


def test_lindbladian_decoupled_single_site(rng):
    E = decoupled(4)
    L = schmidt_lindbladian(E, (1,))
    M = L.to_matrix()
    ev = np.sort(np.linalg.eigvals(M).real)
    assert np.allclose(np.unique(np.round(ev, 10)), [-1.0, 0.0])


def test_lindbladian_additive(rng):
    E = chain(5, beta=0.5)
    A, B = (0, 1), (3, 4)
    X = random_hermitian(32, rng)
    lhs = schmidt_lindbladian(E, A)(X) + schmidt_lindbladian(E, B)(X)
    assert np.abs(lhs - schmidt_lindbladian(E, A + B)(X)).max() < 1e-10


def test_lindbladian_detailed_balance(rng):
    E = chain(5, beta=0.5)
    L = schmidt_lindbladian(E, E.graph.vertices)
    assert detailed_balance_residual(L, E.sigma(E.graph.vertices), rng) < 1e-9


def test_commutation_far_and_nested(rng):
    E = chain(7, beta=0.5)
    e1, e2 = schmidt_condexp(E, (1,)), schmidt_condexp(E, (4,))
    res = condexp_commutation_check(e1, e2, rng, schmidt_condexp(E, (1, 4)))
    assert res["commutator"] < 1e-9 and res["union"] < 1e-9
    small, big = schmidt_condexp(E, (3,)), schmidt_condexp(E, (2, 3, 4))
    X = random_hermitian(128, rng)
    assert np.abs(big.heisenberg(small.heisenberg(X)) - big.heisenberg(X)).max() < 1e-9


def test_commutation_adjacent_negative_control(rng):
    E = chain(5, beta=0.8)
    res = condexp_commutation_check(schmidt_condexp(E, (1,)), schmidt_condexp(E, (2,)), rng)
    assert res["commutator"] > 1e-3


def test_sandwich_at_gibbs_state():
    E = chain(5, beta=0.5)
    assert np.allclose(sandwich_check(E, (2,), E.sigma(E.graph.vertices)), 0.0, atol=1e-10)


@pytest.mark.parametrize("kind", ["ising", "random_commuting"])
def test_sandwich_ordering(kind, rng):
    E = chain(5, kind, beta=0.5)
    for _ in range(4):
        a, b, c = sandwich_check(E, (2,), random_density(32, rng))
        assert a <= b + 1e-9 and b <= c + 1e-9


def test_sandwich_decoupled_equal(rng):
    E = decoupled(5)
    a, b, c = sandwich_check(E, (2,), random_density(32, rng))
    assert b == pytest.approx(c, abs=1e-9)
    assert a <= b


def test_schmidt_fixed_points_are_davies_fixed():
    E = chain(5, beta=0.6)
    alg = schmidt_algebra(E, (2,))
    gen = DaviesGenerator(E, region=alg.loc, active=(2,))
    for B in alg.basis:
        assert np.abs(gen.apply(B, "heisenberg", "dissipative")).max() < 1e-8


@pytest.mark.parametrize("A1, A2", [((0,), (3,)), ((1,), (1, 2)), ((1,), (0, 1, 2))])
def test_algebra_laws(A1, A2):
    E = chain(4, beta=0.5)
    sites = E.graph.vertices
    s1, s2 = (full_span(schmidt_algebra(E, A), sites) for A in (A1, A2))
    union = tuple(sorted(set(A1) | set(A2)))
    inter = tuple(sorted(set(A1) & set(A2)))
    su = full_span(schmidt_algebra(E, union), sites)
    # N_{A1} ∩ N_{A2} = N_{A1∪A2}
    assert span_intersection(s1, s2) == len(su)
    assert span_intersection(su, s1) == len(su)
    # algebra generated by both = N_{A1∩A2}; the empty region gives the full algebra
    want = 4 ** len(sites) if not inter else len(full_span(schmidt_algebra(E, inter), sites))
    assert generated_dimension(s1, s2, 2 ** len(sites)) == want


def test_qnorm_infinite_temperature():
    q = q_l1_linf_norm(chain(5, beta=0.0), (1, 2), (2, 3))
    assert q.max < 1e-12


@pytest.mark.parametrize("kind, beta", [("ising", 0.4), ("random_commuting", 0.6)])
def test_qnorm_matches_oracle(kind, beta):
    E = chain(5, kind, beta=beta)
    q = q_l1_linf_norm(E, (1, 2), (2, 3))
    for lab, v in q.per_block.items():
        assert abs(q_norm_oracle(E, (1, 2), (2, 3), lab, starts=12) - v) < 1e-6


def test_qnorm_requires_overlap():
    from rapidmix.errors import GeometryError

    with pytest.raises(GeometryError):
        q_l1_linf_norm(chain(5), (0, 1), (3, 4))
