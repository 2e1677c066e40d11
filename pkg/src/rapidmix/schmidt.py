"""Schmidt conditional expectations for commuting nearest-neighbour potentials.

The fixed-point algebra of E^S_A is 1_A ⊗ ⊗_{b∈∂A} 𝒜_b ⊗ B(rest), where 𝒜_b is
the *-algebra generated by the Schmidt factors at b of the edges (b, c) with
c ∉ A.  The primary construction is the KMS projection onto that algebra; the
block formula built from the joint block decomposition is the cross-check.
"""

from __future__ import annotations

import itertools
import weakref
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .channels import ConditionalExpectation, Superoperator, identity_map, kms_orthonormalize
from .errors import DomainError, EstimationError, GeometryError, UnsupportedModelError
from .hamiltonian import GibbsEnsemble
from .lattice import boundary, closure, distance
from .linalg import _full_rank_pow, expm_h, kron_all, merge_local, split_local

SV_CUT = 1e-12
SPAN_TOL = 1e-10
BLOCK_WEIGHT_MIN = 1e-14


# ---------------------------------------------------------------- edge factors and algebras


@dataclass(frozen=True)
class EdgeFactorization:
    edge: tuple[int, int]
    factors_b: tuple[np.ndarray, ...]
    factors_c: tuple[np.ndarray, ...]
    singular_values: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.factors_b)

    def reconstruct(self) -> np.ndarray:
        return sum(np.kron(a, b) for a, b in zip(self.factors_b, self.factors_c))


def edge_schmidt_decompose(E: GibbsEnsemble, edge: tuple[int, int]) -> EdgeFactorization:
    """Operator Schmidt decomposition e^{−βh} = Σ_s X^s_b ⊗ X^s_c by SVD of the realigned matrix."""
    b, c = min(edge), max(edge)
    d = E.d
    M = expm_h(E.potential.terms[(b, c)], -E.beta)
    R = M.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)
    U, s, Vh = np.linalg.svd(R)
    keep = s > SV_CUT * s.max()
    fb = tuple(np.sqrt(s[k]) * U[:, k].reshape(d, d) for k in np.nonzero(keep)[0])
    fc = tuple(np.sqrt(s[k]) * Vh[k, :].reshape(d, d) for k in np.nonzero(keep)[0])
    return EdgeFactorization((b, c), fb, fc, s[keep])


def _orth_add(Q: list[np.ndarray], v: np.ndarray, tol: float) -> bool:
    for q in Q:
        v = v - np.vdot(q, v) * q
    nv = np.linalg.norm(v)
    if nv > tol:
        Q.append(v / nv)
        return True
    return False


def algebra_closure(gens: Sequence[np.ndarray], dim: int, tol: float = SPAN_TOL) -> np.ndarray:
    """HS-orthonormal basis of the unital *-algebra generated by ``gens``."""
    Q: list[np.ndarray] = []
    _orth_add(Q, np.eye(dim, dtype=complex).ravel(), tol)
    for g in gens:
        g = np.asarray(g, dtype=complex)
        scale = max(np.linalg.norm(g), 1e-300)
        _orth_add(Q, (g / scale).ravel(), tol)
        _orth_add(Q, (g.conj().T / scale).ravel(), tol)
    grew = True
    while grew and len(Q) < dim * dim:
        grew = False
        mats = [q.reshape(dim, dim) for q in Q]
        for a, b in itertools.product(mats, repeat=2):
            p = a @ b
            n = np.linalg.norm(p)
            if n > tol and _orth_add(Q, (p / n).ravel(), tol):
                grew = True
    return np.array([q.reshape(dim, dim) for q in Q])


def _commute_all(As: Sequence[np.ndarray], Bs: Sequence[np.ndarray]) -> float:
    return max((float(np.abs(a @ b - b @ a).max()) for a in As for b in Bs), default=0.0)


def boundary_algebra(E: GibbsEnsemble, A: Sequence[int], b: int) -> np.ndarray:
    """𝒜_b: generated by the Schmidt factors at b of edges (b, c), c ∉ A."""
    g = E.graph
    sA = set(A)
    out_gens, per_edge = [], []
    for c in g.adjacency[b]:
        f = edge_schmidt_decompose(E, (b, c))
        facs = f.factors_b if b < c else f.factors_c
        per_edge.append(facs)
        if c not in sA:
            out_gens.extend(facs)
    for i in range(len(per_edge)):
        for j in range(i + 1, len(per_edge)):
            if _commute_all(per_edge[i], per_edge[j]) > 1e-9:
                raise UnsupportedModelError(f"edge factor algebras at site {b} do not commute")
    return algebra_closure(out_gens, E.d)


# ---------------------------------------------------------------- KMS projection method


@dataclass(frozen=True)
class SchmidtAlgebra:
    region: tuple[int, ...]
    loc: tuple[int, ...]
    basis: np.ndarray  # KMS-orthonormal w.r.t. sigma_loc, operators on loc
    sigma_loc: np.ndarray
    site_algebras: dict = field(default_factory=dict, compare=False)


def schmidt_algebra(E: GibbsEnsemble, A: Sequence[int]) -> SchmidtAlgebra:
    if not E.potential.commuting:
        raise UnsupportedModelError("Schmidt expectations need a commuting potential")
    g = E.graph
    A = tuple(sorted(A))
    loc = closure(g, A)
    d = E.d
    site_alg = {b: boundary_algebra(E, A, b) for b in boundary(g, A)}
    per_site = []
    for v in loc:
        if v in site_alg:
            per_site.append(site_alg[v])
        else:
            per_site.append(np.eye(d, dtype=complex)[None])
    prod = [kron_all(ms) for ms in itertools.product(*per_site)]
    sigma_loc = E.sigma(loc)
    basis = kms_orthonormalize(prod, sigma_loc)
    return SchmidtAlgebra(A, loc, basis, sigma_loc, site_alg)


def algebra_residuals(alg: SchmidtAlgebra, s_values: Sequence[float] = (0.5, 1.3)) -> dict[str, float]:
    """Closure under products/adjoints and modular invariance, as projection residuals."""
    B = alg.basis
    r = _full_rank_pow(alg.sigma_loc, 0.5)

    def proj_res(X):
        coef = np.einsum("kba,bc,cd,da->k", B.conj(), r, X, r)
        return float(np.abs(X - np.einsum("k,kab->ab", coef, B)).max())

    closure_res = 0.0
    for i in range(len(B)):
        closure_res = max(closure_res, proj_res(B[i].conj().T))
        for j in range(len(B)):
            closure_res = max(closure_res, proj_res(B[i] @ B[j]))
    w, v = np.linalg.eigh(alg.sigma_loc)
    mod_res = 0.0
    for s in s_values:
        u = (v * np.exp(1j * s * np.log(w))) @ v.conj().T
        for Bk in B:
            mod_res = max(mod_res, proj_res(u @ Bk @ u.conj().T))
    return {"closure": closure_res, "modular": mod_res}


# ---------------------------------------------------------------- block decomposition


@dataclass(frozen=True)
class SiteBlocks:
    """Joint block decomposition at one boundary site: V_α maps C^n ⊗ C^m into C^d."""

    site: int
    isometries: tuple[np.ndarray, ...]
    out_dims: tuple[int, ...]
    in_dims: tuple[int, ...]

    @property
    def projectors(self) -> list[np.ndarray]:
        return [V @ V.conj().T for V in self.isometries]


def _group_eigs(w: np.ndarray, tol: float) -> list[np.ndarray]:
    groups, cur = [], [0]
    for k in range(1, len(w)):
        if w[k] - w[k - 1] > tol:
            groups.append(np.array(cur))
            cur = []
        cur.append(k)
    groups.append(np.array(cur))
    return groups


def _center(basis: np.ndarray) -> np.ndarray:
    k, dim = basis.shape[0], basis.shape[1]
    C = np.zeros((k, k * dim * dim), dtype=complex)
    for i in range(k):
        C[i] = np.concatenate([(basis[i] @ basis[m] - basis[m] @ basis[i]).ravel() for m in range(k)])
    # coefficients c with Σ_i c_i [B_i, B_m] = 0 for every m
    _, s, vh = np.linalg.svd(C.T, full_matrices=True)
    null = vh[np.sum(s > 1e-9 * max(s.max(initial=0.0), 1.0)):].conj()
    return np.einsum("ji,iab->jab", null, basis)


def site_blocks(alg_basis: np.ndarray, site: int, rng: np.random.Generator) -> SiteBlocks:
    """Central projections plus matrix units from random Hermitian elements."""
    dim = alg_basis.shape[1]
    Z = _center(alg_basis)
    z = sum(rng.uniform(1, 2) * (c + c.conj().T) for c in Z)
    w, v = np.linalg.eigh(z)
    isos, outs, ins = [], [], []
    for grp in _group_eigs(w, 1e-8 * max(1.0, np.abs(w).max())):
        W = v[:, grp]
        red = np.einsum("ai,kab,bj->kij", W.conj(), alg_basis, W)
        h = sum(rng.normal() * (x + x.conj().T) for x in red)
        y = sum(complex(rng.normal(), rng.normal()) * x for x in red)
        hw, hv = np.linalg.eigh(h)
        sub = _group_eigs(hw, 1e-8 * max(1.0, np.abs(hw).max()))
        m = len(sub[0])
        if any(len(s) != m for s in sub):
            raise DomainError("block decomposition failed: unequal multiplicities")
        Q = [hv[:, s] for s in sub]  # orthonormal bases of the minimal projections
        F = Q[0]
        cols = []
        for Qi in Q:
            e = Qi.conj().T @ y @ F  # (m × m) representation of Q_i y Q_1
            u_, _, vh_ = np.linalg.svd(e)
            pol = u_ @ vh_  # polar part: e (e†e)^{-1/2}
            cols.append(Qi @ pol)
        V = W @ np.hstack(cols)  # columns ordered (i, s) with s fastest
        isos.append(V)
        outs.append(len(sub))
        ins.append(m)
    return SiteBlocks(site, tuple(isos), tuple(outs), tuple(ins))


@dataclass(frozen=True)
class Block:
    label: tuple[int, ...]
    V: np.ndarray  # (D_loc, n_out · n_in), out factor most significant
    n_out: int
    n_in: int
    tau: np.ndarray
    weight: float


@dataclass(frozen=True)
class BoundaryBlocks:
    region: tuple[int, ...]
    loc: tuple[int, ...]
    sites: dict
    blocks: tuple[Block, ...]
    skipped: tuple[tuple[int, ...], ...] = ()

    def invariants(self, algebras: dict) -> dict[str, float]:
        res = {"completeness": 0.0, "orthogonality": 0.0, "off_factor": 0.0}
        for b, sb in self.sites.items():
            P = sb.projectors
            d = P[0].shape[0]
            res["completeness"] = max(res["completeness"], float(np.abs(sum(P) - np.eye(d)).max()))
            for i in range(len(P)):
                for j in range(len(P)):
                    target = P[i] if i == j else 0.0
                    res["orthogonality"] = max(res["orthogonality"], float(np.abs(P[i] @ P[j] - target).max()))
            for V, n, m in zip(sb.isometries, sb.out_dims, sb.in_dims):
                for a in algebras[b]:
                    Wt = (V.conj().T @ a @ V).reshape(n, m, n, m)
                    g_out = np.einsum("isjs->ij", Wt) / m
                    fit = np.einsum("ij,st->isjt", g_out, np.eye(m))
                    res["off_factor"] = max(res["off_factor"], float(np.abs(Wt - fit).max()))
        return res


def build_boundary_blocks(E: GibbsEnsemble, A: Sequence[int], seed: int = 0) -> BoundaryBlocks:
    if not E.potential.commuting:
        raise UnsupportedModelError("Schmidt expectations need a commuting potential")
    g = E.graph
    A = tuple(sorted(A))
    loc = closure(g, A)
    d = E.d
    rng = np.random.default_rng(seed)
    sites = {b: site_blocks(boundary_algebra(E, A, b), b, rng) for b in boundary(g, A)}
    sigma = E.sigma(loc)
    bsites = [v for v in loc if v in sites]
    blocks, skipped = [], []
    for label in itertools.product(*(range(len(sites[b].isometries)) for b in bsites)):
        choice = dict(zip(bsites, label))
        mats, kinds = [], []
        for v in loc:
            if v in sites:
                k = choice[v]
                mats.append(sites[v].isometries[k])
                kinds.append([(sites[v].out_dims[k], "out"), (sites[v].in_dims[k], "in")])
            else:
                mats.append(np.eye(d, dtype=complex))
                kinds.append([(d, "in")])
        V = kron_all(mats)
        dims = [x for ks in kinds for x, _ in ks]
        tags = [t for ks in kinds for _, t in ks]
        outs = [i for i, t in enumerate(tags) if t == "out"]
        ins = [i for i, t in enumerate(tags) if t == "in"]
        n_out = int(np.prod([dims[i] for i in outs])) if outs else 1
        n_in = int(np.prod([dims[i] for i in ins]))
        V = V.reshape([V.shape[0]] + dims).transpose([0] + [i + 1 for i in outs + ins])
        V = V.reshape(V.shape[0], n_out * n_in)
        S = (V.conj().T @ sigma @ V).reshape(n_out, n_in, n_out, n_in)
        tau = np.einsum("oiop->ip", S)
        wgt = float(np.trace(tau).real)
        if wgt < BLOCK_WEIGHT_MIN:
            skipped.append(label)
            continue
        blocks.append(Block(label, V, n_out, n_in, 0.5 * (tau + tau.conj().T) / wgt, wgt))
    return BoundaryBlocks(A, loc, sites, tuple(blocks), tuple(skipped))


@dataclass(frozen=True)
class BlockConditionalExpectation:
    """E^S assembled block by block from isometries and τ states."""

    sites: tuple[int, ...]
    loc: tuple[int, ...]
    bb: BoundaryBlocks
    d: int = 2

    def _apply(self, X: np.ndarray, heis: bool) -> np.ndarray:
        T = split_local(np.asarray(X, dtype=complex), self.sites, self.loc, self.d)
        Dr = T.shape[1]
        out = np.zeros_like(T)
        for blk in self.bb.blocks:
            V, no, ni = blk.V, blk.n_out, blk.n_in
            W = np.einsum("pa,aibj,bq->piqj", V.conj().T, T, V, optimize=True)
            W = W.reshape(no, ni, Dr, no, ni, Dr)
            if heis:
                R = np.einsum("onipmj,mn->oipj", W, blk.tau)
                new = np.einsum("oipj,nm->onipmj", R, np.eye(ni))
            else:
                R = np.einsum("onipnj->oipj", W)
                new = np.einsum("oipj,nm->onipmj", R, blk.tau)
            new = new.reshape(no * ni, Dr, no * ni, Dr)
            out += np.einsum("ap,piqj,qb->aibj", V, new, V.conj().T, optimize=True)
        return merge_local(out, self.sites, self.loc, self.d)

    def heisenberg(self, X: np.ndarray) -> np.ndarray:
        return self._apply(X, True)

    def schrodinger(self, rho: np.ndarray) -> np.ndarray:
        return self._apply(rho, False)

    def superop(self, picture: str = "heisenberg") -> Superoperator:
        f = self.heisenberg if picture == "heisenberg" else self.schrodinger
        return Superoperator(f, self.sites, self.d, picture)

    def localized(self) -> "BlockConditionalExpectation":
        return BlockConditionalExpectation(self.loc, self.loc, self.bb, self.d)

    def on(self, sites: Sequence[int]) -> "BlockConditionalExpectation":
        return BlockConditionalExpectation(tuple(sorted(sites)), self.loc, self.bb, self.d)


# ---------------------------------------------------------------- cached family


class SchmidtFamily:
    """Cache of Schmidt algebras, expectations and blocks for one Gibbs ensemble."""

    def __init__(self, E: GibbsEnsemble):
        if not E.potential.commuting:
            raise UnsupportedModelError("Schmidt expectations need a commuting potential")
        self.ens = E
        self._alg: dict = {}
        self._blocks: dict = {}

    def algebra(self, A: Sequence[int]) -> SchmidtAlgebra:
        A = tuple(sorted(A))
        if A not in self._alg:
            self._alg[A] = schmidt_algebra(self.ens, A)
        return self._alg[A]

    def blocks(self, A: Sequence[int]) -> BoundaryBlocks:
        A = tuple(sorted(A))
        if A not in self._blocks:
            self._blocks[A] = build_boundary_blocks(self.ens, A)
        return self._blocks[A]

    def condexp(self, A: Sequence[int], sites: Sequence[int] | None = None,
                method: str = "kms_projection"):
        sites = self.ens.graph.vertices if sites is None else tuple(sorted(sites))
        if method == "kms_projection":
            alg = self.algebra(A)
            if not set(alg.loc) <= set(sites):
                raise GeometryError("support too small for the expectation")
            return ConditionalExpectation(sites, alg.loc, alg.basis, alg.sigma_loc, self.ens.d,
                                          f"schmidt{tuple(sorted(A))}")
        if method == "block_formula":
            bb = self.blocks(A)
            return BlockConditionalExpectation(sites, bb.loc, bb, self.ens.d)
        raise ValueError(f"unknown method {method!r}")


_FAMILIES: "weakref.WeakKeyDictionary[GibbsEnsemble, SchmidtFamily]" = weakref.WeakKeyDictionary()


def family(E: GibbsEnsemble) -> SchmidtFamily:
    fam = _FAMILIES.get(E)
    if fam is None:
        fam = SchmidtFamily(E)
        _FAMILIES[E] = fam
    return fam


def schmidt_condexp(E: GibbsEnsemble, A: Sequence[int], method: str = "kms_projection",
                    sites: Sequence[int] | None = None):
    return family(E).condexp(A, sites, method)


def tau_state(E: GibbsEnsemble, A: Sequence[int], alpha: tuple[int, ...]) -> np.ndarray:
    bb = family(E).blocks(A)
    for blk in bb.blocks:
        if blk.label == tuple(alpha):
            return blk.tau
    if tuple(alpha) in bb.skipped:
        raise DomainError(f"boundary condition {alpha} has zero weight")
    raise KeyError(f"no boundary condition {alpha}")


def schmidt_lindbladian(E: GibbsEnsemble, A: Sequence[int], picture: str = "heisenberg",
                        sites: Sequence[int] | None = None) -> Superoperator:
    """L^S_A = Σ_{x∈A} (E^S_x − id)."""
    fam = family(E)
    sites = E.graph.vertices if sites is None else tuple(sorted(sites))
    exps = [fam.condexp((x,), sites) for x in sorted(A)]
    k = len(exps)

    def apply(X):
        acc = -k * X
        for Ex in exps:
            acc = acc + (Ex.heisenberg(X) if picture == "heisenberg" else Ex.schrodinger(X))
        return acc

    return Superoperator(apply, sites, E.d, picture)


def condexp_commutation_check(E1, E2, rng: np.random.Generator, E_union=None,
                              samples: int = 6) -> dict[str, float]:
    """Sampled ‖E1E2 − E2E1‖ and, if given, ‖E1E2 − E_union‖ on random unit-norm inputs."""
    dim = E1.d ** len(E1.sites)
    comm = union = 0.0
    for _ in range(samples):
        X = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        X /= np.linalg.norm(X, 2)
        a = E1.heisenberg(E2.heisenberg(X))
        b = E2.heisenberg(E1.heisenberg(X))
        comm = max(comm, float(np.linalg.norm(a - b, 2)))
        if E_union is not None:
            union = max(union, float(np.linalg.norm(a - E_union.heisenberg(X), 2)))
    out = {"commutator": comm}
    if E_union is not None:
        out["union"] = union
    return out


def sandwich_expectations(E: GibbsEnsemble, X: Sequence[int], couplings="xyz", chi: str = "glauber"):
    """(E^D_X, E^S_X, E^D_{X∂}) on the whole graph."""
    from .davies import davies_condexp

    g = E.graph
    X = tuple(sorted(X))
    full = g.vertices
    return (davies_condexp(E, X, full, couplings, chi), schmidt_condexp(E, X),
            davies_condexp(E, closure(g, X), full, couplings, chi))


def sandwich_check(E: GibbsEnsemble, X: Sequence[int], rho: np.ndarray, couplings="xyz",
                   chi: str = "glauber", exps=None) -> tuple[float, float, float]:
    """(D(ρ‖E^D_X ρ), D(ρ‖E^S_X ρ), D(ρ‖E^D_{X∂} ρ)); pass ``exps`` to reuse the expectations."""
    from .dynamics import relative_entropy

    eD, eS, eDp = sandwich_expectations(E, X, couplings, chi) if exps is None else exps
    return tuple(relative_entropy(rho, e.schrodinger(rho)) for e in (eD, eS, eDp))


# ---------------------------------------------------------------- algebra laws


def full_span(alg: SchmidtAlgebra, sites: Sequence[int], d: int = 2) -> np.ndarray:
    """HS-orthonormal rows spanning N_A as vectorized operators on ``sites``."""
    sites = tuple(sites)
    rest = [s for s in sites if s not in alg.loc]
    dr = d ** len(rest)
    vecs = []
    for B in alg.basis:
        for i in range(dr):
            for j in range(dr):
                Eij = np.zeros((dr, dr), dtype=complex)
                Eij[i, j] = 1.0
                T = np.einsum("ab,ij->aibj", B, Eij)
                vecs.append(merge_local(T, sites, alg.loc, d).ravel())
    M = np.array(vecs)
    u, s, vh = np.linalg.svd(M, full_matrices=False)
    return vh[s > 1e-9 * s.max()]


def span_intersection(Q1: np.ndarray, Q2: np.ndarray, tol: float = 1e-8) -> int:
    """Dimension of the intersection of two row spaces with orthonormal rows."""
    s = np.linalg.svd(Q1.conj() @ Q2.T, compute_uv=False)
    return int(np.sum(s > 1 - tol))


def generated_dimension(Q1: np.ndarray, Q2: np.ndarray, dim: int) -> int:
    gens = [q.reshape(dim, dim) for q in np.vstack([Q1, Q2])]
    return len(algebra_closure(gens, dim))


# ---------------------------------------------------------------- qL1 → L∞ clustering


@dataclass(frozen=True)
class QNormResult:
    per_block: dict
    max: float
    notes: tuple[str, ...] = ()


def _block_map(E: GibbsEnsemble, C, D, blk: Block, loc, fam: SchmidtFamily):
    eC = fam.condexp(C, loc)
    eD = fam.condexp(D, loc)
    tau = blk.tau
    V, no, ni = blk.V, blk.n_out, blk.n_in

    def embed_in(X):
        big = np.kron(np.eye(no), X)
        return V @ big @ V.conj().T

    def phi(X):
        Y = embed_in(X)
        return eC.heisenberg(eD.heisenberg(Y)) - np.trace(tau @ X) * (V @ V.conj().T)

    def phi_adj(Y):
        Z = eD.schrodinger(eC.schrodinger(Y))
        W = (V.conj().T @ Z @ V).reshape(no, ni, no, ni)
        Pw = (V.conj().T @ Y @ V).reshape(no, ni, no, ni)
        return np.einsum("onom->nm", W) - np.einsum("onon->", Pw) * tau

    return phi, phi_adj


def _top_abs(M: np.ndarray) -> tuple[float, np.ndarray]:
    w, v = np.linalg.eigh(0.5 * (M + M.conj().T))
    k = int(np.argmax(np.abs(w)))
    return float(w[k]), v[:, k]


def _alt_positive(phi, phi_adj, tau, rng, restarts, tol, max_iter=500):
    ti = _full_rank_pow(tau, -0.5)
    m = tau.shape[0]
    best = 0.0
    for r in range(restarts):
        if r < m:
            w0 = np.zeros(m, dtype=complex)
            w0[r] = 1.0
        else:
            w0 = rng.normal(size=m) + 1j * rng.normal(size=m)
        v = ti @ (w0 / np.linalg.norm(w0))
        val = 0.0
        for _ in range(max_iter):
            lam, u = _top_abs(phi(np.outer(v, v.conj())))
            M = phi_adj(np.outer(u, u.conj()))
            mu, w = _top_abs(ti @ M @ ti)
            v = ti @ w
            if abs(abs(mu) - val) < tol:
                val = abs(mu)
                break
            val = abs(mu)
        best = max(best, val)
    return best


def _alt_general(phi, phi_adj, tau, rng, restarts, tol, max_iter=500):
    ti = _full_rank_pow(tau, -0.5)
    m = tau.shape[0]
    best = 0.0
    for _ in range(restarts):
        v1 = ti @ _unit(rng, m)
        v2 = ti @ _unit(rng, m)
        val = 0.0
        for _ in range(max_iter):
            Y = phi(np.outer(v1, v2.conj()))
            U, s, Vh = np.linalg.svd(Y)
            a, b = U[:, 0], Vh[0].conj()
            M = phi_adj(np.outer(a, b.conj())).conj().T
            U2, s2, Vh2 = np.linalg.svd(ti @ M @ ti)
            v1, v2 = ti @ Vh2[0].conj(), ti @ U2[:, 0]
            if abs(s2[0] - val) < tol:
                val = s2[0]
                break
            val = s2[0]
        best = max(best, float(val))
    return best


def _unit(rng, m):
    x = rng.normal(size=m) + 1j * rng.normal(size=m)
    return x / np.linalg.norm(x)


def q_l1_linf_norm(E: GibbsEnsemble, C: Sequence[int], D: Sequence[int], restarts: int = 16,
                   tol: float = 1e-9, positive: bool = True, seed: int = 0) -> QNormResult:
    """Block-wise ‖E_C∘E_D − E_{C∪D} : L₁(τ^{(α)}) → L∞‖ over positive rank-one inputs."""
    C, D = tuple(sorted(C)), tuple(sorted(D))
    if not set(C) & set(D):
        raise GeometryError("C and D must overlap")
    fam = family(E)
    CD = tuple(sorted(set(C) | set(D)))
    bb = fam.blocks(CD)
    loc = bb.loc
    rng = np.random.default_rng(seed)
    per, notes = {}, [f"skipped zero-weight block {lab}" for lab in bb.skipped]
    for blk in bb.blocks:
        phi, phi_adj = _block_map(E, C, D, blk, loc, fam)
        alt = _alt_positive if positive else _alt_general
        per[blk.label] = alt(phi, phi_adj, blk.tau, rng, restarts, tol)
    if not per:
        raise EstimationError("no block with nonzero weight")
    return QNormResult(per, max(per.values()), tuple(notes))


def q_norm_oracle(E: GibbsEnsemble, C, D, label: tuple[int, ...], starts: int = 24,
                  seed: int = 1) -> float:
    """Independent multistart BFGS over (u, v) of (u†Φ(vv†)u)² / (|u|⁴ (v†τv)²)."""
    fam = family(E)
    CD = tuple(sorted(set(C) | set(D)))
    bb = fam.blocks(CD)
    blk = next(b for b in bb.blocks if b.label == tuple(label))
    phi, phi_adj = _block_map(E, tuple(sorted(C)), tuple(sorted(D)), blk, bb.loc, fam)
    tau = blk.tau
    m = tau.shape[0]
    n = blk.V.shape[0]
    rng = np.random.default_rng(seed)

    def split(x):
        u = x[:n] + 1j * x[n:2 * n]
        v = x[2 * n:2 * n + m] + 1j * x[2 * n + m:]
        return u, v

    def f(x):
        u, v = split(x)
        Y = phi(np.outer(v, v.conj()))
        gval = np.vdot(u, Y @ u).real
        a = np.vdot(u, u).real
        b = np.vdot(v, tau @ v).real
        M = phi_adj(np.outer(u, u.conj()))
        F = gval**2 / (a**2 * b**2)
        gu = 2 * gval * (2 * Y @ u) / (a**2 * b**2) - 2 * gval**2 * (2 * u) / (a**3 * b**2)
        gv = 2 * gval * (2 * M @ v) / (a**2 * b**2) - 2 * gval**2 * (2 * tau @ v) / (a**2 * b**3)
        grad = np.concatenate([gu.real, gu.imag, gv.real, gv.imag])
        return -F, -grad

    best = 0.0
    for _ in range(starts):
        x0 = rng.normal(size=2 * (n + m))
        r = minimize(f, x0, jac=True, method="BFGS", options={"gtol": 1e-12, "maxiter": 5000})
        best = max(best, float(np.sqrt(max(-r.fun, 0.0))))
    return best
