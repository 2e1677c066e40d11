"""Static clustering measures, the strong similarity relation, and decay fits."""

from __future__ import annotations

import hashlib
import weakref
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import linregress

from .dynamics import max_relative_entropy, relative_entropy
from .errors import DomainError, GeometryError
from .hamiltonian import GibbsEnsemble
from .lattice import boundary, shields
from .linalg import QuantumState, _full_rank_pow, apply_fn, embed_array, ptrace_array, random_density, split_local

FIT_FLOOR = 1e-12
ZERO_LEVEL = 1e-13
MEASURES = ("covariance", "l2_clustering", "local_indist", "strong_local_indist",
            "mixing_condition", "mutual_information")
EXTRA_MEASURES = ("max_mutual_information", "sli_similarity", "mixing_similarity")


# ---------------------------------------------------------------- helpers

_SQRT: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def _unpack(sigma, sites=None):
    if hasattr(sigma, "support"):
        return np.asarray(sigma.mat, dtype=complex), tuple(sigma.support), sigma.d
    m = np.asarray(sigma, dtype=complex)
    if sites is None:
        raise ValueError("pass the site list for a bare array")
    return m, tuple(sites), 2


def _disjoint(A, C):
    if set(A) & set(C):
        raise ValueError("regions must be disjoint")


def ordered_marginal(m: np.ndarray, sites: Sequence[int], parts: Sequence[Sequence[int]], d: int) -> np.ndarray:
    """Marginal on the union of ``parts`` with tensor factors ordered part by part."""
    keep = tuple(sorted(set().union(*map(set, parts))))
    r = ptrace_array(m, sites, keep, d)
    order = [keep.index(s) for p in parts for s in sorted(p)]
    k = len(keep)
    t = r.reshape([d] * (2 * k)).transpose(order + [k + i for i in order])
    return t.reshape(d ** k, d ** k)


def hermitian_basis(dim: int) -> np.ndarray:
    """HS-orthonormal Hermitian basis of dim×dim matrices."""
    out = []
    for i in range(dim):
        e = np.zeros((dim, dim), dtype=complex)
        e[i, i] = 1.0
        out.append(e)
    for i in range(dim):
        for j in range(i + 1, dim):
            e = np.zeros((dim, dim), dtype=complex)
            e[i, j] = e[j, i] = 1 / np.sqrt(2)
            out.append(e)
            e = np.zeros((dim, dim), dtype=complex)
            e[i, j], e[j, i] = -1j / np.sqrt(2), 1j / np.sqrt(2)
            out.append(e)
    return np.array(out)


def _sign(F: np.ndarray) -> tuple[np.ndarray, float]:
    w, v = np.linalg.eigh(0.5 * (F + F.conj().T))
    s = np.where(w >= 0, 1.0, -1.0)
    return (v * s) @ v.conj().T, float(np.abs(w).sum())


# ---------------------------------------------------------------- covariance


def covariance(sigma, f: np.ndarray, g: np.ndarray, kind: str = "gns", sites=None) -> float:
    """Cov_σ(f, g) for self-adjoint f, g given on the full support of σ."""
    m = np.asarray(getattr(sigma, "mat", sigma), dtype=complex)
    f, g = np.asarray(f, dtype=complex), np.asarray(g, dtype=complex)
    for x in (f, g):
        if np.abs(x - x.conj().T).max() > 1e-10:
            raise ValueError("observables must be self-adjoint")
    mf, mg = np.trace(m @ f).real, np.trace(m @ g).real
    if kind == "gns":
        return float(np.trace(m @ f @ g).real - mf * mg)
    if kind == "kms":
        r = _full_rank_pow(m, 0.5)
        return float(np.trace(r @ f @ r @ g).real - mf * mg)
    raise ValueError(f"unknown covariance kind {kind!r}")


def _cross_matrix(m, sites, A, C, d, kind):
    """M_ij = Cov(B_i ⊗ 1, 1 ⊗ B'_j) over Hermitian bases on A and C."""
    dA, dC = d ** len(A), d ** len(C)
    BA, BC = hermitian_basis(dA), hermitian_basis(dC)
    if kind == "gns":
        rho = ordered_marginal(m, sites, [A, C], d)
        rA = ptrace_array(m, sites, A, d)
        rC = ptrace_array(m, sites, C, d)
        delta = (rho - np.kron(rA, rC)).reshape(dA, dC, dA, dC)
        return np.einsum("acbd,iba,jdc->ij", delta, BA, BC, optimize=True).real
    if kind == "kms":
        r = _full_rank_pow(m, 0.5)
        mA = np.array([np.trace(ptrace_array(m, sites, A, d) @ b).real for b in BA])
        mC = np.array([np.trace(ptrace_array(m, sites, C, d) @ b).real for b in BC])
        M = np.empty((len(BA), len(BC)))
        for i, b in enumerate(BA):
            N = ptrace_array(r @ embed_array(b, A, sites, d) @ r, sites, C, d)
            M[i] = [np.trace(N @ c).real for c in BC]
        return M - np.outer(mA, mC)
    raise ValueError(f"unknown covariance kind {kind!r}")


@dataclass(frozen=True)
class CovarianceSup:
    value: float
    upper_bound: float
    f: np.ndarray = field(repr=False)
    g: np.ndarray = field(repr=False)


def covariance_sup(sigma, A: Sequence[int], C: Sequence[int], kind: str = "gns", sites=None,
                   restarts: int = 8, tol: float = 1e-9, rng: np.random.Generator | None = None,
                   max_iter: int = 500) -> CovarianceSup:
    """sup over ‖f‖, ‖g‖ ≤ 1 of Cov(f, g), by alternating trace-norm duality.

    The upper bound ‖σ_AC − σ_A⊗σ_C‖₁ is certified for the GNS form.
    """
    m, sites, d = _unpack(sigma, sites)
    A, C = tuple(sorted(A)), tuple(sorted(C))
    _disjoint(A, C)
    rng = np.random.default_rng(0) if rng is None else rng
    M = _cross_matrix(m, sites, A, C, d, kind)
    dA, dC = d ** len(A), d ** len(C)
    BA, BC = hermitian_basis(dA), hermitian_basis(dC)
    rho = ordered_marginal(m, sites, [A, C], d)
    bound = float(np.abs(np.linalg.eigvalsh(rho - np.kron(ptrace_array(m, sites, A, d),
                                                            ptrace_array(m, sites, C, d)))).sum())
    best = (-1.0, None, None)
    for _ in range(restarts):
        g, _ = _sign(sum(rng.normal() * b for b in BC))
        val = -np.inf
        for _ in range(max_iter):
            bvec = np.einsum("jab,ba->j", BC, g).real
            f, _ = _sign(np.einsum("i,iab->ab", M @ bvec, BA))
            avec = np.einsum("iab,ba->i", BA, f).real
            g, new = _sign(np.einsum("j,jab->ab", M.T @ avec, BC))
            if abs(new - val) < tol:
                val = new
                break
            val = new
        if val > best[0]:
            best = (val, f, g)
    return CovarianceSup(float(best[0]), bound, best[1], best[2])


def _kms_gram(m, sites, R, d, r=None):
    """G_ij = Tr[σ^{1/2} B_i σ^{1/2} B_j] for the Hermitian basis on R."""
    B = hermitian_basis(d ** len(R))
    r = _full_rank_pow(m, 0.5) if r is None else r
    t = split_local(r, sites, R, d)
    T = np.einsum("axby,cyex->abce", t, t, optimize=True)
    return np.einsum("abce,ibc,jea->ij", T, B, B, optimize=True).real


def l2_clustering_value(sigma, A: Sequence[int], C: Sequence[int], sites=None, tol: float = 1e-12,
                        rng: np.random.Generator | None = None, max_iter: int = 10000,
                        sqrt_sigma: np.ndarray | None = None) -> float:
    """sup Cov^GNS(f, g)/(‖f‖_{2,σ}‖g‖_{2,σ}) by power iteration in the whitened bases."""
    m, sites, d = _unpack(sigma, sites)
    A, C = tuple(sorted(A)), tuple(sorted(C))
    _disjoint(A, C)
    rng = np.random.default_rng(0) if rng is None else rng
    M = _cross_matrix(m, sites, A, C, d, "gns")
    r = _full_rank_pow(m, 0.5) if sqrt_sigma is None else sqrt_sigma
    WA = apply_fn(_kms_gram(m, sites, A, d, r), "pow", -0.5, generalized=True).real
    WC = apply_fn(_kms_gram(m, sites, C, d, r), "pow", -0.5, generalized=True).real
    K = WA @ M @ WC
    b = rng.normal(size=K.shape[1])
    b /= np.linalg.norm(b)
    val = 0.0
    for _ in range(max_iter):
        a = K @ b
        na = np.linalg.norm(a)
        if na == 0:
            return 0.0
        b = K.T @ (a / na)
        new = np.linalg.norm(b)
        b /= new
        if abs(new - val) <= tol * max(new, 1e-300):
            return float(new)
        val = new
    return float(val)


# ---------------------------------------------------------------- local indistinguishability


def _abc_marginals(E: GibbsEnsemble, A, B, C):
    A, B, C = (tuple(sorted(x)) for x in (A, B, C))
    if set(A) & set(B) or set(B) & set(C) or set(A) & set(C):
        raise ValueError("A, B, C must be disjoint")
    if not shields(E.graph, A, B, C):
        raise ValueError("B does not shield A from C")
    ABC = tuple(sorted(A + B + C))
    AB = tuple(sorted(A + B))
    return E.marginal(ABC, A), E.marginal(AB, A)


def local_indist(E: GibbsEnsemble, A, B, C) -> float:
    """‖tr_{BC} σ^{ABC} − tr_B σ^{AB}‖₁."""
    r1, r2 = _abc_marginals(E, A, B, C)
    return float(np.abs(np.linalg.eigvalsh(r1 - r2)).sum())


def strong_local_indist(E: GibbsEnsemble, A, B, C, one_sided: bool = False) -> float:
    """‖τ^{-1/2} ω τ^{-1/2} − 1‖ with ω = tr_{BC} σ^{ABC}, τ = tr_B σ^{AB} (or ‖ωτ⁻¹ − 1‖)."""
    r1, r2 = _abc_marginals(E, A, B, C)
    if one_sided:
        X = r1 @ apply_fn(r2, "ginv") - apply_fn(r2, "pow", 0.0, generalized=True)
        return float(np.linalg.norm(X, 2))
    s = apply_fn(r2, "pow", -0.5, generalized=True)
    P = apply_fn(r2, "pow", 0.0, generalized=True)
    return float(np.abs(np.linalg.eigvalsh(s @ r1 @ s - P)).max())


# ---------------------------------------------------------------- mixing and mutual information


def _ac(sigma, A, C, sites):
    m, sites, d = _unpack(sigma, sites)
    A, C = tuple(sorted(A)), tuple(sorted(C))
    _disjoint(A, C)
    rho = ordered_marginal(m, sites, [A, C], d)
    prod = np.kron(ptrace_array(m, sites, A, d), ptrace_array(m, sites, C, d))
    return rho, prod


def mixing_condition(sigma, A, C, sites=None) -> float:
    """‖σ_AC (σ_A⊗σ_C)⁻¹ − 1‖_∞."""
    rho, prod = _ac(sigma, A, C, sites)
    w, v = np.linalg.eigh(prod)
    if w.min() <= 1e-14 * w.max():
        raise DomainError("product of marginals is singular")
    inv = (v / w) @ v.conj().T
    return float(np.linalg.norm(rho @ inv - np.eye(len(w)), 2))


def mutual_information(sigma, A, C, sites=None) -> float:
    rho, prod = _ac(sigma, A, C, sites)
    return relative_entropy(rho, prod)


def max_mutual_information(sigma, A, C, sites=None) -> float:
    rho, prod = _ac(sigma, A, C, sites)
    return max_relative_entropy(rho, prod)


# ---------------------------------------------------------------- similarity relation


@dataclass(frozen=True)
class SimilarityResult:
    epsilon: float
    dmax: float
    dmax_sym: float
    support_equal: bool

    def bracket_ok(self, tol: float = 1e-10) -> bool:
        """D_max ≤ log(1+ε) ≤ ε ≤ d e^{d} with d = ‖log ω^{1/2}τ⁻¹ω^{1/2}‖."""
        if not self.support_equal:
            return True
        e, d, ds = self.epsilon, self.dmax, self.dmax_sym
        return d <= np.log1p(e) + tol and np.log1p(e) <= e + tol and e <= ds * np.exp(ds) + tol


def relation_epsilon(A: np.ndarray, B: np.ndarray, tol: float = 1e-12) -> float:
    """‖A^{1/2} B⁻¹ A^{1/2} − 1_supp‖ for positive A, B (generalized inverse)."""
    ra = apply_fn(A, "pow", 0.5, generalized=True)
    P = apply_fn(A, "pow", 0.0, generalized=True)
    X = ra @ apply_fn(B, "ginv") @ ra - P
    return float(np.abs(np.linalg.eigvalsh(0.5 * (X + X.conj().T))).max())


def _support(m, tol):
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    V = v[:, w > tol * max(w.max(), 1e-300)]
    return V @ V.conj().T


def similarity(omega, tau, tol: float = 1e-12) -> SimilarityResult:
    omega = np.asarray(getattr(omega, "mat", omega), dtype=complex)
    tau = np.asarray(getattr(tau, "mat", tau), dtype=complex)
    same = bool(np.abs(_support(omega, tol) - _support(tau, tol)).max() < 1e-8)
    eps = relation_epsilon(omega, tau)
    ra = apply_fn(omega, "pow", 0.5, generalized=True)
    X = ra @ apply_fn(tau, "ginv") @ ra
    w = np.linalg.eigvalsh(0.5 * (X + X.conj().T))
    w = w[w > tol]
    dsym = float(np.abs(np.log(w)).max()) if w.size else float("inf")
    return SimilarityResult(eps, max_relative_entropy(omega, tau), dsym, same)


# ---------------------------------------------------------------- relation properties


def _near(B: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    """A with the spectrum of B^{-1/2} A B^{-1/2} inside [1−eps, 1+eps]."""
    dim = B.shape[0]
    H = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    H = 0.5 * (H + H.conj().T)
    H *= eps / np.abs(np.linalg.eigvalsh(H)).max()
    rb = apply_fn(B, "sqrt")
    return rb @ (np.eye(dim) + H) @ rb


def _rand_pos(dim, rng):
    return random_density(dim, rng) * dim


def relation_properties_check(rng: np.random.Generator | None = None, samples: int = 500,
                              max_dim: int = 16, tol: float = 1e-10) -> dict[str, dict]:
    """Measured ε against each stated bound; returns {property: {"worst_slack", "failures"}}."""
    rng = np.random.default_rng(0) if rng is None else rng
    rep = {k: {"worst_slack": np.inf, "failures": 0} for k in
           ("symmetry", "inverse_symmetry", "transitivity", "tensor", "locality", "normalization",
            "chaining", "dmax_bracket")}

    def record(name, lhs, rhs):
        s = rhs - lhs
        r = rep[name]
        r["worst_slack"] = min(r["worst_slack"], s)
        if s < -tol:
            r["failures"] += 1

    dims = [d for d in (2, 4, 8, 16) if d <= max_dim]
    for k in range(samples):
        dim = dims[k % len(dims)]
        e1, e2 = rng.uniform(0.0, 0.45, size=2)
        B = _rand_pos(dim, rng)
        A = _near(B, e1, rng)
        eA = relation_epsilon(A, B)
        record("symmetry", relation_epsilon(B, A), eA / (1 - eA))
        record("inverse_symmetry", relation_epsilon(np.linalg.inv(B), np.linalg.inv(A)), eA)
        C = _near(B, e2, rng)
        C = np.linalg.inv(_near(np.linalg.inv(B), e2, rng)) if k % 2 else C
        eBC = relation_epsilon(B, C)
        record("transitivity", relation_epsilon(A, C), eA * eBC + eA + eBC)
        small = max(2, dim // 4)
        F = _rand_pos(small, rng)
        Ft = _near(F, e2, rng)
        eF = relation_epsilon(F, Ft)
        record("tensor", relation_epsilon(np.kron(A, F), np.kron(B, Ft)), eA * eF + eA + eF)
        # bipartite K = H ⊗ H' with H' of dimension 2
        if dim >= 4:
            dh = dim // 2
            P = np.diag(rng.integers(0, 2, size=2).astype(float))
            if P.sum() == 0:
                P[0, 0] = 1.0
            Pk = np.kron(np.eye(dh), P)

            def red(X):
                return np.einsum("aibi->ab", (Pk @ X @ Pk).reshape(dh, 2, dh, 2))

            record("locality", relation_epsilon(red(A), red(B)), eA)
            nA, nB = red(A), red(B)
            record("normalization", relation_epsilon(nA / np.trace(nA).real, nB / np.trace(nB).real),
                   eA * (2 + eA))
        K = int(rng.integers(2, 5))
        eps_step = rng.uniform(0.0, 0.2)
        chain = [_rand_pos(dim, rng)]
        for _ in range(K):
            chain.append(_near(chain[-1], eps_step, rng))
        step = max(relation_epsilon(chain[i], chain[i + 1]) for i in range(K))
        record("chaining", relation_epsilon(chain[0], chain[-1]), (1 + step) ** K - 1)
        om = A / np.trace(A).real
        ta = B / np.trace(B).real
        sr = similarity(om, ta)
        e, dm, ds = sr.epsilon, sr.dmax, sr.dmax_sym
        record("dmax_bracket", max(dm - np.log1p(e), np.log1p(e) - e, e - ds * np.exp(ds)), 0.0)
    return rep


# ---------------------------------------------------------------- decay fits and scans


@dataclass(frozen=True)
class DecayFit:
    samples: tuple[tuple[float, float], ...]
    rate: float
    prefactor: float
    r_squared: float
    window: tuple[float, float]
    exact_zero: bool = False


def fit_decay(ls: Sequence[float], values: Sequence[float], floor: float = FIT_FLOOR) -> DecayFit:
    """Least squares of log(value) against l over values above ``floor``."""
    ls = np.asarray(ls, float)
    vals = np.asarray(values, float)
    samples = tuple((float(a), float(b)) for a, b in zip(ls, vals))
    if np.all(np.abs(vals) < ZERO_LEVEL):
        return DecayFit(samples, float("inf"), 0.0, 1.0, (float(ls.min()), float(ls.max())), True)
    keep = vals > floor
    if keep.sum() < 3:
        raise ValueError("decay fit needs at least three values above the noise floor")
    res = linregress(ls[keep], np.log(vals[keep]))
    r2 = float(min(max(res.rvalue ** 2, 0.0), 1.0))
    return DecayFit(samples, float(-res.slope), float(np.exp(res.intercept)), r2,
                    (float(ls[keep].min()), float(ls[keep].max())))


def model_hash(E: GibbsEnsemble) -> str:
    h = hashlib.sha256()
    g = E.graph
    h.update(repr((g.kind, g.n, g.edges, g.d, E.potential.kind, E.potential.params)).encode())
    for e in sorted(E.potential.terms):
        h.update(np.ascontiguousarray(E.potential.terms[e]).tobytes())
    return h.hexdigest()[:16]


def measure_value(E: GibbsEnsemble, measure: str, A, B, C) -> float:
    """One scan point; A and C are separated by B (B shields A from C)."""
    g = E.graph
    if measure in ("local_indist", "strong_local_indist", "sli_similarity"):
        if measure == "local_indist":
            return local_indist(E, A, B, C)
        if measure == "sli_similarity":
            return relation_epsilon(*_abc_marginals(E, A, B, C))
        return strong_local_indist(E, A, B, C)
    if measure == "l2_clustering":
        if E not in _SQRT:
            _SQRT[E] = _full_rank_pow(E.sigma(g.vertices), 0.5)
        return l2_clustering_value(E.sigma(g.vertices), A, C, sites=g.vertices, sqrt_sigma=_SQRT[E])
    # the remaining measures only see σ_AC
    AC = tuple(sorted(tuple(A) + tuple(C)))
    sig = QuantumState(E.marginal(g.vertices, AC), AC, E.d)
    if measure == "covariance":
        return covariance_sup(sig, A, C).value
    if measure == "mixing_condition":
        return mixing_condition(sig, A, C)
    if measure == "mixing_similarity":
        rho, prod = _ac(sig, A, C, None)
        return relation_epsilon(rho, prod)
    if measure == "mutual_information":
        return mutual_information(sig, A, C)
    if measure == "max_mutual_information":
        return max_mutual_information(sig, A, C)
    raise ValueError(f"unknown measure {measure!r}")


@dataclass(frozen=True)
class ScanResult:
    measure: str
    rows: tuple[dict, ...]
    fit: DecayFit


CSV_COLUMNS = ("l", "value", "boundary_A", "boundary_C", "measure", "beta", "model_hash")


def chain_scan_geometry(l: int, start: int = 0, width_A: int = 1, width_C: int = 1):
    """A = [start, start+width_A), then l separating sites B, then C of width width_C."""
    A = tuple(range(start, start + width_A))
    B = tuple(range(A[-1] + 1, A[-1] + 1 + l))
    C = tuple(range(A[-1] + 1 + l, A[-1] + 1 + l + width_C))
    return A, B, C


def decay_scan(E: GibbsEnsemble, measure: str, ls: Sequence[int] = range(1, 7), geometry=None) -> ScanResult:
    """Measure across separations l, then an exponential fit.

    ``geometry(l) -> (A, B, C)``; default is the chain layout with l separating sites.
    """
    if measure not in MEASURES + EXTRA_MEASURES:
        raise ValueError(f"unknown measure {measure!r}")
    ls = list(ls)
    if len(ls) < 3:
        raise ValueError("scan needs at least three distances")
    geometry = chain_scan_geometry if geometry is None else geometry
    g = E.graph
    mh = model_hash(E)
    rows, vals = [], []
    for l in ls:
        A, B, C = geometry(l)
        if max(A + B + C) >= g.n:
            raise GeometryError(f"scan point l={l} does not fit in the graph")
        v = measure_value(E, measure, A, B, C)
        vals.append(v)
        rows.append({"l": l, "value": v, "boundary_A": len(boundary(g, A)), "boundary_C": len(boundary(g, C)),
                     "measure": measure, "beta": E.beta, "model_hash": mh})
    return ScanResult(measure, tuple(rows), fit_decay(ls, vals))
