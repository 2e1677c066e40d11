"""Davies generators: Bohr decomposition, KMS rates, gap and fixed-point projections."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .channels import ConditionalExpectation, Superoperator
from .errors import ConditioningError, ConfigError, ResourceError, UnsupportedModelError
from .hamiltonian import GibbsEnsemble, hamiltonian_on
from .lattice import closure
from .linalg import PAULI, _full_rank_pow, embed_array, merge_local, random_hermitian, split_local

DENSE_GAP_MAX_DIM = 32
MAX_DENSE_GENERATOR_DIM = 64
CHI_KINDS = ("glauber", "metropolis", "exp_half")


# ---------------------------------------------------------------- Bohr frequencies


def _group(values: np.ndarray, tol: float) -> np.ndarray:
    """Cluster ids for sorted-adjacent values closer than ``tol`` (transitive)."""
    order = np.argsort(values)
    ids = np.empty(len(values), dtype=int)
    cid, prev, start = 0, None, None
    for k in order:
        v = values[k]
        if prev is not None and v - prev > tol:
            cid += 1
            start = v
        elif prev is not None and start is not None and v - start > 2 * tol:
            warnings.warn("Bohr frequency cluster wider than tolerance; merged transitively")
        if start is None:
            start = v
        ids[k] = cid
        prev = v
    return ids


def bohr_decompose(H: np.ndarray, S: np.ndarray, tol: float | None = None,
                   eig: tuple[np.ndarray, np.ndarray] | None = None) -> list[tuple[float, np.ndarray]]:
    """S(ω) = Σ_{E'−E=ω} P_E S P_{E'}; the components sum to S."""
    H = np.asarray(H, dtype=complex)
    w, v = eig if eig is not None else np.linalg.eigh(0.5 * (H + H.conj().T))
    scale = max(np.abs(w).max(initial=0.0), 1.0)
    tol = 1e-9 * scale if tol is None else tol
    # group energies first so exact degeneracies share a projector
    eid = _group(w, tol)
    energies = np.array([w[eid == k].mean() for k in range(eid.max() + 1)])
    w = energies[eid]
    St = v.conj().T @ S @ v
    diff = w[None, :] - w[:, None]  # E'_b − E_a
    fid = _group(diff.ravel(), tol).reshape(diff.shape)
    out = []
    for k in range(fid.max() + 1):
        mask = fid == k
        comp = np.where(mask, St, 0.0)
        if not np.any(np.abs(comp) > 1e-14 * max(1.0, np.abs(St).max())):
            continue
        out.append((float(diff[mask].mean()), v @ comp @ v.conj().T))
    return out


def chi_function(kind: str, beta: float) -> Callable[[float], float]:
    """Transition rate χ with χ(−ω) = e^{−βω} χ(ω)."""
    if beta < 0:
        raise ConfigError("beta must be >= 0")
    if kind == "glauber":
        return lambda w: 0.5 * (1.0 + math.tanh(0.5 * beta * w))
    if kind == "metropolis":
        return lambda w: min(1.0, math.exp(beta * w))
    if kind == "exp_half":
        return lambda w: math.exp(0.5 * beta * w)
    raise ConfigError(f"unknown rate function {kind!r}")


def default_couplings(d: int, which: str = "xyz") -> list[tuple[str, np.ndarray]]:
    if d == 2:
        names = {"xyz": "XYZ", "x": "X", "z": "Z"}.get(which)
        if names is None:
            raise ConfigError(f"unknown coupling preset {which!r}")
        return [(p, PAULI[p]) for p in names]
    shift = np.roll(np.eye(d, dtype=complex), 1, axis=0)
    clock = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    out = []
    for name, A in (("shift", shift), ("clock", clock)):
        out.append((name + "_re", A + A.conj().T))
        out.append((name + "_im", 1j * (A - A.conj().T)))
    return [(n, A) for n, A in out if np.abs(A).max() > 1e-12]


# ---------------------------------------------------------------- generator


@dataclass(frozen=True)
class Jump:
    site: int
    label: str
    omega: float
    op: np.ndarray  # acting on ``support``
    rate: float
    support: tuple[int, ...]


@dataclass(frozen=True)
class JumpSet:
    jumps: tuple[Jump, ...]

    def reconstruction_residual(self, couplings: dict, d: int) -> float:
        """max ‖Σ_ω S(ω) − S‖ over (site, label)."""
        worst = 0.0
        groups: dict = {}
        for j in self.jumps:
            groups.setdefault((j.site, j.label), []).append(j)
        for (x, lab), js in groups.items():
            sup = js[0].support
            target = embed_array(couplings[lab], (x,), sup, d)
            worst = max(worst, float(np.abs(sum(j.op for j in js) - target).max()))
        return worst

    def kms_rate_residual(self, chi: Callable[[float], float], beta: float) -> float:
        worst = 0.0
        for j in self.jumps:
            w = j.omega
            worst = max(worst, abs(chi(-w) - math.exp(-beta * w) * chi(w)))
        return worst


class DaviesGenerator:
    """Davies Lindbladian on ``region`` with single-site couplings.

    ``mode='local'`` builds the jumps of site x from H restricted to x∂ (valid
    for commuting potentials); ``mode='global'`` uses the Bohr data of H_Γ.
    """

    def __init__(self, E: GibbsEnsemble, region: Sequence[int] | None = None,
                 couplings: str | Sequence[tuple[str, np.ndarray]] = "xyz",
                 chi: str = "glauber", mode: str | None = None, active: Sequence[int] | None = None):
        self.ens = E
        g = E.graph
        self.sites = tuple(sorted(region)) if region is not None else g.vertices
        self.active = tuple(sorted(active)) if active is not None else self.sites
        if not set(self.active) <= set(self.sites):
            raise ValueError("active sites must lie in the region")
        self.d = E.d
        if isinstance(couplings, str):
            couplings = default_couplings(self.d, couplings)
        self.couplings = {name: np.asarray(A, dtype=complex) for name, A in couplings}
        self.chi_kind = chi
        self.chi = chi_function(chi, E.beta)
        if mode is None:
            mode = "local" if E.potential.commuting else "global"
        if mode == "local" and not E.potential.commuting:
            raise UnsupportedModelError("local Davies terms need a commuting potential")
        if mode not in ("local", "global"):
            raise ConfigError(f"unknown mode {mode!r}")
        self.mode = mode
        self.H = hamiltonian_on(E.potential, self.sites)
        self._build()

    def _build(self) -> None:
        jumps = []
        self._terms = {}  # site -> (support, A stack sqrt(rate)·S, K)
        geig = None
        if self.mode == "global":
            geig = np.linalg.eigh(self.H)
        for x in self.active:
            if self.mode == "local":
                sup = tuple(v for v in closure(self.ens.graph, [x]) if v in self.sites)
                Hl = hamiltonian_on(self.ens.potential, sup)
                eig = np.linalg.eigh(Hl)
            else:
                sup, Hl, eig = self.sites, self.H, geig
            dl = self.d ** len(sup)
            stack, K = [], np.zeros((dl, dl), dtype=complex)
            for lab, A in self.couplings.items():
                S = embed_array(A, (x,), sup, self.d)
                for w, Sw in bohr_decompose(Hl, S, eig=eig):
                    r = self.chi(w)
                    jumps.append(Jump(x, lab, w, Sw, r, sup))
                    if r > 0:
                        stack.append(math.sqrt(r) * Sw)
                        K += r * Sw.conj().T @ Sw
            A = np.array(stack) if stack else np.zeros((0, dl, dl), dtype=complex)
            self._terms[x] = (sup, A, K)
        self.jumps = JumpSet(tuple(jumps))

    # -- application on operators over self.sites (or a superset given by ``sites``)

    def _dissipate(self, X: np.ndarray, picture: str, sites: tuple[int, ...], which) -> np.ndarray:
        out = np.zeros_like(X)
        for x in which:
            sup, A, K = self._terms[x]
            T = split_local(X, sites, sup, self.d)
            dl, Dr = T.shape[0], T.shape[1]
            left, right = (A.conj().transpose(0, 2, 1), A) if picture == "heisenberg" \
                else (A, A.conj().transpose(0, 2, 1))
            # Σ_k (left_k ⊗ 1) T (right_k ⊗ 1) on the local index
            Y = np.matmul(left, T.reshape(dl, -1)).reshape(-1, dl * Dr, dl, Dr).transpose(0, 1, 3, 2)
            jump = np.matmul(Y, right[:, None]).sum(axis=0).transpose(0, 2, 1).reshape(T.shape)
            KT = (K @ T.reshape(dl, -1)).reshape(T.shape)
            TK = (T.transpose(0, 1, 3, 2) @ K).transpose(0, 1, 3, 2)
            out += merge_local(jump - 0.5 * (KT + TK), sites, sup, self.d)
        return out

    def apply(self, X: np.ndarray, picture: str = "heisenberg", part: str = "full",
              sites: Sequence[int] | None = None, restrict: Sequence[int] | None = None) -> np.ndarray:
        sites = self.sites if sites is None else tuple(sites)
        which = self.active if restrict is None else tuple(restrict)
        X = np.asarray(X, dtype=complex)
        out = self._dissipate(X, picture, sites, which)
        if part == "full":
            H = embed_array(self.H, self.sites, sites, self.d) if sites != self.sites else self.H
            c = H @ X - X @ H
            out += 1j * c if picture == "heisenberg" else -1j * c
        return out

    def superop(self, picture: str = "heisenberg", part: str = "full") -> Superoperator:
        return Superoperator(lambda X: self.apply(X, picture, part), self.sites, self.d, picture)

    def dense(self, picture: str = "heisenberg", part: str = "full") -> Superoperator:
        """Generator as an explicit row-major matrix."""
        dim = self.d ** len(self.sites)
        if dim > MAX_DENSE_GENERATOR_DIM:
            raise ResourceError(f"dense generator limited to dimension {MAX_DENSE_GENERATOR_DIM}")
        I = np.eye(dim, dtype=complex)
        M = np.zeros((dim * dim, dim * dim), dtype=complex)
        for x in self.active:
            sup, A, K = self._terms[x]
            Kf = embed_array(K, sup, self.sites, self.d)
            for a in A:
                S = embed_array(a, sup, self.sites, self.d)
                if picture == "heisenberg":
                    M += np.kron(S.conj().T, S.T)
                else:
                    M += np.kron(S, S.conj())
            M -= 0.5 * (np.kron(Kf, I) + np.kron(I, Kf.T))
        if part == "full":
            ham = np.kron(self.H, I) - np.kron(I, self.H.T)
            M += 1j * ham if picture == "heisenberg" else -1j * ham
        return Superoperator.from_matrix(M, self.sites, self.d, picture)

    def local_superop(self, X: Sequence[int], picture: str = "heisenberg") -> Superoperator:
        """Dissipative L_X = Σ_{x∈X} L_x viewed on X∂ ∩ region."""
        X = tuple(sorted(X))
        sup = tuple(sorted(set().union(*(self._terms[x][0] for x in X))))
        return Superoperator(lambda Y: self.apply(Y, picture, "dissipative", sup, X), sup, self.d, picture)


# ---------------------------------------------------------------- symmetry and spectra


def detailed_balance_residual(L: Superoperator, sigma: np.ndarray, rng: np.random.Generator | None = None,
                              samples: int = 6, kind: str = "gns") -> float:
    """max |⟨X, L(Y)⟩ − ⟨L(X), Y⟩| in the GNS (or KMS) inner product over random X, Y."""
    rng = np.random.default_rng(0) if rng is None else rng
    dim = L.dim
    if kind == "gns":
        inner = lambda A, B: np.trace(sigma @ A.conj().T @ B)
    else:
        r = _full_rank_pow(sigma, 0.5)
        inner = lambda A, B: np.trace(r @ A.conj().T @ r @ B)
    worst = 0.0
    for _ in range(samples):
        X = random_hermitian(dim, rng) + 1j * random_hermitian(dim, rng)
        Y = random_hermitian(dim, rng) + 1j * random_hermitian(dim, rng)
        X /= np.linalg.norm(X)
        Y /= np.linalg.norm(Y)
        worst = max(worst, abs(inner(X, L(Y)) - inner(L(X), Y)))
    return float(worst)


@dataclass(frozen=True)
class GapResult:
    gap: float
    kernel_dim: int
    method: str
    spectrum: np.ndarray | None = None


def _kms_weights(sigma: np.ndarray):
    q = _full_rank_pow(sigma, 0.25)
    qi = _full_rank_pow(sigma, -0.25)
    return q, qi


def symmetrized_matrix(L: Superoperator, sigma: np.ndarray) -> np.ndarray:
    """Hermitian matrix of J∘L∘J⁻¹ with J(X) = σ^{1/4} X σ^{1/4}."""
    q, qi = _kms_weights(sigma)
    dim = L.dim
    if L.matrix is not None:
        Jm = np.kron(q, q.T)
        Ji = np.kron(qi, qi.T)
        K = Jm @ L.matrix @ Ji
    else:
        K = np.empty((dim * dim, dim * dim), dtype=complex)
        E = np.zeros((dim, dim), dtype=complex)
        for k in range(dim * dim):
            E.flat[k] = 1.0
            K[:, k] = (q @ L(qi @ E @ qi) @ q).ravel()
            E.flat[k] = 0.0
    return 0.5 * (K + K.conj().T)


def spectral_gap(L: Superoperator, sigma: np.ndarray, check_tol: float = 1e-8,
                 kernel_tol: float = 1e-9) -> GapResult:
    """Smallest nonzero eigenvalue of −L in the KMS geometry, with kernel dimension."""
    if detailed_balance_residual(L, sigma, kind="kms", samples=3) > check_tol * max(1.0, _scale(L)):
        raise ValueError("generator is not KMS-symmetric with respect to sigma")
    dim = L.dim
    if dim <= DENSE_GAP_MAX_DIM:
        ev = np.linalg.eigvalsh(-symmetrized_matrix(L, sigma))
        top = max(abs(ev).max(), 1.0)
        ker = ev < kernel_tol * top
        nz = ev[~ker]
        return GapResult(float(nz.min()) if nz.size else float("inf"), int(ker.sum()), "dense", ev)
    q, qi = _kms_weights(sigma)

    def mv(v):
        X = v.reshape(dim, dim)
        return -(q @ L(qi @ X @ qi) @ q).ravel()

    op = LinearOperator((dim * dim, dim * dim), matvec=mv, dtype=complex)
    k = 4
    ev = eigsh(op, k=k, which="SA", tol=1e-10, maxiter=20000, return_eigenvectors=False)
    ev = np.sort(ev.real)
    top = max(abs(ev).max(), 1.0)
    ker = ev < kernel_tol * top
    nz = ev[~ker]
    if ker.sum() >= k:
        raise ConditioningError("kernel dimension exceeds the iterative window")
    return GapResult(float(nz.min()), int(ker.sum()), "lanczos", ev)


def slowest_mode(L: Superoperator, sigma: np.ndarray) -> np.ndarray:
    """Traceless Hermitian state perturbation along the gap eigenvector, scaled to ‖·‖ = λ_min(σ)."""
    if L.dim > DENSE_GAP_MAX_DIM:
        raise ResourceError("slowest mode needs the dense symmetrized matrix")
    ev, vecs = np.linalg.eigh(-symmetrized_matrix(L, sigma))
    top = max(abs(ev).max(), 1.0)
    k = int(np.argmax(ev > 1e-9 * top))
    dim = L.dim
    v = vecs[:, k].reshape(dim, dim)
    v = v + v.conj().T if np.abs(v + v.conj().T).max() > 1e-8 else 1j * (v - v.conj().T)
    q, _ = _kms_weights(sigma)
    m = q @ v @ q
    m -= np.trace(m) * sigma
    return m * np.linalg.eigvalsh(sigma)[0] / np.linalg.norm(m, 2)


def _scale(L: Superoperator) -> float:
    rng = np.random.default_rng(1)
    X = random_hermitian(L.dim, rng)
    X /= np.linalg.norm(X, 2)
    return float(np.linalg.norm(L(X), 2))


def fixed_point_projection(L: Superoperator, sigma: np.ndarray, loc_sigma: np.ndarray | None = None,
                           full_sites: Sequence[int] | None = None, sep: float = 1e3,
                           label: str = "") -> ConditionalExpectation:
    """KMS-orthogonal projection onto ker L, i.e. lim_{t→∞} e^{tL}.

    ``L`` acts on its own sites with KMS symmetry for ``sigma``; the result may
    be viewed on a larger support ``full_sites`` (tensored with the identity).
    """
    K = -symmetrized_matrix(L, sigma)
    ev, vecs = np.linalg.eigh(K)
    top = max(abs(ev).max(), 1.0)
    small = ev < 1e-9 * top
    kdim = int(small.sum())
    if kdim == 0:
        raise ConditioningError("generator has trivial kernel")
    if kdim < len(ev) and ev[kdim] < sep * max(abs(ev[:kdim]).max(), 1e-15 * top):
        raise ConditioningError("kernel not separated from the spectrum")
    dim = L.dim
    qi = _full_rank_pow(sigma, -0.25)
    basis = np.array([qi @ vecs[:, k].reshape(dim, dim) @ qi for k in range(kdim)])
    sites = tuple(L.sites) if full_sites is None else tuple(sorted(full_sites))
    return ConditionalExpectation(sites, tuple(L.sites), basis, sigma, L.d, label)


def davies_condexp(E: GibbsEnsemble, X: Sequence[int], full_sites: Sequence[int] | None = None,
                   couplings="xyz", chi: str = "glauber") -> ConditionalExpectation:
    """E^D_X = lim e^{tL^D_X}, computed on X∂ against σ^{X∂} (commuting models)."""
    if not E.potential.commuting:
        raise UnsupportedModelError("local Davies expectation needs a commuting potential")
    g = E.graph
    X = tuple(sorted(X))
    loc = closure(g, X)
    gen = DaviesGenerator(E, region=loc, couplings=couplings, chi=chi, mode="local", active=X)
    L = gen.superop("heisenberg", "dissipative")
    if L.dim > DENSE_GAP_MAX_DIM:
        raise ResourceError("Davies expectation limited to |X∂| ≤ 5 qubits")
    full = g.vertices if full_sites is None else full_sites
    return fixed_point_projection(L, E.sigma(loc), full_sites=full, label=f"davies{X}")
