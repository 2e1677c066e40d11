"""Edge potentials, local Hamiltonians, Gibbs states and Araki expansionals."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, GeometryError
from .lattice import SpinGraph, boundary_in, shields
from .linalg import PAULI, QuantumState, embed_array, expm_h, ptrace_array, random_unitary

COMMUTE_TOL = 1e-10
MODEL_KINDS = ("ising", "potts", "random_commuting", "heisenberg", "custom")


@dataclass(frozen=True, eq=False)
class Potential:
    graph: SpinGraph
    terms: dict  # (i, j) -> d²×d² matrix on sites (i, j), i < j
    kind: str
    params: tuple = ()
    commuting: bool = field(default=False)

    @property
    def d(self) -> int:
        return self.graph.d

    @property
    def J_bound(self) -> float:
        return max((float(np.linalg.norm(h, 2)) for h in self.terms.values()), default=0.0)

    @property
    def diagonal(self) -> bool:
        return all(np.count_nonzero(h - np.diag(np.diag(h))) == 0 for h in self.terms.values())

    def param(self, key, default=None):
        return dict(self.params).get(key, default)

    def edges_in(self, A: Sequence[int]) -> list[tuple[int, int]]:
        s = set(A)
        return [e for e in self.graph.edges if e[0] in s and e[1] in s]


def _ising_term(J: float, g: float, di: int, dj: int) -> np.ndarray:
    Z, I = PAULI["Z"], PAULI["I"]
    return J * np.kron(Z, Z) + g * (np.kron(Z, I) / di + np.kron(I, Z) / dj)


def commutation_residual(graph: SpinGraph, terms: dict) -> float:
    """Largest ‖[h_e, h_f]‖ over edges sharing a vertex, on their 3-site union."""
    worst = 0.0
    d = graph.d
    edges = list(terms)
    for a in range(len(edges)):
        for b in range(a + 1, len(edges)):
            e, f = edges[a], edges[b]
            if not set(e) & set(f):
                continue
            full = tuple(sorted(set(e) | set(f)))
            he = embed_array(terms[e], e, full, d)
            hf = embed_array(terms[f], f, full, d)
            worst = max(worst, float(np.linalg.norm(he @ hf - hf @ he, 2)))
    return worst


def build_potential(graph: SpinGraph, kind: str, **params) -> Potential:
    """Edge potential for one of the model families.

    ising(J, g): J·ZZ + g·(Z_i/deg_i + Z_j/deg_j), so each site carries total field g·Z.
    potts(J): −J·δ(s_i, s_j).  random_commuting(seed, J): a shared random diagonal
    in [−J, J] conjugated by a Haar unitary per vertex.  heisenberg(Jx, Jy, Jz).
    custom(term or terms): explicit two-site matrices.
    """
    d = graph.d
    deg = [graph.degree(v) for v in range(graph.n)]
    terms: dict = {}
    if kind == "ising":
        if d != 2:
            raise ConfigError("ising requires d=2")
        J, g = float(params.get("J", 1.0)), float(params.get("g", 0.0))
        for i, j in graph.edges:
            terms[(i, j)] = _ising_term(J, g, deg[i], deg[j])
        pr = (("J", J), ("g", g))
    elif kind == "potts":
        J = float(params.get("J", 1.0))
        delta = np.zeros((d * d, d * d), dtype=complex)
        for s in range(d):
            delta[s * d + s, s * d + s] = 1.0
        for e in graph.edges:
            terms[e] = -J * delta
        pr = (("J", J),)
    elif kind == "random_commuting":
        seed = int(params.get("seed", 0))
        J = float(params.get("J", 1.0))
        rng = np.random.default_rng(seed)
        D = np.diag(rng.uniform(-J, J, size=d * d)).astype(complex)
        U = [random_unitary(d, rng) for _ in range(graph.n)]
        for i, j in graph.edges:
            W = np.kron(U[i], U[j])
            terms[(i, j)] = W @ D @ W.conj().T
        pr = (("seed", seed), ("J", J))
    elif kind == "heisenberg":
        if d != 2:
            raise ConfigError("heisenberg requires d=2")
        Jx, Jy, Jz = (float(params.get(k, 1.0)) for k in ("Jx", "Jy", "Jz"))
        h = sum(c * np.kron(PAULI[p], PAULI[p]) for c, p in ((Jx, "X"), (Jy, "Y"), (Jz, "Z")))
        for e in graph.edges:
            terms[e] = h.copy()
        pr = (("Jx", Jx), ("Jy", Jy), ("Jz", Jz))
    elif kind == "custom":
        if "terms" in params:
            raw = {tuple(sorted(k)): np.asarray(v, dtype=complex) for k, v in params["terms"].items()}
        elif "term" in params:
            raw = {e: np.asarray(params["term"], dtype=complex) for e in graph.edges}
        else:
            raise ConfigError("custom model needs 'term' or 'terms'")
        for e, h in raw.items():
            if e not in graph.edges:
                raise ConfigError(f"custom term on non-edge {e}")
            if h.shape != (d * d, d * d):
                raise ConfigError(f"term on {e} has shape {h.shape}, expected {(d * d, d * d)}")
            if np.abs(h - h.conj().T).max() > 1e-10 * max(1.0, np.abs(h).max()):
                raise ConfigError(f"term on {e} is not Hermitian")
            terms[e] = 0.5 * (h + h.conj().T)
        pr = ()
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    commuting = commutation_residual(graph, terms) <= COMMUTE_TOL
    return Potential(graph, terms, kind, pr, commuting)


def hamiltonian_on(P: Potential, A: Sequence[int]) -> np.ndarray:
    """H_A: sum of the terms with both endpoints in A, as a matrix on A."""
    A = tuple(sorted(A))
    if not A:
        raise ValueError("empty region")
    dim = P.d ** len(A)
    H = np.zeros((dim, dim), dtype=complex)
    for e in P.edges_in(A):
        H += embed_array(P.terms[e], e, A, P.d)
    return H


class GibbsEnsemble:
    """Gibbs states σ^A = e^{−βH_A}/Z_A of a potential, cached per region."""

    def __init__(self, potential: Potential, beta: float):
        if beta < 0:
            raise ConfigError("beta must be >= 0")
        self.potential = potential
        self.beta = float(beta)
        self._lock = threading.Lock()
        self._cache: dict[tuple[int, ...], tuple[np.ndarray, float]] = {}
        self._eig: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}

    @property
    def graph(self) -> SpinGraph:
        return self.potential.graph

    @property
    def d(self) -> int:
        return self.potential.d

    def eig(self, A: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Eigen-decomposition of H_A (cached)."""
        A = tuple(sorted(A))
        with self._lock:
            if A in self._eig:
                return self._eig[A]
        H = hamiltonian_on(self.potential, A)
        if self.potential.diagonal:
            w = np.diag(H).real.copy()
            v = np.eye(len(w), dtype=complex)
        else:
            w, v = np.linalg.eigh(H)
        with self._lock:
            self._eig[A] = (w, v)
        return w, v

    def _compute(self, A: tuple[int, ...]) -> tuple[np.ndarray, float]:
        w, v = self.eig(A)
        x = -self.beta * w
        top = x.max()
        p = np.exp(x - top)
        s = p.sum()
        logz = float(top + np.log(s))
        p /= s
        if self.potential.diagonal:
            sigma = np.diag(p).astype(complex)
        else:
            sigma = (v * p) @ v.conj().T
            sigma = 0.5 * (sigma + sigma.conj().T)
        return sigma, logz

    def _get(self, A: Sequence[int]) -> tuple[np.ndarray, float]:
        A = tuple(sorted(A))
        with self._lock:
            hit = self._cache.get(A)
        if hit is not None:
            return hit
        val = self._compute(A)
        with self._lock:
            self._cache.setdefault(A, val)
        return val

    def sigma(self, A: Sequence[int]) -> np.ndarray:
        """σ^A as a bare array (read-only view into the cache)."""
        return self._get(A)[0]

    def gibbs(self, A: Sequence[int]) -> QuantumState:
        A = tuple(sorted(A))
        return QuantumState(self._get(A)[0], A, self.d)

    def log_partition(self, A: Sequence[int]) -> float:
        if len(A) == 0:
            return 0.0
        return self._get(A)[1]

    def marginal(self, A: Sequence[int], keep: Sequence[int]) -> np.ndarray:
        """tr_{A∖keep}[σ^A]."""
        A = tuple(sorted(A))
        return ptrace_array(self.sigma(A), A, keep, self.d)


def expansional(E: GibbsEnsemble, A: Sequence[int], B: Sequence[int], inverse: bool = False) -> np.ndarray:
    """E_{A,B} = e^{−βH_{AB}} e^{β(H_A+H_B)} on A∪B (or its inverse)."""
    A, B = tuple(sorted(A)), tuple(sorted(B))
    if set(A) & set(B):
        raise GeometryError("expansional needs disjoint regions")
    AB = tuple(sorted(A + B))
    P, d, b = E.potential, E.d, E.beta
    H_ab = hamiltonian_on(P, AB)
    H_sep = embed_array(hamiltonian_on(P, A), A, AB, d) + embed_array(hamiltonian_on(P, B), B, AB, d)
    if inverse:
        return expm_h(H_sep, -b) @ expm_h(H_ab, b)
    return expm_h(H_ab, -b) @ expm_h(H_sep, b)


def expansional_constant(E: GibbsEnsemble, A: Sequence[int], B: Sequence[int]) -> float:
    """K_{A,B} = exp(βJc·min{|∂_B A|, |∂_A B|}) with c the maximal degree."""
    g = E.graph
    k = min(len(boundary_in(g, A, B)), len(boundary_in(g, B, A)))
    return float(np.exp(E.beta * E.potential.J_bound * g.max_degree * k))


def weighted_partial_trace(sigma_B: np.ndarray, Q: np.ndarray, A: Sequence[int], B: Sequence[int],
                           d: int = 2) -> np.ndarray:
    """tr_B[(1_A ⊗ σ^B) Q] for Q on A∪B."""
    A, B = tuple(sorted(A)), tuple(sorted(B))
    AB = tuple(sorted(A + B))
    return ptrace_array(embed_array(sigma_B, B, AB, d) @ Q, AB, A, d)


@dataclass(frozen=True)
class LambdaABC:
    via_Z: float
    via_trace: float

    @property
    def gap(self) -> float:
        return abs(self.via_Z - self.via_trace)


def lambda_ABC(E: GibbsEnsemble, A: Sequence[int], B: Sequence[int], C: Sequence[int]) -> LambdaABC:
    """λ_ABC from partition functions and from the two expansional traces."""
    A, B, C = (tuple(sorted(x)) for x in (A, B, C))
    if set(A) & set(B) or set(B) & set(C) or set(A) & set(C):
        raise GeometryError("A, B, C must be disjoint")
    if not shields(E.graph, A, B, C):
        raise GeometryError("B does not shield A from C")
    lz = E.log_partition
    AB, BC, ABC = tuple(sorted(A + B)), tuple(sorted(B + C)), tuple(sorted(A + B + C))
    via_z = float(np.exp(lz(ABC) + lz(B) - lz(AB) - lz(BC)))
    num = np.trace(E.sigma(AB) @ expansional(E, A, B, inverse=True)).real
    den = np.trace(E.sigma(ABC) @ expansional(E, A, BC, inverse=True)).real
    return LambdaABC(via_z, float(num / den))
