"""Linear maps on operators and conditional expectations.

Dense superoperator matrices use row-major vectorization, so that
``vec(A X B) = (A ⊗ Bᵀ) vec(X)`` with ``vec(X) = X.ravel()``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ResourceError
from .linalg import (_full_rank_pow, hermitize, merge_local, modular_conjugate,
                     random_hermitian, split_local)

MAX_SUPER_DIM = 128


@dataclass(frozen=True)
class Superoperator:
    """Map on operators over ``sites``, held as a callable and optionally a dense matrix."""

    apply: Callable[[np.ndarray], np.ndarray]
    sites: tuple[int, ...]
    d: int = 2
    picture: str = "heisenberg"
    matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.d ** len(self.sites)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.apply(np.asarray(X, dtype=complex))

    @classmethod
    def from_matrix(cls, M: np.ndarray, sites: Sequence[int], d: int = 2,
                    picture: str = "heisenberg") -> "Superoperator":
        dim = d ** len(sites)
        M = np.asarray(M, dtype=complex)
        if M.shape != (dim * dim, dim * dim):
            raise ValueError("superoperator matrix has wrong shape")
        return cls(lambda X: (M @ X.ravel()).reshape(dim, dim), tuple(sites), d, picture, M)

    def to_matrix(self, cap: int = MAX_SUPER_DIM) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        dim = self.dim
        if dim > cap:
            raise ResourceError(f"domain dimension {dim} exceeds dense superoperator cap {cap}")
        cols = np.empty((dim * dim, dim * dim), dtype=complex)
        E = np.zeros((dim, dim), dtype=complex)
        for k in range(dim * dim):
            E.flat[k] = 1.0
            cols[:, k] = self(E).ravel()
            E.flat[k] = 0.0
        return cols

    def dense(self, cap: int = MAX_SUPER_DIM) -> "Superoperator":
        M = self.to_matrix(cap)
        return Superoperator(self.apply, self.sites, self.d, self.picture, M)

    def compose(self, other: "Superoperator") -> "Superoperator":
        """``self ∘ other``."""
        self._same_domain(other)
        mat = None
        if self.matrix is not None and other.matrix is not None:
            mat = self.matrix @ other.matrix
        return Superoperator(lambda X: self(other(X)), self.sites, self.d, self.picture, mat)

    def __add__(self, other: "Superoperator") -> "Superoperator":
        self._same_domain(other)
        mat = None
        if self.matrix is not None and other.matrix is not None:
            mat = self.matrix + other.matrix
        return Superoperator(lambda X: self(X) + other(X), self.sites, self.d, self.picture, mat)

    def __sub__(self, other: "Superoperator") -> "Superoperator":
        return self + other.scale(-1.0)

    def scale(self, c: float) -> "Superoperator":
        mat = None if self.matrix is None else c * self.matrix
        return Superoperator(lambda X: c * self(X), self.sites, self.d, self.picture, mat)

    def adjoint(self) -> "Superoperator":
        """Hilbert–Schmidt adjoint (switches picture)."""
        M = self.to_matrix().conj().T
        pic = "schrodinger" if self.picture == "heisenberg" else "heisenberg"
        return Superoperator.from_matrix(M, self.sites, self.d, pic)

    def _same_domain(self, other: "Superoperator") -> None:
        if self.sites != other.sites or self.d != other.d:
            raise ValueError("superoperators act on different domains")

    def choi(self) -> np.ndarray:
        """Σ_ij |i⟩⟨j| ⊗ Φ(|i⟩⟨j|)."""
        dim = self.dim
        out = np.zeros((dim * dim, dim * dim), dtype=complex)
        E = np.zeros((dim, dim), dtype=complex)
        for i in range(dim):
            for j in range(dim):
                E[i, j] = 1.0
                out[i * dim:(i + 1) * dim, j * dim:(j + 1) * dim] = self(E)
                E[i, j] = 0.0
        return out

    def choi_min_eig(self) -> float:
        return float(np.linalg.eigvalsh(hermitize(self.choi(), tol=1e-6))[0])


def identity_map(sites: Sequence[int], d: int = 2, picture: str = "heisenberg") -> Superoperator:
    dim = d ** len(sites)
    return Superoperator(lambda X: X.copy(), tuple(sites), d, picture,
                         np.eye(dim * dim, dtype=complex) if dim <= MAX_SUPER_DIM else None)


def sup_difference(F: Superoperator, G: Superoperator, rng: np.random.Generator,
                   samples: int = 8) -> float:
    """Max over random unit-norm Hermitian inputs of ‖F(X) − G(X)‖ (operator norm)."""
    worst = 0.0
    for _ in range(samples):
        X = random_hermitian(F.dim, rng)
        X /= np.linalg.norm(X, 2)
        worst = max(worst, float(np.linalg.norm(F(X) - G(X), 2)))
    return worst


# ---------------------------------------------------------------- conditional expectations


def kms_orthonormalize(ops: Sequence[np.ndarray], sigma: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """KMS-orthonormal basis of span(ops); Gram directions below ``tol``·max are pruned."""
    if len(ops) == 0:
        return np.zeros((0,) + sigma.shape, dtype=complex)
    ops = np.asarray(ops, dtype=complex)
    r = _full_rank_pow(sigma, 0.5)
    # KMS Gram G_jk = Tr[r X_j† r X_k]
    G = np.einsum("jba,bc,kcd,da->jk", ops.conj(), r, ops, r, optimize=True)
    G = 0.5 * (G + G.conj().T)
    w, v = np.linalg.eigh(G)
    keep = w > tol * max(w.max(initial=0.0), 1e-300)
    coef = v[:, keep] / np.sqrt(w[keep])
    return np.einsum("jk,jab->kab", coef, ops)


@dataclass(frozen=True)
class ConditionalExpectation:
    """KMS projection onto ``span(basis) ⊗ B(rest)``.

    ``basis`` is KMS-orthonormal with respect to ``sigma_loc`` on the sites
    ``loc`` (a subset of ``sites``).
    """

    sites: tuple[int, ...]
    loc: tuple[int, ...]
    basis: np.ndarray
    sigma_loc: np.ndarray
    d: int = 2
    label: str = ""
    blocks: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        r = _full_rank_pow(self.sigma_loc, 0.5)
        object.__setattr__(self, "_r", r)
        # M_k = √σ B_k† √σ, used by both pictures
        M = r @ self.basis.conj().transpose(0, 2, 1) @ r
        object.__setattr__(self, "_M", M)

    @property
    def rank(self) -> int:
        return self.basis.shape[0]

    def _contract(self, left: np.ndarray, coef_ops: np.ndarray, X: np.ndarray) -> np.ndarray:
        T = split_local(X, self.sites, self.loc, self.d)
        coef = np.einsum("kba,aibj->kij", coef_ops, T, optimize=True)
        out = np.einsum("kab,kij->aibj", left, coef, optimize=True)
        return merge_local(out, self.sites, self.loc, self.d)

    def heisenberg(self, X: np.ndarray) -> np.ndarray:
        """E(X) = Σ_k B_k ⊗ tr_loc[(√σ B_k† √σ ⊗ 1) X]."""
        return self._contract(self.basis, self._M, np.asarray(X, dtype=complex))

    def schrodinger(self, rho: np.ndarray) -> np.ndarray:
        """E_*(ρ) = Σ_k (√σ B_k† √σ) ⊗ tr_loc[(B_k ⊗ 1) ρ]."""
        return self._contract(self._M, self.basis, np.asarray(rho, dtype=complex))

    def superop(self, picture: str = "heisenberg") -> Superoperator:
        f = self.heisenberg if picture == "heisenberg" else self.schrodinger
        return Superoperator(f, self.sites, self.d, picture)

    def on(self, sites: Sequence[int]) -> "ConditionalExpectation":
        """Same map viewed on a larger support."""
        sites = tuple(sorted(sites))
        if not set(self.sites) <= set(sites):
            raise ValueError("can only enlarge the support")
        return ConditionalExpectation(sites, self.loc, self.basis, self.sigma_loc, self.d,
                                      self.label, self.blocks)

    def fixed_basis(self) -> np.ndarray:
        return self.basis

    def localized(self) -> "ConditionalExpectation":
        return ConditionalExpectation(self.loc, self.loc, self.basis, self.sigma_loc, self.d, self.label)


def condexp_residuals(E, sigma: np.ndarray, rng: np.random.Generator,
                      samples: int = 4, s_values: Sequence[float] = (0.3, 1.0, 2.7)) -> dict[str, float]:
    """Axiom residuals: idempotence, unitality, σ-invariance, Choi positivity, modular covariance."""
    dim = E.d ** len(E.sites)
    res = {"idempotence": 0.0, "unitality": 0.0, "sigma_invariance": 0.0, "modular": 0.0,
           "choi_min_eig": 0.0}
    res["unitality"] = float(np.abs(E.heisenberg(np.eye(dim)) - np.eye(dim)).max())
    res["sigma_invariance"] = float(np.abs(E.schrodinger(sigma) - sigma).max())
    for _ in range(samples):
        X = random_hermitian(dim, rng) + 1j * random_hermitian(dim, rng)
        EX = E.heisenberg(X)
        res["idempotence"] = max(res["idempotence"], float(np.abs(E.heisenberg(EX) - EX).max()))
        for s in s_values:
            a = E.heisenberg(modular_conjugate(X, sigma, s))
            b = modular_conjugate(EX, sigma, s)
            res["modular"] = max(res["modular"], float(np.abs(a - b).max()))
    # E = E_loc ⊗ id, so positivity of the local Choi matrix suffices
    res["choi_min_eig"] = E.localized().superop().choi_min_eig()
    return res
