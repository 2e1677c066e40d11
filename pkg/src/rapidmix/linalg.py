"""Dense operator kernel.

Operators are complex square matrices tagged with the ordered list of sites
they act on.  Tensor factors follow ascending site order (site ``support[0]``
is the most significant index in the Kronecker product).

Most routines accept either a :class:`DenseOperator` or a bare ``ndarray``;
the array-level helpers (``embed_array``, ``ptrace_array``, ``split_local``)
are what the rest of the package uses in hot loops.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import unitary_group

from .errors import DomainError, ResourceError

HERM_TOL = 1e-10
CLIP_REL = 1e-14
MAX_HILBERT_DIM = 4096

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _check_dim(dim: int) -> None:
    if dim > MAX_HILBERT_DIM:
        raise ResourceError(f"Hilbert dimension {dim} exceeds dense limit {MAX_HILBERT_DIM}")


def _sites(s: Sequence[int]) -> tuple[int, ...]:
    t = tuple(int(x) for x in s)
    if any(b <= a for a, b in zip(t, t[1:])):
        raise ValueError(f"support must be strictly increasing, got {t}")
    return t


@dataclass(frozen=True)
class DenseOperator:
    """Complex matrix acting on ``support`` with local dimension ``d``."""

    mat: np.ndarray
    support: tuple[int, ...]
    d: int = 2

    def __post_init__(self):
        m = np.asarray(self.mat, dtype=complex)
        object.__setattr__(self, "mat", m)
        object.__setattr__(self, "support", _sites(self.support))
        dim = self.d ** len(self.support)
        if m.shape != (dim, dim):
            raise ValueError(f"matrix shape {m.shape} does not match d^|support| = {dim}")
        _check_dim(dim)

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def dag(self) -> "DenseOperator":
        return DenseOperator(self.mat.conj().T, self.support, self.d)

    def embed(self, full_support: Sequence[int]) -> "DenseOperator":
        return embed(self, full_support)

    def ptrace(self, traced: Sequence[int]) -> "DenseOperator":
        return partial_trace(self, traced)

    def to_json(self) -> str:
        """Row-major (re, im) pairs; used for golden files."""
        flat = [[float(z.real), float(z.imag)] for z in self.mat.ravel()]
        return json.dumps({"support": list(self.support), "d": self.d, "data": flat})

    @classmethod
    def from_json(cls, text: str) -> "DenseOperator":
        obj = json.loads(text)
        d, sup = obj["d"], obj["support"]
        dim = d ** len(sup)
        data = np.array([complex(a, b) for a, b in obj["data"]]).reshape(dim, dim)
        return cls(data, tuple(sup), d)


@dataclass(frozen=True)
class QuantumState(DenseOperator):
    """Density matrix; validated on construction."""

    tol: float = field(default=1e-10, compare=False)

    def __post_init__(self):
        super().__post_init__()
        m = self.mat
        scale = max(1.0, np.linalg.norm(m, 2))
        if np.linalg.norm(m - m.conj().T, 2) > self.tol * scale:
            raise ValueError("state is not Hermitian")
        m = 0.5 * (m + m.conj().T)
        object.__setattr__(self, "mat", m)
        if abs(np.trace(m).real - 1.0) > self.tol:
            raise ValueError(f"state trace {np.trace(m).real} != 1")
        if np.linalg.eigvalsh(m)[0] < -self.tol:
            raise ValueError("state has negative eigenvalues")


@dataclass(frozen=True)
class Spectrum:
    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.conj().T


def _mat(x) -> np.ndarray:
    return x.mat if isinstance(x, DenseOperator) else np.asarray(x, dtype=complex)


def hermitize(m: np.ndarray, tol: float = HERM_TOL) -> np.ndarray:
    """Return (m+m†)/2, refusing inputs whose asymmetry exceeds ``tol``·‖m‖."""
    m = np.asarray(m, dtype=complex)
    asym = np.abs(m - m.conj().T).max() if m.size else 0.0
    scale = max(1.0, np.abs(m).max() if m.size else 0.0)
    if asym > tol * scale:
        raise ValueError(f"operator is not Hermitian (asymmetry {asym:.3e})")
    return 0.5 * (m + m.conj().T)


# ---------------------------------------------------------------- tensor plumbing


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def _perm_axes(order_from: Sequence[int], order_to: Sequence[int]) -> list[int]:
    pos = {s: i for i, s in enumerate(order_from)}
    return [pos[s] for s in order_to]


def embed_array(m: np.ndarray, sites: Sequence[int], full: Sequence[int], d: int) -> np.ndarray:
    """Tensor ``m`` (acting on ``sites``) with the identity on ``full`` minus ``sites``."""
    sites, full = tuple(sites), tuple(full)
    if sites == full:
        return np.asarray(m, dtype=complex)
    if not set(sites) <= set(full):
        raise ValueError(f"support {sites} not contained in {full}")
    rest = [s for s in full if s not in sites]
    _check_dim(d ** len(full))
    big = np.kron(m, np.eye(d ** len(rest), dtype=complex))
    if not sites:
        return big
    n = len(full)
    order = list(sites) + rest
    perm = _perm_axes(order, full)
    big = big.reshape((d,) * (2 * n))
    big = big.transpose(perm + [p + n for p in perm])
    return big.reshape(d**n, d**n)


def ptrace_array(m: np.ndarray, sites: Sequence[int], keep: Sequence[int], d: int) -> np.ndarray:
    """Partial trace of ``m`` (on ``sites``) keeping ``keep`` in ascending order."""
    sites = tuple(sites)
    keep = tuple(sorted(keep))
    if not set(keep) <= set(sites):
        raise ValueError(f"sites {keep} not in support {sites}")
    if keep == sites:
        return m
    n = len(sites)
    traced = [s for s in sites if s not in keep]
    perm = _perm_axes(sites, list(keep) + traced)
    t = m.reshape((d,) * (2 * n)).transpose(perm + [p + n for p in perm])
    dk, dt = d ** len(keep), d ** len(traced)
    t = t.reshape(dk, dt, dk, dt)
    return np.einsum("iaja->ij", t)


def split_local(m: np.ndarray, sites: Sequence[int], loc: Sequence[int], d: int) -> np.ndarray:
    """Reshape ``m`` to ``(Dloc, Drest, Dloc, Drest)`` with ``loc`` first."""
    sites, loc = tuple(sites), tuple(loc)
    n = len(sites)
    rest = [s for s in sites if s not in loc]
    dl, dr = d ** len(loc), d ** len(rest)
    if tuple(sites) == tuple(loc) + tuple(rest):
        return m.reshape(dl, dr, dl, dr)
    perm = _perm_axes(sites, list(loc) + rest)
    t = m.reshape((d,) * (2 * n)).transpose(perm + [p + n for p in perm])
    return t.reshape(dl, dr, dl, dr)


def merge_local(t: np.ndarray, sites: Sequence[int], loc: Sequence[int], d: int) -> np.ndarray:
    """Inverse of :func:`split_local`."""
    sites, loc = tuple(sites), tuple(loc)
    n = len(sites)
    rest = [s for s in sites if s not in loc]
    dim = d**n
    if tuple(sites) == tuple(loc) + tuple(rest):
        return t.reshape(dim, dim)
    order = list(loc) + rest
    perm = _perm_axes(order, sites)
    t = t.reshape((d,) * (2 * n)).transpose(perm + [p + n for p in perm])
    return t.reshape(dim, dim)


def embed(op: DenseOperator, full_support: Sequence[int]) -> DenseOperator:
    full = _sites(sorted(full_support))
    if not set(op.support) <= set(full):
        raise ValueError(f"support {op.support} not contained in {full}")
    return DenseOperator(embed_array(op.mat, op.support, full, op.d), full, op.d)


def partial_trace(op: DenseOperator, traced_sites: Sequence[int]) -> DenseOperator:
    traced = set(traced_sites)
    if not traced <= set(op.support):
        raise ValueError(f"traced sites {sorted(traced)} not in support {op.support}")
    keep = [s for s in op.support if s not in traced]
    return DenseOperator(ptrace_array(op.mat, op.support, keep, op.d), tuple(keep), op.d)


# ---------------------------------------------------------------- spectra and functions


def herm_eig(op) -> Spectrum:
    m = hermitize(_mat(op))
    w, v = np.linalg.eigh(m)
    return Spectrum(w, v)


def _clip(w: np.ndarray) -> float:
    return CLIP_REL * max(np.abs(w).max(initial=0.0), 1e-300)


def apply_fn(m: np.ndarray, f: str, a: float | None = None, generalized: bool = False) -> np.ndarray:
    """Array-level :func:`matfun`."""
    w, v = np.linalg.eigh(hermitize(m))
    if f == "exp":
        fw = np.exp(w)
    elif f == "sqrt":
        fw = np.sqrt(np.clip(w, 0.0, None))
    elif f == "ginv":
        c = _clip(w)
        fw = np.where(np.abs(w) > c, 1.0 / np.where(np.abs(w) > c, w, 1.0), 0.0)
    elif f == "log":
        c = _clip(w)
        pos = w > c
        if not pos.all() and not generalized:
            raise DomainError("log of operator with non-positive eigenvalue")
        fw = np.where(pos, np.log(np.where(pos, w, 1.0)), 0.0)
    elif f == "pow":
        if a is None:
            raise ValueError("pow requires exponent a")
        c = _clip(w)
        pos = w > c
        if a < 0 or generalized:
            fw = np.where(pos, np.where(pos, w, 1.0) ** a, 0.0)
        else:
            fw = np.clip(w, 0.0, None) ** a
    else:
        raise ValueError(f"unknown function {f!r}")
    return (v * fw) @ v.conj().T


def matfun(op, f: str | Callable[[np.ndarray], np.ndarray], a: float | None = None,
           generalized: bool = False):
    """Apply a scalar function to a Hermitian operator through its eigenbasis.

    ``f`` is one of ``exp, log, pow, ginv, sqrt`` or a vectorized callable.
    Eigenvalues below ``1e-14·λmax`` count as zero for ``log``, ``ginv`` and
    negative powers (generalized inverse on the support).
    """
    m = _mat(op)
    if callable(f):
        w, v = np.linalg.eigh(hermitize(m))
        out = (v * f(w)) @ v.conj().T
    else:
        out = apply_fn(m, f, a, generalized)
    if isinstance(op, DenseOperator):
        return DenseOperator(out, op.support, op.d)
    return out


def expm_h(m: np.ndarray, t: float = 1.0) -> np.ndarray:
    """exp(t·m) for Hermitian ``m``."""
    w, v = np.linalg.eigh(hermitize(m))
    return (v * np.exp(t * w)) @ v.conj().T


def _full_rank_pow(sigma: np.ndarray, a: float) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(sigma))
    if w[0] <= _clip(w):
        raise DomainError("reference state is singular")
    return (v * w**a) @ v.conj().T


# ---------------------------------------------------------------- norms and inner products


def schatten(m: np.ndarray, p: float) -> float:
    s = np.linalg.svd(m, compute_uv=False)
    if np.isinf(p):
        return float(s.max(initial=0.0))
    return float(np.sum(s**p) ** (1.0 / p))


def op_norm(m: np.ndarray) -> float:
    return schatten(m, np.inf)


def weighted_norm(X, sigma, p: float) -> float:
    """‖X‖_{p,σ} = Tr[|σ^{1/2p} X σ^{1/2p}|^p]^{1/p}; ``p=inf`` gives ‖X‖."""
    x, s = _mat(X), _mat(sigma)
    if p < 1:
        raise ValueError("p must be >= 1")
    if np.isinf(p):
        _full_rank_pow(s, 1.0)
        return op_norm(x)
    r = _full_rank_pow(s, 1.0 / (2.0 * p))
    return schatten(r @ x @ r, p)


def kms_inner(X, Y, sigma) -> complex:
    """Tr[√σ X† √σ Y]."""
    r = _full_rank_pow(_mat(sigma), 0.5)
    return complex(np.trace(r @ _mat(X).conj().T @ r @ _mat(Y)))


def gns_inner(X, Y, sigma) -> complex:
    """Tr[σ X† Y]."""
    s = _mat(sigma)
    _full_rank_pow(s, 1.0)
    return complex(np.trace(s @ _mat(X).conj().T @ _mat(Y)))


def modular_conjugate(X, sigma, s: float):
    """Δ_σ^{is}(X) = σ^{is} X σ^{-is}."""
    w, v = np.linalg.eigh(hermitize(_mat(sigma)))
    if w[0] <= _clip(w):
        raise DomainError("reference state is singular")
    u = (v * np.exp(1j * s * np.log(w))) @ v.conj().T
    out = u @ _mat(X) @ u.conj().T
    if isinstance(X, DenseOperator):
        return DenseOperator(out, X.support, X.d)
    return out


# ---------------------------------------------------------------- random objects


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    return unitary_group.rvs(dim, random_state=rng) if dim > 1 else np.ones((1, 1), complex)


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Ginibre-induced random state; ``rank=1`` gives a Haar-random pure state."""
    k = dim if rank is None else rank
    g = rng.normal(size=(dim, k)) + 1j * rng.normal(size=(dim, k))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return 0.5 * (g + g.conj().T)


def basis_state(dim: int, k: int) -> np.ndarray:
    rho = np.zeros((dim, dim), dtype=complex)
    rho[k, k] = 1.0
    return rho
