"""Relative entropies, entropy production, MLSI estimation and semigroup evolution."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize
from scipy.sparse.linalg import expm_multiply
from scipy.stats import linregress

from .channels import MAX_SUPER_DIM, ConditionalExpectation, Superoperator
from .errors import DomainError, EstimationError, HorizonError, IntegrationError, ResourceError
from .linalg import hermitize, ptrace_array, random_density

SUPPORT_TOL = 1e-12
EIG_FLOOR = 1e-12
DENSE_EVOLVE_MAX_DIM = 32


# ---------------------------------------------------------------- entropies


def _eigh(m: np.ndarray):
    return np.linalg.eigh(0.5 * (m + m.conj().T))


def _log_on_support(w, v, tol):
    pos = w > tol
    lw = np.where(pos, np.log(np.where(pos, w, 1.0)), 0.0)
    return (v * lw) @ v.conj().T, pos


def relative_entropy(rho, sigma, tol: float = SUPPORT_TOL) -> float:
    """Umegaki D(ρ‖σ) in nats; +∞ when supp ρ ⊄ supp σ."""
    rho = np.asarray(getattr(rho, "mat", rho), dtype=complex)
    sigma = np.asarray(getattr(sigma, "mat", sigma), dtype=complex)
    wr, vr = _eigh(rho)
    ws, vs = _eigh(sigma)
    null = vs[:, ws <= tol]
    if null.size and np.trace(null.conj().T @ rho @ null).real > tol:
        return float("inf")
    p = wr[wr > tol]
    log_s, _ = _log_on_support(ws, vs, tol)
    val = float(np.sum(p * np.log(p)) - np.trace(rho @ log_s).real)
    return max(val, 0.0) if val > -1e-12 else val


def max_relative_entropy(rho, sigma, tol: float = SUPPORT_TOL) -> float:
    """D_max(ρ‖σ) = log ‖σ^{-1/2} ρ σ^{-1/2}‖ on supp σ; +∞ on support violation."""
    rho = np.asarray(getattr(rho, "mat", rho), dtype=complex)
    sigma = np.asarray(getattr(sigma, "mat", sigma), dtype=complex)
    ws, vs = _eigh(sigma)
    null = vs[:, ws <= tol]
    if null.size and np.trace(null.conj().T @ rho @ null).real > tol:
        return float("inf")
    keep = ws > tol
    s = vs[:, keep] / np.sqrt(ws[keep])
    top = np.linalg.eigvalsh(hermitize(s.conj().T @ rho @ s, tol=1e-6))[-1]
    return float(np.log(top))


def chain_rule_check(rho, E: ConditionalExpectation, sigma) -> float:
    """|D(ρ‖σ) − D(ρ‖E_*ρ) − D(E_*ρ‖σ)|."""
    rho = np.asarray(getattr(rho, "mat", rho), dtype=complex)
    sigma = np.asarray(getattr(sigma, "mat", sigma), dtype=complex)
    if np.abs(E.schrodinger(sigma) - sigma).max() > 1e-9:
        raise ValueError("sigma is not invariant under the expectation")
    er = E.schrodinger(rho)
    return abs(relative_entropy(rho, sigma) - relative_entropy(rho, er) - relative_entropy(er, sigma))


# ---------------------------------------------------------------- entropy production


def _dlog(w: np.ndarray, v: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Fréchet derivative of log at v·diag(w)·v† in direction X (Daleckii–Krein)."""
    lw = np.log(w)
    dw = w[:, None] - w[None, :]
    same = np.abs(dw) <= 1e-12 * np.maximum(w[:, None], w[None, :])
    G = np.where(same, 1.0 / np.maximum(w[:, None], w[None, :]),
                 (lw[:, None] - lw[None, :]) / np.where(same, 1.0, dw))
    return v @ (G * (v.conj().T @ X @ v)) @ v.conj().T


def _floored(m: np.ndarray, floor: float):
    w, v = _eigh(m)
    flagged = bool(w.min() < floor)
    w = np.maximum(w, floor)
    return w, v, flagged


class _Flow:
    """Callables for L_*, L, E_*, E on one Hilbert space."""

    def __init__(self, L_s, L_h, E_s, E_h, dim):
        self.L_s, self.L_h, self.E_s, self.E_h, self.dim = L_s, L_h, E_s, E_h, dim

    def values(self, rho: np.ndarray, floor: float = EIG_FLOOR, grad: bool = False):
        wr, vr, f1 = _floored(rho, floor)
        om = self.E_s(rho)
        wo, vo, f2 = _floored(om, floor)
        logr = (vr * np.log(wr)) @ vr.conj().T
        logo = (vo * np.log(wo)) @ vo.conj().T
        diff = logr - logo
        Lr = self.L_s(rho)
        ep = -float(np.trace(Lr @ diff).real)
        D = float(np.trace(rho @ diff).real)
        if not grad:
            return ep, D, f1 or f2
        g_ep = -self.L_h(diff) - _dlog(wr, vr, Lr) + self.E_h(_dlog(wo, vo, Lr))
        g_D = diff - self.E_h(_dlog(wo, vo, rho))
        herm = lambda m: 0.5 * (m + m.conj().T)
        return ep, D, f1 or f2, herm(g_ep), herm(g_D)


def _flow(L: Superoperator, E: ConditionalExpectation, L_heis=None) -> _Flow:
    if L.picture != "schrodinger":
        raise ValueError("L must be in the Schrödinger picture")
    if L_heis is None:
        if L.dim > DENSE_EVOLVE_MAX_DIM:
            raise ResourceError("pass the Heisenberg generator explicitly above dense limits")
        M = L.to_matrix().conj().T
        dim = L.dim
        L_heis = lambda X: (M @ X.ravel()).reshape(dim, dim)
    return _Flow(L, L_heis, E.schrodinger, E.heisenberg, L.dim)


def entropy_production(L: Superoperator, rho, E: ConditionalExpectation, floor: float = EIG_FLOOR,
                       return_flag: bool = False):
    """EP = −Tr[L_*(ρ)(log ρ − log E_*(ρ))]; eigenvalues below ``floor`` are raised and flagged."""
    rho = np.asarray(getattr(rho, "mat", rho), dtype=complex)
    if L.picture != "schrodinger":
        raise ValueError("L must be in the Schrödinger picture")
    wr, vr, f1 = _floored(rho, floor)
    wo, vo, f2 = _floored(E.schrodinger(rho), floor)
    diff = (vr * np.log(wr)) @ vr.conj().T - (vo * np.log(wo)) @ vo.conj().T
    ep = -float(np.trace(L(rho) @ diff).real)
    if ep < -1e-9:
        raise EstimationError(f"negative entropy production {ep:.3e}; generator not KMS-symmetric?")
    return (ep, f1 or f2) if return_flag else ep


def ep_finite_difference(L: Superoperator, rho, sigma, h: float = 1e-5) -> float:
    """−dD(ρ_t‖σ)/dt at t = 0 by a central difference with exact ±h propagation."""
    rho = np.asarray(getattr(rho, "mat", rho), dtype=complex)
    M = L.to_matrix(cap=max(MAX_SUPER_DIM, DENSE_EVOLVE_MAX_DIM))
    dim = L.dim
    fwd = expm_multiply(h * M, rho.ravel()).reshape(dim, dim)
    bwd = expm_multiply(-h * M, rho.ravel()).reshape(dim, dim)
    herm = lambda m: 0.5 * (m + m.conj().T)
    return -(relative_entropy(herm(fwd), sigma) - relative_entropy(herm(bwd), sigma)) / (2 * h)


# ---------------------------------------------------------------- MLSI estimation


@dataclass(frozen=True)
class MlsiEstimate:
    ratio: float
    state: np.ndarray = field(repr=False)
    samples: int
    trace: tuple[float, ...] = ()


def _seed_states(dim: int, d: int, rng: np.random.Generator, n_random: int, sigma=None,
                 slow_mode=None, max_basis: int = 8) -> list[np.ndarray]:
    mix = 1e-3
    seeds = []
    for k in np.unique(np.linspace(0, dim - 1, min(dim, max_basis)).astype(int)):
        p = np.full(dim, mix / dim)
        p[k] += 1 - mix
        seeds.append(np.diag(p).astype(complex))
    n = int(round(np.log(dim) / np.log(d))) if d > 1 else 1
    for _ in range(max(2, n_random // 4)):
        psi = np.array([1.0 + 0j])
        for _ in range(n):
            v = rng.normal(size=d) + 1j * rng.normal(size=d)
            psi = np.kron(psi, v / np.linalg.norm(v))
        seeds.append((1 - mix) * np.outer(psi, psi.conj()) + mix * np.eye(dim) / dim)
    for _ in range(n_random):
        seeds.append(random_density(dim, rng))
    if sigma is not None and slow_mode is not None:
        for eps in (1e-2, 1e-1):
            r = sigma + eps * slow_mode
            w = np.linalg.eigvalsh(r)
            if w.min() > 0:
                seeds.append(r / np.trace(r).real)
    return seeds


def _minimize_ratio(flow: _Flow, seeds, maxiter: int, rng):
    dim = flow.dim
    best = (np.inf, None)
    trace, count = [], 0

    def unpack(x):
        A = (x[:dim * dim] + 1j * x[dim * dim:]).reshape(dim, dim)
        M = A @ A.conj().T
        t = np.trace(M).real
        return A, M / t, t

    def f(x):
        nonlocal best, count
        A, rho, t = unpack(x)
        ep, D, _, gep, gD = flow.values(rho, grad=True)
        count += 1
        if D < 1e-10:
            return 1e6, np.zeros_like(x)
        r = ep / D
        if r < best[0]:
            best = (r, rho)
        G = (gep - r * gD) / D
        K = G - np.trace(G @ rho).real * np.eye(dim)
        KA = 2 * K @ A / t
        return r, np.concatenate([KA.real.ravel(), KA.imag.ravel()])

    for rho0 in seeds:
        ep, D, _ = flow.values(rho0)
        if D < 1e-10:
            continue
        w, v = _eigh(rho0)
        A0 = v * np.sqrt(np.maximum(w, 1e-12))
        x0 = np.concatenate([A0.real.ravel(), A0.imag.ravel()])
        res = minimize(f, x0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter, "gtol": 1e-10})
        trace.append(float(res.fun))
    return best, tuple(trace), count


def mlsi_upper_estimate(L: Superoperator, E: ConditionalExpectation, budget: int = 40,
                        rng: np.random.Generator | None = None, L_heis=None, sigma=None,
                        n_random: int = 8, slow_mode=None) -> MlsiEstimate:
    """Sampled infimum of EP/D(ρ‖E_*ρ): an upper bound on the MLSI constant.

    L-BFGS on the parameterization ρ = AA†/Tr[AA†], seeded by near-basis,
    near-product, random and near-equilibrium states.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    flow = _flow(L, E, L_heis)
    seeds = _seed_states(flow.dim, L.d, rng, n_random, sigma, slow_mode)
    (best, state), trace, count = _minimize_ratio(flow, seeds, budget, rng)
    if state is None:
        raise EstimationError("no seed state with D > 1e-10")
    return MlsiEstimate(float(best), state, count, trace)


def _extend(f: Callable, dim: int, n: int) -> Callable:
    def g(X):
        T = X.reshape(dim, n, dim, n).transpose(1, 3, 0, 2)
        out = np.empty_like(T)
        for a in range(n):
            for b in range(n):
                out[a, b] = f(np.ascontiguousarray(T[a, b]))
        return out.transpose(2, 0, 3, 1).reshape(dim * n, dim * n)
    return g


def cmlsi_probe(L: Superoperator, E: ConditionalExpectation, n_ancilla: int = 2, budget: int = 40,
                rng: np.random.Generator | None = None, L_heis=None, sigma=None,
                n_random: int = 8) -> tuple[MlsiEstimate, MlsiEstimate]:
    """(estimate for L ⊗ id_n, estimate for L)."""
    if n_ancilla not in (2, 4):
        raise ValueError("n_ancilla must be 2 or 4")
    dim = L.dim
    if dim * n_ancilla > 2 * DENSE_EVOLVE_MAX_DIM:
        raise ResourceError("extended dimension exceeds dense limits")
    rng = np.random.default_rng(0) if rng is None else rng
    base = _flow(L, E, L_heis)
    ext = _Flow(_extend(base.L_s, dim, n_ancilla), _extend(base.L_h, dim, n_ancilla),
                _extend(base.E_s, dim, n_ancilla), _extend(base.E_h, dim, n_ancilla), dim * n_ancilla)
    seeds = _seed_states(dim * n_ancilla, L.d, rng, n_random)
    if sigma is not None:
        sig_ext = np.kron(sigma, np.eye(n_ancilla) / n_ancilla)
        seeds += [0.9 * sig_ext + 0.1 * random_density(dim * n_ancilla, rng) for _ in range(2)]
    (best, state), trace, count = _minimize_ratio(ext, seeds, budget, rng)
    plain = mlsi_upper_estimate(L, E, budget, rng, L_heis, sigma, n_random)
    if state is None:
        raise EstimationError("no seed state with D > 1e-10")
    return MlsiEstimate(float(best), state, count, trace), plain


# ---------------------------------------------------------------- evolution


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray = field(repr=False)
    trace_distance: np.ndarray
    rel_entropy: np.ndarray
    local: dict = field(default_factory=dict)
    mode: str = "dense"

    def check(self, tol: float = 1e-8) -> None:
        tr = np.array([np.trace(r).real for r in self.states])
        if np.abs(tr - 1).max() > tol:
            raise IntegrationError("trace drift above tolerance", float(self.times[-1]))

    def to_csv_rows(self) -> list[dict]:
        rows = []
        for k, t in enumerate(self.times):
            row = {"t": float(t), "trace_distance": float(self.trace_distance[k]),
                   "rel_entropy": float(self.rel_entropy[k])}
            for name, vals in self.local.items():
                row[f"local_{name}"] = float(vals[k])
            rows.append(row)
        return rows


def trace_norm(m: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvalsh(0.5 * (m + m.conj().T))).sum())


class Propagator:
    """ρ ↦ e^{tL_*}ρ, dense (Krylov-free matrix action) or by adaptive Runge–Kutta."""

    def __init__(self, L: Superoperator, mode: str = "auto", rtol: float = 1e-10, atol: float = 1e-12):
        if L.picture != "schrodinger":
            raise ValueError("L must be in the Schrödinger picture")
        self.L = L
        dim = L.dim
        if mode == "auto":
            mode = "dense" if dim <= DENSE_EVOLVE_MAX_DIM else "integrate"
        if mode == "dense":
            self.M = L.to_matrix(cap=max(MAX_SUPER_DIM, DENSE_EVOLVE_MAX_DIM))
        self.mode, self.rtol, self.atol = mode, rtol, atol

    def __call__(self, rho: np.ndarray, t: float) -> np.ndarray:
        dim = self.L.dim
        if t == 0:
            return rho.copy()
        if self.mode == "dense":
            return expm_multiply(self.M * t, rho.ravel()).reshape(dim, dim)
        fun = lambda _, y: self.L(y.reshape(dim, dim)).ravel()
        sol = solve_ivp(fun, (0.0, t), rho.ravel().astype(complex), method="RK45",
                        rtol=self.rtol, atol=self.atol)
        if not sol.success:
            last = float(sol.t[-1]) if sol.t.size else 0.0
            raise IntegrationError(sol.message, last)
        return sol.y[:, -1].reshape(dim, dim)


def evolve(L: Superoperator, rho0, times: Sequence[float], sigma=None, mode: str = "auto",
           regions: dict | None = None, sigma_local: dict | None = None) -> Trajectory:
    """States on ``times`` with trace distance and relative entropy to σ (and optional local terms)."""
    rho = np.asarray(getattr(rho0, "mat", rho0), dtype=complex)
    if rho.shape != (L.dim, L.dim):
        raise DomainError(f"state shape {rho.shape} does not match generator dimension {L.dim}")
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be nondecreasing and nonnegative")
    prop = Propagator(L, mode)
    states, prev_t = [], 0.0
    for t in times:
        rho = prop(rho, t - prev_t)
        prev_t = t
        states.append(0.5 * (rho + rho.conj().T))
    states = np.array(states)
    td = np.full(len(times), np.nan)
    re = np.full(len(times), np.nan)
    local = {}
    if sigma is not None:
        sigma = np.asarray(getattr(sigma, "mat", sigma), dtype=complex)
        td = np.array([trace_norm(r - sigma) for r in states])
        re = np.array([relative_entropy(r, sigma) for r in states])
    for name, keep in (regions or {}).items():
        sl = sigma_local[name]
        local[name] = np.array([relative_entropy(ptrace_array(r, L.sites, keep, L.d), sl) for r in states])
    traj = Trajectory(times, states, td, re, local, prop.mode)
    traj.check()
    return traj


def decay_rate(times: Sequence[float], values: Sequence[float], floor: float = 1e-12,
               window: tuple[float, float] | None = None) -> float:
    """−slope of log(value) vs t by least squares over values above ``floor``."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    keep = v > floor
    if window is not None:
        keep &= (t >= window[0]) & (t <= window[1])
    if keep.sum() < 3:
        raise EstimationError("fewer than three usable points for a decay fit")
    return float(-linregress(t[keep], np.log(v[keep])).slope)


def worst_average_rate(times: Sequence[float], values: Sequence[float], floor: float = 1e-12) -> float:
    """min_t −log(D_t/D_0)/t: the slowest average decay seen along a trajectory."""
    t = np.asarray(times, float)
    v = np.asarray(values, float)
    keep = (t > 0) & (v > floor)
    if not keep.any() or v[0] <= floor:
        raise EstimationError("trajectory has no usable decay")
    return float(np.min(-np.log(v[keep] / v[0]) / t[keep]))


@dataclass(frozen=True)
class MixingResult:
    t_mix: float
    per_state: tuple[float, ...]
    gap_bound: float
    gap: float


def gap_mixing_bound(gap: float, sigma: np.ndarray, eps: float) -> float:
    """(1/λ) log(ε⁻¹ ‖σ^{-1/2}‖)."""
    smin = np.linalg.eigvalsh(0.5 * (sigma + sigma.conj().T))[0]
    if smin <= 0:
        raise DomainError("sigma is singular")
    return float(np.log(smin ** -0.5 / eps) / gap)


def default_initial_states(dim: int, rng: np.random.Generator, n_random: int = 32) -> list[np.ndarray]:
    out = []
    for k in range(dim):
        e = np.zeros((dim, dim), dtype=complex)
        e[k, k] = 1.0
        out.append(e)
    for _ in range(n_random):
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        v /= np.linalg.norm(v)
        out.append(np.outer(v, v.conj()))
    return out


def mixing_time(L: Superoperator, sigma: np.ndarray, eps: float, gap: float,
                initial_states: Sequence[np.ndarray] | None = None, horizon: float | None = None,
                steps: int = 200, tol: float = 1e-3, rng: np.random.Generator | None = None,
                mode: str = "auto") -> MixingResult:
    """Smallest t with ‖ρ_t − σ‖₁ ≤ ε for each initial state (grid then bisection)."""
    rng = np.random.default_rng(0) if rng is None else rng
    sigma = np.asarray(sigma, dtype=complex)
    if initial_states is None:
        initial_states = default_initial_states(L.dim, rng)
    horizon = 20.0 / gap if horizon is None else horizon
    prop = Propagator(L, mode)
    dt = horizon / steps
    per = []
    for rho0 in initial_states:
        rho = np.asarray(rho0, dtype=complex)
        if trace_norm(rho - sigma) <= eps:
            per.append(0.0)
            continue
        t, found = 0.0, False
        while t < horizon - 1e-12:
            nxt = prop(rho, dt)
            if trace_norm(nxt - sigma) <= eps:
                lo, hi = 0.0, dt
                while hi - lo > tol:
                    mid = 0.5 * (lo + hi)
                    if trace_norm(prop(rho, mid) - sigma) <= eps:
                        hi = mid
                    else:
                        lo = mid
                per.append(t + hi)
                found = True
                break
            rho, t = nxt, t + dt
        if not found:
            raise HorizonError(f"distance {trace_norm(rho - sigma):.3e} > {eps} at horizon {horizon}",
                               trace_norm(rho - sigma))
    return MixingResult(max(per), tuple(per), gap_mixing_bound(gap, sigma, eps), gap)


@dataclass(frozen=True)
class LocalCurve:
    times: np.ndarray
    local: np.ndarray
    global_: np.ndarray
    dpi_ok: bool


def local_mixing_curve(L: Superoperator, sigma: np.ndarray, A: Sequence[int], rho0,
                       times: Sequence[float], mode: str = "auto") -> LocalCurve:
    """D(tr_{A^c} ρ_t ‖ tr_{A^c} σ) alongside D(ρ_t‖σ)."""
    A = tuple(sorted(A))
    sA = ptrace_array(sigma, L.sites, A, L.d)
    traj = evolve(L, rho0, times, sigma, mode, regions={"A": A}, sigma_local={"A": sA})
    loc = traj.local["A"]
    ok = bool(np.all(loc <= traj.rel_entropy + 1e-10))
    return LocalCurve(traj.times, loc, traj.rel_entropy, ok)


@dataclass(frozen=True)
class DensityCurve:
    times: np.ndarray
    density: np.ndarray
    initial_bound: float
    bound_ok: bool


def entropy_density_decay(L: Superoperator, sigma: np.ndarray, rho0, times: Sequence[float],
                          H: np.ndarray, beta: float, log_z: float, mode: str = "auto") -> DensityCurve:
    """D(ρ_t‖σ)/|Γ| and the check D(ρ₀‖σ) ≤ log Z + β Tr[ρ₀ H]."""
    rho0 = np.asarray(getattr(rho0, "mat", rho0), dtype=complex)
    traj = evolve(L, rho0, times, sigma, mode)
    n = len(L.sites)
    bound = float(log_z + beta * np.trace(rho0 @ H).real)
    return DensityCurve(traj.times, traj.rel_entropy / n, bound, bool(traj.rel_entropy[0] <= bound + 1e-10))
