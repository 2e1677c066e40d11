"""The semiclassical ω state, D_R sums, approximate tensorization and the MLSI assembly."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .davies import DaviesGenerator, davies_condexp
from .dynamics import evolve, mlsi_upper_estimate, relative_entropy, worst_average_rate
from .errors import EstimationError, GeometryError
from .hamiltonian import GibbsEnsemble
from .lattice import Coloring, boundary, closure, coarse_grain_sets, distance, two_coloring
from .linalg import random_density
from .schmidt import q_l1_linf_norm, schmidt_condexp

SLACK_TOL = 1e-8
DENOM_FLOOR = 1e-10


def _mat(rho) -> np.ndarray:
    return np.asarray(getattr(rho, "mat", rho), dtype=complex)


@dataclass(frozen=True)
class OmegaState:
    rho: np.ndarray = field(repr=False)
    gamma0: tuple[int, ...]
    omega: np.ndarray = field(repr=False)
    sites: tuple[int, ...]
    invariance_residual: float
    order_residual: float


def _apply_sites(E: GibbsEnsemble, xs: Sequence[int], rho: np.ndarray, sites) -> np.ndarray:
    for x in xs:
        rho = schmidt_condexp(E, (x,), sites=sites).schrodinger(rho)
    return rho


def omega_state(rho, E: GibbsEnsemble, coloring: Coloring | None = None,
                rng: np.random.Generator | None = None, tol: float = 1e-9) -> OmegaState:
    """ω = E^S_{Γ₀*}(ρ): label-0 single-site expectations applied in vertex order."""
    g = E.graph
    coloring = two_coloring(g) if coloring is None else coloring
    rng = np.random.default_rng(0) if rng is None else rng
    sites = g.vertices
    gamma0 = coloring.part(0)
    rho = _mat(rho)
    om = _apply_sites(E, gamma0, rho, sites)
    inv = max((np.abs(schmidt_condexp(E, (x,), sites=sites).schrodinger(om) - om).max() for x in gamma0),
              default=0.0)
    alt = _apply_sites(E, list(rng.permutation(gamma0)), rho, sites)
    order = float(np.abs(alt - om).max())
    if inv > tol or order > tol:
        raise EstimationError(f"ω invariants violated: invariance {inv:.2e}, order {order:.2e}")
    return OmegaState(rho, gamma0, om, sites, float(inv), order)


def _cond_entropy(E: GibbsEnsemble, omega: OmegaState, R: Sequence[int]) -> float:
    eR = schmidt_condexp(E, tuple(R), sites=omega.sites)
    return relative_entropy(omega.omega, eR.schrodinger(omega.omega))


def d_r(E: GibbsEnsemble, omega: OmegaState, Rs: Sequence[Sequence[int]]) -> tuple[float, list[float]]:
    """Σ_k D(ω‖E^S_{R_k*}(ω)) with per-region terms."""
    g0 = set(omega.gamma0)
    terms = []
    for R in Rs:
        bad = sorted(set(boundary(E.graph, R)) & g0)
        if bad:
            raise GeometryError(f"boundary of {tuple(R)} meets label-0 sites {bad}")
        terms.append(_cond_entropy(E, omega, R))
    return float(sum(terms)), terms


# ---------------------------------------------------------------- approximate tensorization


@dataclass(frozen=True)
class TensorizationReport:
    C: tuple[int, ...]
    D: tuple[int, ...]
    l: int
    lhs: float
    rhs_C: float
    rhs_D: float
    eta: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.eta < 0.5 and self.slack >= -SLACK_TOL

    def to_row(self) -> dict:
        return {"C": list(self.C), "D": list(self.D), "l": self.l, "lhs": self.lhs, "rhs_C": self.rhs_C,
                "rhs_D": self.rhs_D, "eta": self.eta, "slack": self.slack, "passed": self.passed}


def check_hypotheses(E: GibbsEnsemble, gamma0: Sequence[int], C: Sequence[int], D: Sequence[int]) -> int:
    """Validate the region pair and return l = dist(C∖D, D∖C)."""
    g = E.graph
    C, D = tuple(sorted(C)), tuple(sorted(D))
    g0 = set(gamma0)
    R = tuple(sorted(set(C) | set(D)))
    for name, X in (("∂C", boundary(g, C)), ("∂D", boundary(g, D)), ("∂(C∪D)", boundary(g, R))):
        bad = sorted(set(X) & g0)
        if bad:
            raise GeometryError(f"{name} meets label-0 sites {bad}")
    cd, dc = sorted(set(C) - set(D)), sorted(set(D) - set(C))
    if not cd or not dc or not set(C) & set(D):
        raise GeometryError("C and D must overlap with nonempty differences")
    l = distance(g, cd, dc)
    if l <= 1:
        raise GeometryError(f"dist(C∖D, D∖C) = {l} must exceed 1")
    return l


def approx_tensorization_check(E: GibbsEnsemble, omega: OmegaState, C: Sequence[int], D: Sequence[int],
                               eta: float | None = None, restarts: int = 8) -> TensorizationReport:
    """LHS D(ω‖E_{C∪D*}ω) against [D(ω‖E_{C*}ω) + D(ω‖E_{D*}ω)]/(1 − 2η̂)."""
    C, D = tuple(sorted(C)), tuple(sorted(D))
    l = check_hypotheses(E, omega.gamma0, C, D)
    if eta is None:
        eta = q_l1_linf_norm(E, C, D, restarts=restarts).max
    lhs = _cond_entropy(E, omega, sorted(set(C) | set(D)))
    rc, rd = _cond_entropy(E, omega, C), _cond_entropy(E, omega, D)
    slack = (rc + rd) / (1 - 2 * eta) - lhs if eta < 0.5 else float("-inf")
    return TensorizationReport(C, D, l, lhs, rc, rd, float(eta), float(slack))


def admissible_pairs(E: GibbsEnsemble, coloring: Coloring | None = None) -> list[tuple[tuple, tuple]]:
    """All interval pairs on a chain that satisfy the tensorization hypotheses."""
    g = E.graph
    if g.kind != "chain":
        raise GeometryError("pair enumeration is implemented for chains")
    coloring = two_coloring(g) if coloring is None else coloring
    g0 = coloring.part(0)
    out = []
    n = g.n
    ivs = [tuple(range(a, b + 1)) for a in range(n) for b in range(a, n)]
    for C in ivs:
        for D in ivs:
            if C[0] >= D[0] or C[-1] >= D[-1]:
                continue
            try:
                check_hypotheses(E, g0, C, D)
            except GeometryError:
                continue
            out.append((C, D))
    return out


def tensorization_sweep(E: GibbsEnsemble, states: Sequence[np.ndarray], restarts: int = 8,
                        rng: np.random.Generator | None = None) -> list[TensorizationReport]:
    """Every admissible pair against ω built from every state; η̂ computed once per pair."""
    pairs = admissible_pairs(E)
    omegas = [omega_state(r, E, rng=rng) for r in states]
    out = []
    for C, D in pairs:
        eta = q_l1_linf_norm(E, C, D, restarts=restarts).max
        for om in omegas:
            out.append(approx_tensorization_check(E, om, C, D, eta=eta))
    return out


def exact_tensorization_check(E: GibbsEnsemble, rho, coloring: Coloring | None = None) -> tuple[float, float]:
    """(D(ρ‖E^S_{Γ₀*}ρ), Σ_x D(ρ‖E^S_{x*}ρ)) over label-0 sites."""
    g = E.graph
    coloring = two_coloring(g) if coloring is None else coloring
    rho = _mat(rho)
    g0 = coloring.part(0)
    lhs = relative_entropy(rho, _apply_sites(E, g0, rho, g.vertices))
    rhs = sum(relative_entropy(rho, schmidt_condexp(E, (x,), sites=g.vertices).schrodinger(rho)) for x in g0)
    return lhs, float(rhs)


def dpi_step_check(E: GibbsEnsemble, rho, R: Sequence[int], coloring: Coloring | None = None) -> tuple[float, float]:
    """(D(ω‖E^S_{R*}ω), D(ρ‖E^S_{R*}ρ)) with ω = E^S_{Γ₀*}(ρ)."""
    g = E.graph
    coloring = two_coloring(g) if coloring is None else coloring
    rho = _mat(rho)
    om = _apply_sites(E, coloring.part(0), rho, g.vertices)
    eR = schmidt_condexp(E, tuple(R), sites=g.vertices)
    return relative_entropy(om, eR.schrodinger(om)), relative_entropy(rho, eR.schrodinger(rho))


# ---------------------------------------------------------------- C(L)


def state_ensemble(dim: int, rng: np.random.Generator, n_random: int = 16, max_basis: int = 64) -> list[np.ndarray]:
    """Computational basis states (all, or a random subset of ``max_basis``) plus random states."""
    idx = range(dim) if dim <= max_basis else sorted(rng.choice(dim, max_basis, replace=False))
    out = []
    for k in idx:
        b = np.zeros((dim, dim), dtype=complex)
        b[k, k] = 1.0
        out.append(b)
    out += [random_density(dim, rng) for _ in range(n_random)]
    return out


@dataclass(frozen=True)
class CEstimate:
    L: int
    n_sites: int
    c_hat: float
    evaluated: int
    skipped: int


def c_hat(E: GibbsEnsemble, l0: int, states: Sequence[np.ndarray], rooted: bool = True,
          rng: np.random.Generator | None = None) -> CEstimate:
    """max over ``states`` of D(ω‖E^S_{Γ*}ω)/D_Γ(ω) with Γ the whole graph."""
    g = E.graph
    col = two_coloring(g)
    cg = coarse_grain_sets(g, col, l0, rooted=rooted)
    sig = E.sigma(g.vertices)
    best, used, skipped = 0.0, 0, 0
    for rho in states:
        om = omega_state(rho, E, col, rng=rng)
        den, _ = d_r(E, om, cg.sets)
        if den < DENOM_FLOOR:
            skipped += 1
            continue
        used += 1
        best = max(best, relative_entropy(om.omega, sig) / den)
    if used == 0:
        raise EstimationError("every D_Γ(ω) in the ensemble vanishes")
    L = max(g.depth[v] for v in range(g.n)) if g.kind == "bary_tree" else g.n - 1
    return CEstimate(L, g.n, best, used, skipped)


def c_of_l_estimate(ensembles: Sequence[GibbsEnsemble], l0: int = 2, n_random: int = 16, seed: int = 0,
                    rooted: bool = True) -> list[CEstimate]:
    """Ĉ(L) on growing regions, one Gibbs ensemble per region; a lower bound on C(L)."""
    out = []
    for E in ensembles:
        rng = np.random.default_rng(seed)
        dim = E.d ** E.graph.n
        out.append(c_hat(E, l0, state_ensemble(dim, rng, n_random), rooted, rng))
    return sorted(out, key=lambda c: c.L)


# ---------------------------------------------------------------- assembly


def mlsi_assembly(alpha0: float, alpha1: float, C: float, m: int) -> float:
    """min{α₀, α₁}/(2mC)."""
    if min(alpha0, alpha1, C, m) <= 0:
        raise ValueError("assembly inputs must be positive")
    return min(alpha0, alpha1) / (2 * m * C)


def local_mlsi(E: GibbsEnsemble, X: Sequence[int], budget: int = 30, n_random: int = 6,
               rng: np.random.Generator | None = None, couplings="xyz", chi: str = "glauber") -> float:
    """Sampled MLSI estimate of L^D_X against E^D_X on the closure of X."""
    g = E.graph
    loc = closure(g, X)
    gen = DaviesGenerator(E, region=loc, couplings=couplings, chi=chi, mode="local", active=X)
    ED = davies_condexp(E, X, full_sites=loc, couplings=couplings, chi=chi)
    Ls = gen.superop("schrodinger", "dissipative")
    Lh = gen.superop("heisenberg", "dissipative")
    est = mlsi_upper_estimate(Ls, ED, budget=budget, rng=rng, L_heis=Lh, sigma=E.sigma(loc),
                              n_random=n_random)
    return est.ratio


@dataclass(frozen=True)
class AssemblyReport:
    alpha0: float
    alpha1: float
    c_hat: float
    m: int
    bound: float
    trajectory_rates: tuple[float, ...]

    @property
    def min_rate(self) -> float:
        return min(self.trajectory_rates)

    @property
    def passed(self) -> bool:
        return self.bound <= self.min_rate


def assembly_pipeline(E: GibbsEnsemble, l0: int = 2, n_traj: int = 6, t_max: float = 6.0, steps: int = 61,
                      seed: int = 0, budget: int = 30) -> AssemblyReport:
    """Local constants, Ĉ and m on Γ = the whole chain, then slowest average decay of D(ρ_t‖σ)."""
    g = E.graph
    rng = np.random.default_rng(seed)
    col = two_coloring(g)
    g0 = col.part(0)
    cg = coarse_grain_sets(g, col, l0, rooted=True)
    alpha0 = min(local_mlsi(E, closure(g, (x,)), budget, rng=rng) for x in g0)
    alpha1 = min(local_mlsi(E, closure(g, R), budget, rng=rng) for R in cg.sets)
    dim = E.d ** g.n
    c = c_hat(E, l0, state_ensemble(dim, rng, 16), True, rng).c_hat
    bound = mlsi_assembly(alpha0, alpha1, c, cg.m)
    sig = E.sigma(g.vertices)
    L = DaviesGenerator(E).superop("schrodinger")
    times = np.linspace(0.0, t_max, steps)
    rates = []
    for rho in state_ensemble(dim, rng, n_random=n_traj // 2, max_basis=n_traj - n_traj // 2):
        tr = evolve(L, rho, times, sigma=sig)
        rates.append(worst_average_rate(times, tr.rel_entropy))
    return AssemblyReport(alpha0, alpha1, c, cg.m, bound, tuple(rates))
