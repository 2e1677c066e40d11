"""Invariant suites run by ``rapidmix verify``; each check reports a residual against a tolerance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .channels import ConditionalExpectation, condexp_residuals
from .correlations import (covariance_sup, mixing_condition, mutual_information,
                           relation_properties_check, similarity)
from .davies import DaviesGenerator, davies_condexp, detailed_balance_residual, spectral_gap
from .dynamics import chain_rule_check, entropy_production, ep_finite_difference, evolve
from .hamiltonian import GibbsEnsemble, expansional, expansional_constant, lambda_ABC, weighted_partial_trace
from .lattice import boundary, closure, two_coloring
from .linalg import embed_array, ptrace_array, random_density, random_hermitian
from .schmidt import schmidt_condexp, sandwich_check
from .tensorization import exact_tensorization_check, omega_state


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def row(self) -> dict:
        return {"suite": self.suite, "check": self.name, "value": self.value, "tol": self.tol,
                "passed": self.passed}


def _mid(E: GibbsEnsemble) -> int:
    return E.graph.n // 2


def lattice_suite(E: GibbsEnsemble, rng) -> list[Check]:
    g = E.graph
    col = two_coloring(g)
    bad_edges = sum(col.labels[a] == col.labels[b] for a, b in g.edges)
    A = (_mid(E),)
    cl = closure(g, A)
    mismatch = len(set(cl) ^ (set(A) | set(boundary(g, A))))
    return [Check("lattice", "coloring_proper", float(bad_edges), 0.0),
            Check("lattice", "closure_is_region_plus_boundary", float(mismatch), 0.0)]


def operator_core_suite(E: GibbsEnsemble, rng) -> list[Check]:
    g = E.graph
    sites = g.vertices
    k = min(2, g.n)
    loc = sites[:k]
    X = random_hermitian(E.d ** k, rng)
    big = embed_array(X, loc, sites, E.d)
    rest = E.d ** (g.n - k)
    r = float(np.abs(ptrace_array(big, sites, loc, E.d) / rest - X).max())
    rho = random_density(E.d ** g.n, rng)
    tr = abs(np.trace(ptrace_array(rho, sites, loc, E.d)).real - 1.0)
    return [Check("operator-core", "embed_trace_roundtrip", r, 1e-10),
            Check("operator-core", "partial_trace_normalized", tr, 1e-12)]


def hamiltonian_suite(E: GibbsEnsemble, rng) -> list[Check]:
    g = E.graph
    out = []
    sig = E.sigma(g.vertices)
    out.append(Check("hamiltonian", "gibbs_trace", abs(np.trace(sig).real - 1.0), 1e-12))
    if g.n >= 3:
        A, B, C = (0,), tuple(range(1, g.n - 1)), (g.n - 1,)
        if E.potential.commuting:
            out.append(Check("hamiltonian", "lambda_two_formulas", lambda_ABC(E, A, B, C).gap, 1e-9))
        for inv in (False, True):
            M = expansional(E, A, B + C, inverse=inv)
            out.append(Check("hamiltonian", f"expansional_bound_{'inv' if inv else 'fwd'}",
                             max(0.0, np.linalg.norm(M, 2) - expansional_constant(E, A, B + C)), 1e-10))
        Q = random_hermitian(E.d ** (len(A) + len(B)), rng)
        Q /= np.linalg.norm(Q, 2)
        W = weighted_partial_trace(E.sigma(B), Q, A, B, E.d)
        out.append(Check("hamiltonian", "weighted_trace_contraction", max(0.0, np.linalg.norm(W, 2) - 1.0), 1e-10))
    return out


def correlations_suite(E: GibbsEnsemble, rng) -> list[Check]:
    g = E.graph
    sig = E.gibbs(g.vertices)
    A, C = (0,), (g.n - 1,)
    cs = covariance_sup(sig, A, C, rng=rng)
    mi = mutual_information(sig, A, C)
    rep = relation_properties_check(rng, samples=40, max_dim=8)
    out = [Check("correlations", "covariance_below_certificate", max(0.0, cs.value - cs.upper_bound), 1e-10),
           Check("correlations", "mi_below_mixing", max(0.0, mi - mixing_condition(sig, A, C)), 1e-10),
           Check("correlations", "similarity_reflexive", similarity(sig, sig).epsilon, 1e-10)]
    out += [Check("correlations", f"relation_{k}", float(v["failures"]), 0.0) for k, v in rep.items()]
    return out


def davies_suite(E: GibbsEnsemble, rng) -> list[Check]:
    g = E.graph
    sig = E.sigma(g.vertices)
    gen = DaviesGenerator(E)
    Lh = gen.superop("heisenberg", "dissipative")
    out = [Check("davies", "detailed_balance_gns", detailed_balance_residual(Lh, sig, rng), 1e-9),
           Check("davies", "sigma_stationary", float(np.abs(gen.apply(sig, "schrodinger")).max()), 1e-10)]
    if sig.shape[0] <= 32:
        gap = spectral_gap(gen.superop("heisenberg", "dissipative"), sig)
        out.append(Check("davies", "gap_positive", float(gap.gap <= 0), 0.0))
    if E.potential.commuting and len(closure(g, closure(g, (_mid(E),)))) <= 5:
        eD = davies_condexp(E, closure(g, (_mid(E),)))
        res = condexp_residuals(eD, sig, rng)
        out += [Check("davies", f"condexp_{k}", max(0.0, -v) if k == "choi_min_eig" else v, 1e-8)
                for k, v in res.items()]
    return out


def schmidt_suite(E: GibbsEnsemble, rng) -> list[Check]:
    if not E.potential.commuting:
        return []
    g = E.graph
    sig = E.sigma(g.vertices)
    A = (_mid(E),)
    e1 = schmidt_condexp(E, A)
    e2 = schmidt_condexp(E, A, method="block_formula")
    out = []
    for name, e in (("kms", e1), ("block", e2)):
        res = condexp_residuals(e, sig, rng)
        out += [Check("schmidt", f"{name}_{k}", max(0.0, -v) if k == "choi_min_eig" else v, 1e-8)
                for k, v in res.items()]
    X = random_hermitian(sig.shape[0], rng)
    out.append(Check("schmidt", "cross_method", float(np.abs(e1.heisenberg(X) - e2.heisenberg(X)).max()), 1e-8))
    if len(closure(g, closure(g, A))) <= 5:
        a, b, c = sandwich_check(E, A, random_density(sig.shape[0], rng))
        out.append(Check("schmidt", "sandwich", max(0.0, a - b, b - c), 1e-9))
    return out


def dynamics_suite(E: GibbsEnsemble, rng) -> list[Check]:
    g = E.graph
    sig = E.sigma(g.vertices)
    dim = sig.shape[0]
    out = []
    if E.potential.commuting:
        e = schmidt_condexp(E, (_mid(E),))
        out.append(Check("entropy-dynamics", "chain_rule", chain_rule_check(random_density(dim, rng), e, sig), 1e-8))
    if dim <= 32:
        L = DaviesGenerator(E).superop("schrodinger")
        Eg = ConditionalExpectation(g.vertices, g.vertices, np.eye(dim)[None].astype(complex), sig, E.d)
        # mixing with 1/d keeps log ρ smooth enough for the difference quotient
        rho = 0.5 * random_density(dim, rng) + 0.5 * np.eye(dim) / dim
        fd = ep_finite_difference(L, rho, sig)
        out.append(Check("entropy-dynamics", "ep_finite_difference", abs(entropy_production(L, rho, Eg) - fd), 1e-6))
        times = np.linspace(0, 3, 16)
        tr = evolve(L, rho, times, sigma=sig)
        out.append(Check("entropy-dynamics", "relative_entropy_monotone",
                         max(0.0, float(np.diff(tr.rel_entropy).max())), 1e-10))
    return out


def tensorization_suite(E: GibbsEnsemble, rng) -> list[Check]:
    if not E.potential.commuting:
        return []
    g = E.graph
    dim = E.d ** g.n
    om = omega_state(random_density(dim, rng), E, rng=rng)
    lhs, rhs = exact_tensorization_check(E, random_density(dim, rng))
    sig_fix = omega_state(E.sigma(g.vertices), E, rng=rng)
    return [Check("tensorization", "omega_invariance", om.invariance_residual, 1e-9),
            Check("tensorization", "omega_order_independence", om.order_residual, 1e-9),
            Check("tensorization", "omega_of_sigma", float(np.abs(sig_fix.omega - E.sigma(g.vertices)).max()), 1e-9),
            Check("tensorization", "exact_tensorization", max(0.0, lhs - rhs), 1e-10)]


SUITES: dict[str, Callable] = {
    "lattice": lattice_suite,
    "operator-core": operator_core_suite,
    "hamiltonian": hamiltonian_suite,
    "correlations": correlations_suite,
    "davies": davies_suite,
    "schmidt": schmidt_suite,
    "entropy-dynamics": dynamics_suite,
    "tensorization": tensorization_suite,
}


def run_suites(E: GibbsEnsemble, seed: int = 0) -> list[Check]:
    out = []
    for name, fn in SUITES.items():
        out += fn(E, np.random.default_rng([seed, len(name)]))
    return out
