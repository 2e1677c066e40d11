"""Acceptance criteria 1 to 11; each test prints one PASS/FAIL line with its measured margin."""

import math
import time

import numpy as np
import pytest

from rapidmix.channels import ConditionalExpectation, condexp_residuals
from rapidmix.correlations import MEASURES, decay_scan, relation_properties_check
from rapidmix.davies import DaviesGenerator, bohr_decompose, davies_condexp, slowest_mode, spectral_gap
from rapidmix.dynamics import (chain_rule_check, decay_rate, default_initial_states, entropy_production,
                               ep_finite_difference, evolve, local_mixing_curve, mixing_time,
                               mlsi_upper_estimate)
from rapidmix.hamiltonian import expansional, expansional_constant, lambda_ABC, weighted_partial_trace
from rapidmix.lattice import closure, growth_constant
from rapidmix.linalg import random_density, random_hermitian
from rapidmix.schmidt import q_l1_linf_norm, q_norm_oracle, sandwich_check, sandwich_expectations, schmidt_condexp
from rapidmix.tensorization import assembly_pipeline, exact_tensorization_check, tensorization_sweep

from conftest import chain


@pytest.fixture
def report(capsys):
    start = time.perf_counter()

    def emit(k, ok, budget, detail):
        elapsed = time.perf_counter() - start
        ok = bool(ok) and elapsed < budget
        with capsys.disabled():
            print(f"\nCriterion {k}: {'PASS' if ok else 'FAIL'} ({detail}; {elapsed:.1f}s of {budget:.0f}s)")
        return ok

    return emit


def test_criterion_01_identities(report):
    rng = np.random.default_rng(1)
    worst_chain = 0.0
    for kind, n in (("ising", 5), ("random_commuting", 4), ("ising", 3)):
        E = chain(n, kind, beta=0.7)
        sig = E.sigma(E.graph.vertices)
        e = schmidt_condexp(E, (n // 2,))
        for _ in range(100 // 3 + 1):
            worst_chain = max(worst_chain, chain_rule_check(random_density(2 ** n, rng), e, sig))
    worst_lam = 0.0
    for seed in range(50):
        n = 3 + seed % 6
        E = chain(n, "random_commuting", beta=0.3 + 0.02 * seed, seed=seed)
        A, B, C = (0,), tuple(range(1, n - 1)), (n - 1,)
        if n >= 5 and seed % 2:
            A, B, C = (0, 1), tuple(range(2, n - 1)), (n - 1,)
        worst_lam = max(worst_lam, lambda_ABC(E, A, B, C).gap)
    worst_bohr = 0.0
    for _ in range(20):
        H, S = random_hermitian(8, rng), random_hermitian(8, rng)
        worst_bohr = max(worst_bohr, float(np.abs(sum(c for _, c in bohr_decompose(H, S)) - S).max()))
    ok = worst_chain < 1e-8 and worst_lam < 1e-9 and worst_bohr < 1e-9
    assert report(1, ok, 120, f"chain rule {worst_chain:.1e}, lambda {worst_lam:.1e}, Bohr {worst_bohr:.1e}")


def test_criterion_02_condexp_axioms(report):
    rng = np.random.default_rng(2)
    worst = {"idempotence": 0.0, "unitality": 0.0, "sigma_invariance": 0.0, "modular": 0.0}
    choi = math.inf
    cross = 0.0
    for kind, n in (("ising", 4), ("ising", 5), ("random_commuting", 5)):
        E = chain(n, kind, beta=0.6)
        sig = E.sigma(E.graph.vertices)
        exps = []
        for A in ((n // 2,), (1, 2)):
            eK = schmidt_condexp(E, A, method="kms_projection")
            eB = schmidt_condexp(E, A, method="block_formula")
            X = random_hermitian(2 ** n, rng)
            cross = max(cross, float(np.abs(eK.heisenberg(X) - eB.heisenberg(X)).max()))
            exps += [eK, eB]
        mid = (n // 2,) if n < 5 else (1, 2, 3)
        exps.append(davies_condexp(E, mid))
        for e in exps:
            res = condexp_residuals(e, sig, rng, s_values=(0.3, 1.0, 2.7))
            choi = min(choi, res["choi_min_eig"])
            for k in worst:
                worst[k] = max(worst[k], res[k])
    ok = max(worst.values()) < 1e-8 and choi >= -1e-8 and cross < 1e-8
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert report(2, ok, 300, f"{detail}, Choi min {choi:.1e}, cross-method {cross:.1e}")


def test_criterion_03_sandwich(report):
    rng = np.random.default_rng(3)
    worst = math.inf
    for kind in ("ising", "random_commuting"):
        E = chain(5, kind, beta=0.8)
        exps = sandwich_expectations(E, (2,))
        for _ in range(100):
            a, b, c = sandwich_check(E, (2,), random_density(32, rng), exps=exps)
            worst = min(worst, b - a, c - b)
    assert report(3, worst >= -1e-9, 300, f"min slack {worst:.2e}")


def test_criterion_04_relation_constants(report):
    rep = relation_properties_check(np.random.default_rng(4), samples=500, max_dim=16)
    fails = sum(v["failures"] for v in rep.values())
    slack = min(v["worst_slack"] for v in rep.values())
    assert report(4, fails == 0, 60, f"{len(rep)} relations, failures {fails}, worst slack {slack:.2e}")


def test_criterion_05_expansionals(report):
    rng = np.random.default_rng(5)
    worst_K, worst_contr = -math.inf, -math.inf
    for seed in range(50):
        n = 3 + seed % 4
        E = chain(n, "random_commuting", beta=0.2 + 0.03 * seed, seed=seed)
        k = 1 + seed % (n - 1)
        A, B = tuple(range(k)), tuple(range(k, n))
        K = expansional_constant(E, A, B)
        for inv in (False, True):
            worst_K = max(worst_K, np.linalg.norm(expansional(E, A, B, inverse=inv), 2) - K)
        Q = random_hermitian(2 ** n, rng)
        Q /= np.linalg.norm(Q, 2)
        W = weighted_partial_trace(E.sigma(B), Q, A, B, 2)
        worst_contr = max(worst_contr, np.linalg.norm(W, 2) - 1.0)
    beta, J = 0.7, 1.3
    E2 = chain(2, beta=beta, J=J, g=0.0)
    edge = abs(np.linalg.norm(expansional(E2, (0,), (1,)), 2) - math.exp(beta * J))
    ok = worst_K <= 1e-10 and worst_contr <= 1e-10 and edge < 1e-10
    assert report(5, ok, 60, f"max ‖E‖−K {worst_K:.2e}, max ‖tr‖−1 {worst_contr:.2e}, edge {edge:.1e}")


def test_criterion_06_clustering_echo(report):
    ls = range(1, 7)
    r2_min, ratio_max, notes = math.inf, 0.0, []
    for beta in (0.2, 0.5, 1.0):
        E = chain(10, beta=beta)
        fits = [decay_scan(E, m, ls).fit for m in MEASURES]
        rates = [f.rate for f in fits]
        r2_min = min(r2_min, min(f.r_squared for f in fits))
        ratio_max = max(ratio_max, max(rates) / min(rates))
        notes.append(f"β={beta}: rates {min(rates):.2f}..{max(rates):.2f}")
    E0 = chain(10, beta=0.0)
    zero = max(r["value"] for m in MEASURES for r in decay_scan(E0, m, ls).rows)
    ok = r2_min >= 0.9 and ratio_max <= 3.0 and zero < 1e-12
    assert report(6, ok, 600, f"min r² {r2_min:.3f}, max rate ratio {ratio_max:.2f}, β=0 max {zero:.1e}; "
                              + "; ".join(notes))


def test_criterion_07_qnorm(report):
    E = chain(5, beta=0.4)
    q = q_l1_linf_norm(E, (1, 2), (2, 3))
    err = max(abs(q_norm_oracle(E, (1, 2), (2, 3), lab) - v) for lab, v in q.per_block.items())
    guard = 1.0 / (10 * math.e * 1.0 * growth_constant(E.graph))
    E8 = chain(8, beta=0.9 * guard)
    # C ∪ D = sites 0..6 throughout; l = |C ∩ D| + 1 separates C∖D from D∖C
    geoms = [((0, 1, 2, 3), (3, 4, 5, 6)), ((0, 1, 2, 3, 4), (2, 3, 4, 5, 6)),
             ((0, 1, 2, 3, 4, 5), (1, 2, 3, 4, 5, 6))]
    vals = [q_l1_linf_norm(E8, C, D, restarts=4).max for C, D in geoms]
    decays = all(b < a for a, b in zip(vals, vals[1:]))
    ok = err < 1e-6 and decays
    assert report(7, ok, 300, f"oracle gap {err:.1e}, n=8 β={E8.beta:.4f}: "
                              + ", ".join(f"{v:.2e}" for v in vals))


def test_criterion_08_tensorization(report):
    rng = np.random.default_rng(8)
    worst, checked, skipped = math.inf, 0, 0
    exact = -math.inf
    for n in (7, 9):
        E = chain(n, beta=0.4)
        reps = tensorization_sweep(E, [random_density(2 ** n, rng)], restarts=4, rng=rng)
        for r in reps:
            if r.eta < 0.5:
                worst, checked = min(worst, r.slack), checked + 1
            else:
                skipped += 1
        E0 = chain(n, beta=0.0)
        lhs, rhs = exact_tensorization_check(E0, random_density(2 ** n, rng))
        exact = max(exact, lhs - rhs)
    ok = checked > 0 and worst >= -1e-8 and exact <= 1e-10
    assert report(8, ok, 600, f"{checked} pairs, min slack {worst:.2e}, η̂≥1/2 skipped {skipped}, "
                              f"β=0 LHS−RHS {exact:.1e}")


def _davies(n, beta):
    E = chain(n, beta=beta)
    gen = DaviesGenerator(E)
    sig = E.sigma(E.graph.vertices)
    return E, gen, sig


def test_criterion_09_dynamics(report):
    rng = np.random.default_rng(9)
    mix_ok, mono = True, -math.inf
    worst_ratio = 0.0
    for n in (2, 3, 4):
        for beta in (0.0, 0.5, 1.0):
            E, gen, sig = _davies(n, beta)
            gap = spectral_gap(gen.superop("heisenberg", "dissipative"), sig).gap
            L = gen.superop("schrodinger")
            res = mixing_time(L, sig, 0.01, gap, initial_states=default_initial_states(2 ** n, rng, 4), rng=rng)
            mix_ok &= res.t_mix <= res.gap_bound
            worst_ratio = max(worst_ratio, res.t_mix / res.gap_bound)
            tr = evolve(L, random_density(2 ** n, rng), np.linspace(0, 4, 21), sigma=sig)
            mono = max(mono, float(np.diff(tr.rel_entropy).max()))
    E, gen, sig = _davies(3, 0.7)
    L = gen.superop("schrodinger")
    Eg = ConditionalExpectation((0, 1, 2), (0, 1, 2), np.eye(8)[None].astype(complex), sig, 2)
    ep_err = 0.0
    for _ in range(5):
        rho = 0.5 * random_density(8, rng) + 0.5 * np.eye(8) / 8
        ep_err = max(ep_err, abs(entropy_production(L, rho, Eg) - ep_finite_difference(L, rho, sig)))
    gaps, mlsis = [], []
    for n in (3, 4, 5, 6):
        E, gen, sig = _davies(n, 0.5)
        Lh = gen.superop("heisenberg", "dissipative")
        Ls = gen.superop("schrodinger", "dissipative")
        gaps.append(spectral_gap(Lh, sig).gap)
        dim = 2 ** n
        Eg = ConditionalExpectation(E.graph.vertices, E.graph.vertices, np.eye(dim)[None].astype(complex), sig, 2)
        slow = slowest_mode(Lh, sig) if dim <= 32 else None
        mlsis.append(mlsi_upper_estimate(Ls, Eg, budget=30, rng=np.random.default_rng(n), L_heis=Lh, sigma=sig,
                                         n_random=6, slow_mode=slow).ratio)
    gap_var = max(gaps) / min(gaps) - 1
    mlsi_var = max(mlsis) / min(mlsis) - 1
    ok = mix_ok and mono <= 1e-10 and ep_err < 1e-6 and gap_var < 0.5 and mlsi_var < 0.5
    assert report(9, ok, 900, f"max t_mix/bound {worst_ratio:.2f}, max ΔD {mono:.1e}, EP err {ep_err:.1e}, "
                              f"gap variation {gap_var:.0%}, MLSI variation {mlsi_var:.0%}")


def test_criterion_10_local_mixing(report):
    E, gen, sig = _davies(6, 0.5)
    L = gen.superop("schrodinger")
    times = np.linspace(0, 8, 41)
    dpi, worst = True, math.inf
    for k in (0, 63, 21):
        rho0 = np.zeros((64, 64), dtype=complex)
        rho0[k, k] = 1.0
        cur = local_mixing_curve(L, sig, (2, 3), rho0, times)
        dpi &= cur.dpi_ok
        worst = min(worst, decay_rate(times, cur.local) / decay_rate(times, cur.global_))
    assert report(10, dpi and worst >= 0.9, 300, f"DPI {'holds' if dpi else 'violated'}, "
                                                 f"min local/global rate {worst:.3f}")


def test_criterion_11_assembly(report):
    rep = assembly_pipeline(chain(5, beta=0.5), n_traj=6)
    ok = rep.bound <= rep.min_rate
    assert report(11, ok, 600, f"bound {rep.bound:.4f} (α₀ {rep.alpha0:.3f}, α₁ {rep.alpha1:.3f}, "
                               f"Ĉ {rep.c_hat:.3f}, m {rep.m}) vs slowest rate {rep.min_rate:.4f}")
