"""Acceptance suite: one PASS/FAIL line per criterion, at the required tolerances.

Lines tagged ``companion`` are supporting evidence and never replace the
criterion they accompany.
"""
import time

import numpy as np
import pytest

from conftest import make_instance, record
from pddistiag.baselines import gtd2_limit, run_central
from pddistiag.cli import default_gamma1
from pddistiag.diagnostics import (certify_step_size, error_triples, fit_linear_rate, q_matrix)
from pddistiag.errors import DivergenceError
from pddistiag.moments import (dual_inner_max, j_grad_theta, j_grad_w, j_value, mspbe_agent,
                               mspbe_grad, solve_saddle_point, stationarity_system)
from pddistiag.network import build_mixing, default_er_probability
from pddistiag.solver import Schedule, init_state, run, step


def _stable_step(mom, mixing, gamma_max, epochs=100):
    """Largest ``gamma_max / 2^k`` whose run (gamma2 = beta gamma1) does not blow up."""
    g = gamma_max
    while g > 1e-12:
        st = init_state(mom, mixing, g)
        try:
            tr = run(st, mom, mixing, Schedule("cyclic", mom.M), epochs * mom.M,
                     solve_saddle_point(mom), record_every=mom.M)
            if tr.gap[-1] < tr.gap[0]:
                return g
        except DivergenceError:
            pass
        g /= 2
    raise AssertionError("no stable step found")


# 1 -------------------------------------------------------------------------------

def test_c1_double_average_identity():
    mom, _ = make_instance(N=3, M=20, d=5, rho=0.1)
    mix = build_mixing("ring", 3)
    sch = Schedule("cyclic", mom.M)
    st = init_state(mom, mix, 0.01)
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(10 * mom.M):
        step(st, mom, mix, sch)
        avg = st.grad_table_theta.sum(axis=(0, 1)) / (st.N * st.M)
        worst = max(worst, float(np.linalg.norm(st.s.mean(axis=0) - avg)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-12 and elapsed < 1.0
    record("C1 lemma-identity", ok, f"max deviation {worst:.2e} (<1e-12), {elapsed:.3f}s (<1s)")
    assert ok


# 2, 3 ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def c2_instance():
    mom, sp = make_instance(N=5, M=50, d=8, rho=0.01)
    return mom, sp, build_mixing("complete", 5)


@pytest.fixture(scope="module")
def c2_certified_run(c2_instance):
    mom, sp, mix = c2_instance
    cert = certify_step_size(mom, mix)
    if not cert.found:
        return cert, None, None
    t0 = time.perf_counter()
    st = init_state(mom, mix, cert.gamma1)
    tr = run(st, mom, mix, Schedule("cyclic", mom.M), 500 * mom.M, sp, record_every=mom.M)
    return cert, tr, time.perf_counter() - t0


@pytest.fixture(scope="module")
def c2_companion_run(c2_instance):
    mom, sp, mix = c2_instance
    cert = certify_step_size(mom, mix)
    g = _stable_step(mom, mix, cert.gamma_max)
    t0 = time.perf_counter()
    st = init_state(mom, mix, g)
    tr = run(st, mom, mix, Schedule("cyclic", mom.M), 500 * mom.M, sp, record_every=mom.M)
    return g, tr, time.perf_counter() - t0


def test_c2_certified_convergence(c2_certified_run):
    cert, tr, elapsed = c2_certified_run
    if tr is None:
        record("C2 oracle-convergence", False,
               f"no certified step: best 1-rho(Q) = {1 - cert.best_radius:.2e} < margin 1e-6")
        pytest.fail("certify_step_size returned no step size for the criterion instance")
    slope, r2 = fit_linear_rate(tr, burn_in=10 * tr.M)
    ok = tr.gap[-1] < 1e-8 and slope < 0 and r2 > 0.95 and elapsed < 10
    record("C2 oracle-convergence", ok,
           f"gamma1*={cert.gamma1:.3e} gap {tr.gap[-1]:.2e} slope {slope:.2e} r2 {r2:.3f}")
    assert ok


def test_c2_companion_empirical_step(c2_companion_run):
    g, tr, elapsed = c2_companion_run
    slope, r2 = fit_linear_rate(tr, burn_in=10 * tr.M)
    ok = tr.gap[-1] < 1e-8 and slope < 0 and r2 > 0.95 and elapsed < 10
    record("C2 companion", ok, f"gamma1={g:.3e} (stability scan, gamma2=beta*gamma1) gap "
                               f"{tr.gap[-1]:.2e} slope {slope:.2e} r2 {r2:.3f} {elapsed:.2f}s")
    assert ok


def _consensus_fit(tr):
    return fit_linear_rate(tr, burn_in=10 * tr.M, column="consensus")


def test_c3_consensus_decay(c2_certified_run):
    cert, tr, _ = c2_certified_run
    if tr is None:
        record("C3 consensus-decay", False, "depends on the certified run of C2, which is absent")
        pytest.fail("no certified step size for the criterion instance")
    slope, r2 = _consensus_fit(tr)
    ok = tr.consensus[-1] < 1e-8 and r2 > 0.9 and slope < 0
    record("C3 consensus-decay", ok, f"E_c {tr.consensus[-1]:.2e} r2 {r2:.3f}")
    assert ok


def test_c3_companion(c2_companion_run):
    g, tr, _ = c2_companion_run
    slope, r2 = _consensus_fit(tr)
    ok = tr.consensus[-1] < 1e-8 and r2 > 0.9 and slope < 0
    record("C3 companion", ok, f"gamma1={g:.3e} E_c {tr.consensus[-1]:.2e} slope {slope:.2e} "
                               f"r2 {r2:.3f}")
    assert ok


# 4 -------------------------------------------------------------------------------

def test_c4_saddle_point_oracle():
    worst_res, worst_grad = 0.0, 0.0
    for seed in range(20):
        mom, sp = make_instance(N=1 + seed % 4, M=20 + seed, d=3 + seed % 5, rho=0.01 * seed,
                                seed=100 + seed)
        G, rhs = stationarity_system(mom, sp.beta)
        v = np.concatenate([sp.theta_star, (sp.w_star / np.sqrt(sp.beta * mom.N)).ravel()])
        worst_res = max(worst_res, np.linalg.norm(G @ v - rhs) / (1 + np.linalg.norm(rhs)))
        worst_grad = max(worst_grad, np.linalg.norm(mspbe_grad(mom, sp.theta_star)))
    ok = worst_res < 1e-8 and worst_grad < 1e-8
    record("C4 saddle-oracle", ok, f"relative residual {worst_res:.2e}, grad norm {worst_grad:.2e}")
    assert ok


# 5 -------------------------------------------------------------------------------

def test_c5_single_agent_sag():
    mom, _ = make_instance(N=1, M=20, d=5, rho=0.05)
    mix = build_mixing("complete", 1)
    g1, g2 = 0.02, 0.2
    st = init_state(mom, mix, g1, g2)
    sch = Schedule("cyclic", mom.M)
    theta, w, s, dv = (np.zeros(mom.d) for _ in range(4))
    tab_t, tab_w = np.zeros((mom.M, mom.d)), np.zeros((mom.M, mom.d))
    worst = 0.0
    for t in range(1, 10 * mom.M + 1):
        p = (t - 1) % mom.M
        gt = mom.rho * theta + mom.A[p].T @ w
        gw = mom.A[p] @ theta - mom.C[p] @ w - mom.b[p, 0]
        s, dv = s + (gt - tab_t[p]) / mom.M, dv + (gw - tab_w[p]) / mom.M
        tab_t[p], tab_w[p] = gt, gw
        theta, w = theta - g1 * s, w + g2 * dv
        step(st, mom, mix, sch)
        worst = max(worst, np.abs(st.theta[0] - theta).max(), np.abs(st.w[0] - w).max())
    ok = worst < 1e-12
    record("C5 single-agent-sag", ok, f"max iterate difference {worst:.2e} (<1e-12)")
    assert ok


# 6 -------------------------------------------------------------------------------

def test_c6_fenchel_identity():
    rng = np.random.default_rng(6)
    worst = 0.0
    for k in range(100):
        mom, _ = make_instance(N=2, M=15, d=3 + k % 3, rho=0.1 * (k % 4), seed=200 + k % 10)
        theta = rng.normal(scale=3.0, size=mom.d)
        i = int(rng.integers(mom.N))
        val, _ = dual_inner_max(mom, theta, i)
        worst = max(worst, abs(val - mspbe_agent(mom, theta, i)))
    ok = worst < 1e-10
    record("C6 fenchel-identity", ok, f"max |inner max - local MSPBE| {worst:.2e} (<1e-10)")
    assert ok


# 7 -------------------------------------------------------------------------------

def _desk_instances():
    for seed in range(10):
        mom, sp = make_instance(N=3, M=10, d=4, rho=0.1, seed=300 + seed)
        yield seed, mom, sp, build_mixing("path", 3)


def test_c7_certificate_soundness():
    certified, failures, best = 0, [], 0.0
    for seed, mom, sp, mix in _desk_instances():
        cert = certify_step_size(mom, mix)
        best = max(best, 1 - cert.best_radius)
        if not cert.found:
            continue
        certified += 1
        qc = q_matrix(mom, mix, cert.gamma1)
        st = init_state(mom, mix, cert.gamma1)
        tr = run(st, mom, mix, Schedule("cyclic", mom.M), 500 * mom.M, sp, record_every=mom.M)
        slope, r2 = fit_linear_rate(tr, burn_in=10 * mom.M)
        if not (qc.spectral_radius < 1 and (qc.q @ qc.q > 0).all() and tr.gap[-1] < 1e-8
                and slope < 0 and r2 > 0.95):
            failures.append(seed)
    ok = certified > 0 and not failures
    record("C7 certificate-soundness", ok,
           f"{certified}/10 instances certified (largest 1-rho(Q) {best:.2e} vs margin 1e-6); "
           f"failures {failures}")
    assert ok


def _row_ratios(errors, q, M):
    """Largest observed ``e_k(t+1) / (Q max-window e)_k`` per row."""
    e = np.asarray(errors, dtype=float)
    worst = np.zeros(3)
    for t in range(e.shape[0] - 1):
        bound = q @ e[max(0, t - 2 * M):t + 1].max(axis=0)
        worst = np.maximum(worst, e[t + 1] / np.maximum(bound, 1e-300))
    return worst


def test_c7_companion_margin_free():
    bad, eg_worst = [], 0.0
    for seed, mom, sp, mix in _desk_instances():
        cert = certify_step_size(mom, mix, margin=0.0)
        qc = q_matrix(mom, mix, cert.gamma1, u_norms="bound")
        qe = q_matrix(mom, mix, cert.gamma1, u_norms="exact")
        st = init_state(mom, mix, cert.gamma1)
        rows = error_triples(st, mom, mix, Schedule("cyclic", mom.M), sp, 4 * mom.M)
        ratio = _row_ratios(rows, qe.q, mom.M)
        eg_worst = max(eg_worst, ratio[2])
        # The E_g row of the one-step bound is reported, not gated: its constants
        # are violated on several instances (see the notes ledger).
        if not (qc.spectral_radius < 1 and (qc.q @ qc.q > 0).all()
                and ratio[0] <= 1 + 1e-9 and ratio[1] <= 1 + 1e-9):
            bad.append(seed)
    ok = not bad
    record("C7 companion", ok, "margin-free certificate: rho(Q)<1, Q^2>0, v_hat and E_c rows "
                               f"of the one-step bound hold; failing seeds {bad}; "
                               f"worst E_g row ratio {eg_worst:.2f} (not gated)")
    assert ok


# 8 -------------------------------------------------------------------------------

def test_c8_baseline_agreement():
    mom, sp = make_instance(N=5, M=50, d=8, rho=0.01)
    mix = build_mixing("complete", 5)
    g1 = _stable_step(mom, mix, certify_step_size(mom, mix).gamma_max)
    g2 = sp.beta * g1
    saga = run_central("saga", mom, sp, 1500 * mom.M, g1, g2, record_every=mom.M)
    pdbg = run_central("pdbg", mom, sp, 100_000, g1, g2, record_every=10)
    pdbg.M = 1  # one full-batch iteration is one epoch
    mom0 = mom.with_rho(0.0)
    sp0 = solve_saddle_point(mom0)
    th_gtd2, _ = gtd2_limit(mom0, default_gamma1(mom0), 1e-5)
    errs = {"pdbg": np.abs(pdbg.state.theta - sp.theta_star).max(),
            "saga": np.abs(saga.state.theta - sp.theta_star).max(),
            "gtd2": np.abs(th_gtd2 - sp0.theta_star).max()}
    e_saga, e_pdbg = saga.settled_below(1e-6), pdbg.settled_below(1e-6)
    ok = (max(errs.values()) < 1e-5 and e_saga is not None
          and (e_pdbg is None or e_saga <= e_pdbg))
    record("C8 baseline-agreement", ok,
           " ".join(f"{k} {v:.1e}" for k, v in errs.items())
           + f"; epochs to 1e-6: saga {e_saga} pdbg {e_pdbg}")
    assert ok


# 9 -------------------------------------------------------------------------------

def _epochs_ring_er(M):
    mom, sp = make_instance(N=50, M=M, d=4, rho=0.1)
    out = {}
    for topo in ("ring", "erdos_renyi"):
        p = default_er_probability(50) if topo == "erdos_renyi" else None
        mix = build_mixing(topo, 50, seed=4, p=p)
        st = init_state(mom, mix, 0.1, 0.01)
        tr = run(st, mom, mix, Schedule("cyclic", M), 2000 * M, sp,
                 record_every=max(1, M // 10), stop_below=1e-6)
        out[topo] = tr.settled_below(1e-6)
    return out


def test_c9_topology_effect():
    small_m, large_m = _epochs_ring_er(10), _epochs_ring_er(100)
    r_small = small_m["ring"] / small_m["erdos_renyi"]
    r_large = large_m["ring"] / large_m["erdos_renyi"]
    ok = (small_m["ring"] >= small_m["erdos_renyi"] and abs(r_large - 1) < abs(r_small - 1))
    record("C9 topology-effect", ok,
           f"M=10 ring/ER {small_m['ring']}/{small_m['erdos_renyi']} (ratio {r_small:.2f}); "
           f"M=100 {large_m['ring']}/{large_m['erdos_renyi']} (ratio {r_large:.2f})")
    assert ok


# 10 ------------------------------------------------------------------------------

def test_c10_gradients_vs_finite_differences():
    rng = np.random.default_rng(10)
    mom, _ = make_instance(N=3, M=30, d=5, rho=0.2)
    h = 1e-6
    worst = 0.0
    for _ in range(1000):
        p, i = int(rng.integers(mom.M)), int(rng.integers(mom.N))
        th, w = rng.normal(size=mom.d), rng.normal(size=mom.d)
        k = int(rng.integers(mom.d))
        e = np.zeros(mom.d)
        e[k] = h
        fd_t = (j_value(mom, p, i, th + e, w) - j_value(mom, p, i, th - e, w)) / (2 * h)
        fd_w = (j_value(mom, p, i, th, w + e) - j_value(mom, p, i, th, w - e)) / (2 * h)
        worst = max(worst, abs(fd_t - j_grad_theta(mom, p, th, w)[k]),
                    abs(fd_w - j_grad_w(mom, p, i, th, w)[k]))
    ok = worst < 1e-6
    record("C10 gradient-check", ok, f"max |analytic - central difference| {worst:.2e} (<1e-6)")
    assert ok
