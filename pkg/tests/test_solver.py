import numpy as np
import pytest

from conftest import identity_moments, make_instance
from pddistiag import _backend
from pddistiag.diagnostics import fit_linear_rate, lyapunov, mean_recursion_residual
from pddistiag.errors import DivergenceError, ParameterError
from pddistiag.network import build_mixing, uniform_averaging
from pddistiag.solver import Schedule, init_state, next_index, run, run_steps, step

BACKENDS = ["python"] + (["cython"] if _backend.available() else [])


def _table_average(state):
    return state.grad_table_theta.sum(axis=(0, 1)) / (state.N * state.M)


def test_init_defaults(small):
    mom, _ = small
    st = init_state(mom, build_mixing("ring", mom.N), 0.01)
    for arr in (st.s, st.dvec, st.tau, st.grad_table_theta, st.grad_table_w):
        assert not np.any(arr)
    assert not np.any(st.theta) and not np.any(st.w)
    # storage: 2M stored gradient vectors per agent
    assert st.grad_table_theta.shape == (mom.N, mom.M, mom.d) == st.grad_table_w.shape


def test_init_auto_gamma2():
    mom = identity_moments(d=2, N=2, M=3)
    st = init_state(mom, uniform_averaging(2), 0.01)
    assert st.gamma2 == pytest.approx(0.08, abs=1e-15)


def test_init_copies_supplied_rows(small):
    mom, _ = small
    rng = np.random.default_rng(0)
    th, w = rng.normal(size=(mom.N, mom.d)), rng.normal(size=(mom.N, mom.d))
    st = init_state(mom, build_mixing("ring", mom.N), 0.01, 0.1, init_theta=th, init_w=w)
    assert np.array_equal(st.theta, th) and np.array_equal(st.w, w)
    th[0, 0] += 1.0
    assert st.theta[0, 0] != th[0, 0]


def test_init_validates(small):
    mom, _ = small
    mix = build_mixing("ring", mom.N)
    with pytest.raises(ParameterError):
        init_state(mom, mix, -1.0)
    with pytest.raises(ParameterError):
        init_state(mom, mix, 0.01, init_theta=np.zeros((mom.N, mom.d + 1)))
    with pytest.raises(ParameterError):
        init_state(mom, build_mixing("ring", mom.N + 1), 0.01)


@pytest.mark.parametrize("backend", BACKENDS)
def test_first_step_from_zero(small, backend):
    mom, _ = small
    st = init_state(mom, build_mixing("ring", mom.N), 0.02, 0.3)
    step(st, mom, build_mixing("ring", mom.N), Schedule("cyclic", mom.M), backend=backend)
    p1 = next_index(Schedule("cyclic", mom.M), 1)
    assert not np.any(st.s) and not np.any(st.theta)
    assert np.allclose(st.w, -(0.3 / mom.M) * mom.b[p1], atol=1e-15)


def test_cyclic_schedule():
    sch = Schedule("cyclic", 3)
    assert [next_index(sch, t) + 1 for t in range(1, 7)] == [1, 2, 3, 1, 2, 3]


def test_shuffle_blocks_are_permutations():
    sch = Schedule("shuffle", 7, seed=3)
    picks = sch.picks(1, 70)
    for blk in range(10):
        assert sorted(picks[7 * blk:7 * blk + 7]) == list(range(7))
    assert np.array_equal(picks, Schedule("shuffle", 7, seed=3).picks(1, 70))


def test_shuffle_window_bound():
    for seed in range(20):
        M = 6
        picks = Schedule("shuffle", M, seed=seed).picks(1, 40 * M)
        last = np.zeros(M, dtype=int)
        for t, p in enumerate(picks, start=1):
            last[p] = t
            if t >= M:
                assert (t - last).max() <= 2 * M - 1


def test_schedule_validates():
    with pytest.raises(ParameterError):
        Schedule("random", 3)
    with pytest.raises(ParameterError):
        next_index(Schedule("cyclic", 3), 0)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("kind", ["cyclic", "shuffle"])
def test_double_average_identities(backend, kind):
    mom, _ = make_instance(N=3, M=20, d=5, rho=0.1)
    mix = build_mixing("ring", 3)
    sch = Schedule(kind, mom.M, seed=1)
    st = init_state(mom, mix, 0.01)
    visits = {}
    for _ in range(5 * mom.M):
        t = st.t
        step(st, mom, mix, sch, backend=backend)
        visits[next_index(sch, t)] = t
        assert np.abs(st.s.mean(axis=0) - _table_average(st)).max() < 1e-12
        assert np.abs(st.dvec - st.grad_table_w.mean(axis=1)).max() < 1e-12
    for p in range(mom.M):
        assert st.tau[p] == visits.get(p, 0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_tables_hold_gradients_at_last_visit(backend):
    mom, _ = make_instance(N=2, M=6, d=3, rho=0.2)
    mix = build_mixing("complete", 2)
    sch = Schedule("cyclic", mom.M)
    st = init_state(mom, mix, 0.05)
    for _ in range(9):
        p = next_index(sch, st.t)
        th, w = st.theta.copy(), st.w.copy()
        step(st, mom, mix, sch, backend=backend)
        for i in range(2):
            assert np.allclose(st.grad_table_theta[i, p], mom.rho * th[i] + mom.A[p].T @ w[i],
                               atol=1e-14)
            assert np.allclose(st.grad_table_w[i, p],
                               mom.A[p] @ th[i] - mom.C[p] @ w[i] - mom.b[p, i], atol=1e-14)


def test_mean_iterate_recursion():
    mom, _ = make_instance(N=4, M=12, d=4, rho=0.1)
    mix = build_mixing("ring", 4)
    sch = Schedule("cyclic", mom.M)
    st = init_state(mom, mix, 0.02)
    for _ in range(60):
        before = st.copy()
        step(st, mom, mix, sch)
        assert mean_recursion_residual(before, st) < 1e-12


def _reference_sag(mom, g1, g2, T):
    """Single-agent primal-dual SAG, written independently of the package."""
    M, d = mom.M, mom.d
    theta, w = np.zeros(d), np.zeros(d)
    s, dv = np.zeros(d), np.zeros(d)
    tab_t, tab_w = np.zeros((M, d)), np.zeros((M, d))
    out = []
    for t in range(1, T + 1):
        p = (t - 1) % M
        gt = mom.rho * theta + mom.A[p].T @ w
        gw = mom.A[p] @ theta - mom.C[p] @ w - mom.b[p, 0]
        s = s + (gt - tab_t[p]) / M
        dv = dv + (gw - tab_w[p]) / M
        tab_t[p], tab_w[p] = gt, gw
        theta, w = theta - g1 * s, w + g2 * dv
        out.append((theta.copy(), w.copy()))
    return out


@pytest.mark.parametrize("backend", BACKENDS)
def test_single_agent_reduces_to_sag(backend):
    mom, _ = make_instance(N=1, M=15, d=4, rho=0.1)
    mix = build_mixing("complete", 1)
    sch = Schedule("cyclic", mom.M)
    st = init_state(mom, mix, 0.02, 0.2)
    ref = _reference_sag(mom, 0.02, 0.2, 10 * mom.M)
    for th, w in ref:
        step(st, mom, mix, sch, backend=backend)
        assert np.abs(st.theta[0] - th).max() <= 1e-12 * (1 + np.abs(th).max())
        assert np.abs(st.w[0] - w).max() <= 1e-12 * (1 + np.abs(w).max())


def test_zero_primal_step_keeps_theta_zero(small):
    mom, sp = small
    mix = build_mixing("ring", mom.N)
    st = init_state(mom, mix, 0.0, 0.1)
    run(st, mom, mix, Schedule("cyclic", mom.M), 5 * mom.M, sp)
    assert not np.any(st.theta)


def test_tiny_instance_converges(small):
    mom, sp = small
    mix = build_mixing("complete", mom.N)
    st = init_state(mom, mix, 0.03, 0.1)
    tr = run(st, mom, mix, Schedule("cyclic", mom.M), 200 * mom.M, sp, record_every=mom.M)
    assert tr.gap[-1] < 1e-8
    slope, r2 = fit_linear_rate(tr, burn_in=5 * mom.M)
    assert slope < 0


def test_oversized_step_diverges(small):
    mom, sp = small
    mix = build_mixing("ring", mom.N)
    st = init_state(mom, mix, 1e3, 1.0)
    with pytest.raises(DivergenceError) as exc:
        run(st, mom, mix, Schedule("cyclic", mom.M), 1000, sp)
    assert exc.value.iteration >= 1


def test_run_is_deterministic(small):
    mom, sp = small
    mix = build_mixing("erdos_renyi", mom.N, seed=1, p=0.9)
    traces = []
    for _ in range(2):
        st = init_state(mom, mix, 0.01)
        traces.append(run(st, mom, mix, Schedule("shuffle", mom.M, seed=4), 300, sp))
    assert np.array_equal(traces[0].gap, traces[1].gap)
    assert np.array_equal(traces[0].consensus, traces[1].consensus)


def test_run_trace_rows_and_stride(small):
    mom, sp = small
    mix = build_mixing("ring", mom.N)
    st = init_state(mom, mix, 0.01)
    tr = run(st, mom, mix, Schedule("cyclic", mom.M), 95, sp, record_every=10)
    assert list(tr.iters) == list(range(10, 91, 10)) + [95]
    assert np.all(np.diff(tr.iters) > 0)
    assert np.allclose(tr.epochs, tr.iters / mom.M)


def test_trace_matches_lyapunov(small):
    mom, sp = small
    mix = build_mixing("ring", mom.N)
    st = init_state(mom, mix, 0.01)
    tr = run(st, mom, mix, Schedule("cyclic", mom.M), 37, sp)
    rep = lyapunov(st, sp, mom)
    assert tr.consensus[-1] == pytest.approx(rep.e_c, rel=1e-10, abs=1e-15)
    assert tr.tracking[-1] == pytest.approx(rep.e_g, rel=1e-10, abs=1e-15)
    assert tr.v_norm[-1] == pytest.approx(rep.v_norm, rel=1e-10)
    from pddistiag.moments import mspbe
    gap = np.mean([mspbe(mom, th) for th in st.theta]) - mspbe(mom, sp.theta_star)
    assert tr.gap[-1] == pytest.approx(gap, rel=1e-6, abs=1e-13)


def test_run_steps_matches_step(small):
    mom, _ = small
    mix = build_mixing("ring", mom.N)
    sch = Schedule("cyclic", mom.M)
    a, b = init_state(mom, mix, 0.01), init_state(mom, mix, 0.01)
    run_steps(a, mom, mix, sch, 40)
    for _ in range(40):
        step(b, mom, mix, sch)
    assert np.allclose(a.theta, b.theta, atol=1e-14) and a.t == b.t == 41


@pytest.mark.skipif(not _backend.available(), reason="compiled kernel not built")
def test_backends_agree():
    mom, sp = make_instance(N=4, M=30, d=6, rho=0.05)
    mix = build_mixing("ring", 4)
    out = {}
    for be in ("python", "cython"):
        st = init_state(mom, mix, 0.01)
        tr = run(st, mom, mix, Schedule("shuffle", mom.M, seed=2), 20 * mom.M, sp, backend=be)
        out[be] = (st, tr)
    (a, ta), (b, tb) = out["python"], out["cython"]
    assert np.abs(a.theta - b.theta).max() < 1e-12 * (1 + np.abs(a.theta).max())
    assert np.abs(a.w - b.w).max() < 1e-12 * (1 + np.abs(a.w).max())
    assert np.allclose(ta.gap, tb.gap, rtol=1e-9, atol=1e-15)


def test_backend_selection():
    assert _backend.get_kernel("python").__name__.endswith("_kernels_py")
    with pytest.raises(ParameterError):
        _backend.get_kernel("fortran")
