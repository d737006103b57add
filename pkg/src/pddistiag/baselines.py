"""Centralized reference methods: full-batch PDBG, GTD2 and primal-dual SAGA.

All three work on the team-average objective (dual ``w`` paired with
``b_hat_global``), so they see the rewards a single agent could not.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import DivergenceError, ParameterError
from .trace import RunTrace


@dataclass
class CentralState:
    """Primal/dual iterate plus SAGA's gradient tables and their running sums."""

    theta: np.ndarray
    w: np.ndarray
    t: int = 1
    table_theta: np.ndarray | None = None
    table_w: np.ndarray | None = None
    sum_theta: np.ndarray | None = None
    sum_w: np.ndarray | None = None

    def copy(self):
        return replace(self, **{k: None if getattr(self, k) is None else getattr(self, k).copy()
                                for k in ("theta", "w", "table_theta", "table_w",
                                          "sum_theta", "sum_w")})


def init_central(mom, theta=None, w=None, saga=False):
    """Zero-initialized centralized state; ``saga`` allocates the gradient tables.

    SAGA tables start at the gradients of the initial point, the usual
    convention that keeps the estimator unbiased from the first step.
    """
    d = mom.d
    theta = np.zeros(d) if theta is None else np.array(theta, dtype=float)
    w = np.zeros(d) if w is None else np.array(w, dtype=float)
    st = CentralState(theta, w)
    if saga:
        st.table_theta = mom.rho * theta + np.einsum("pji,j->pi", mom.A, w)
        st.table_w = _sample_grad_w(mom, theta, w)
        st.sum_theta = st.table_theta.sum(axis=0)
        st.sum_w = st.table_w.sum(axis=0)
    return st


def _sample_grad_w(mom, theta, w, p=None):
    b = mom.b.mean(axis=1)
    if p is None:
        return np.einsum("pij,j->pi", mom.A, theta) - np.einsum("pij,j->pi", mom.C, w) - b
    return mom.A[p] @ theta - mom.C[p] @ w - b[p]


def pdbg_step(state, mom, gamma1, gamma2):
    """Full-batch primal-dual gradient step (descent in theta, ascent in w)."""
    g_theta = mom.rho * state.theta + mom.A_hat.T @ state.w
    g_w = mom.A_hat @ state.theta - mom.C_hat @ state.w - mom.b_hat_global
    state.theta = state.theta - gamma1 * g_theta
    state.w = state.w + gamma2 * g_w
    state.t += 1
    return state


def gtd2_step(state, mom, p, alpha, beta_step):
    """GTD2 on sample ``p``, written with the per-sample moments.

    ``A_p^T w = (phi - gamma phi')(phi^T w)`` and
    ``b_p - A_p theta - C_p w = (delta - phi^T w) phi``; no regularization.
    """
    b_p = mom.b[p].mean(axis=0)
    A_p = mom.A[p]
    theta_new = state.theta + alpha * (A_p.T @ state.w)
    state.w = state.w + beta_step * (b_p - A_p @ state.theta - mom.C[p] @ state.w)
    state.theta = theta_new
    state.t += 1
    return state


def gtd2_expected_step(state, mom, alpha, beta_step):
    """GTD2 update averaged over all samples (its mean dynamics)."""
    theta_new = state.theta + alpha * (mom.A_hat.T @ state.w)
    state.w = state.w + beta_step * (mom.b_hat_global - mom.A_hat @ state.theta
                                     - mom.C_hat @ state.w)
    state.theta = theta_new
    state.t += 1
    return state


def gtd2_epoch_map(mom, alpha, beta_step, order=None):
    """Affine map ``x -> T x + c`` of one GTD2 pass over ``order`` on ``x = (theta, w)``.

    GTD2 is linear in its iterate, so a full pass composes per-sample affine maps.
    """
    d = mom.d
    order = range(mom.M) if order is None else order
    T = np.eye(2 * d)
    c = np.zeros(2 * d)
    b = mom.b.mean(axis=1)
    for p in order:
        S = np.eye(2 * d)
        S[:d, d:] = alpha * mom.A[p].T
        S[d:, :d] = -beta_step * mom.A[p]
        S[d:, d:] -= beta_step * mom.C[p]
        T = S @ T
        c = S @ c
        c[d:] += beta_step * b[p]
    return T, c


def gtd2_limit(mom, alpha, beta_step, order=None):
    """Limit of cyclic constant-step GTD2, read at pass boundaries.

    The fixed point of :func:`gtd2_epoch_map`; it differs from the saddle
    point by a bias proportional to ``beta_step``.
    """
    T, c = gtd2_epoch_map(mom, alpha, beta_step, order)
    if np.max(np.abs(np.linalg.eigvals(T))) >= 1.0:
        raise DivergenceError("GTD2 pass map is not contractive at these step sizes")
    x = np.linalg.solve(np.eye(T.shape[0]) - T, c)
    return x[:mom.d], x[mom.d:]


def saga_step(state, mom, p, gamma1, gamma2):
    """Primal-dual SAGA on sample ``p``: stored-gradient correction plus table mean."""
    if state.table_theta is None:
        raise ParameterError("state has no SAGA tables; use init_central(..., saga=True)")
    M = mom.M
    new_t = mom.rho * state.theta + mom.A[p].T @ state.w
    new_w = _sample_grad_w(mom, state.theta, state.w, p)
    g_t = new_t - state.table_theta[p] + state.sum_theta / M
    g_w = new_w - state.table_w[p] + state.sum_w / M
    state.sum_theta += new_t - state.table_theta[p]
    state.sum_w += new_w - state.table_w[p]
    state.table_theta[p] = new_t
    state.table_w[p] = new_w
    state.theta = state.theta - gamma1 * g_t
    state.w = state.w + gamma2 * g_w
    state.t += 1
    return state


METHODS = ("pdbg", "gtd2", "saga")


def run_central(method, mom, oracle, n_iters, gamma1, gamma2, schedule=None,
                record_every=1, timing=False, state=None, stop_below=None):
    """Run a centralized method, recording the gap against ``oracle``.

    ``gamma1``/``gamma2`` are the primal/dual steps (``alpha``/``beta`` for GTD2).
    The consensus and tracking columns are zero for centralized methods.
    Sampled methods default to a cyclic schedule.
    """
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}")
    if method != "pdbg" and schedule is None:
        from .solver import Schedule
        schedule = Schedule("cyclic", mom.M)
    state = state or init_central(mom, saga=(method == "saga"))
    H = mom.normal_matrix + mom.rho * np.eye(mom.d)
    beta = oracle.beta
    w_star = oracle.w_star.mean(axis=0)
    trace = RunTrace(method, mom.M)
    rows, recs = [], []
    t_start = time.perf_counter()
    record_every = max(1, int(record_every))
    chunk = record_every * max(1, 2048 // record_every)
    # overflow is reported as DivergenceError below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for c0 in range(0, n_iters, chunk):
            n = min(chunk, n_iters - c0)
            picks = schedule.picks(state.t, n) if schedule is not None else None
            rows, recs = [], []
            for k in range(n):
                t = state.t
                if method == "pdbg":
                    pdbg_step(state, mom, gamma1, gamma2)
                elif method == "gtd2":
                    gtd2_step(state, mom, picks[k], gamma1, gamma2)
                else:
                    saga_step(state, mom, picks[k], gamma1, gamma2)
                if (k + 1) % record_every == 0 or c0 + k == n_iters - 1:
                    if not (np.isfinite(state.theta).all() and np.isfinite(state.w).all()):
                        raise DivergenceError(f"{method}: non-finite iterate at iteration {t}",
                                              iteration=t)
                    e = state.theta - oracle.theta_star
                    dw = state.w - w_star
                    rows.append(t)
                    recs.append((0.5 * e @ H @ e, 0.0, 0.0, e @ e + dw @ dw / beta))
            wall = (time.perf_counter() - t_start) * 1e3 if timing else 0.0
            trace.extend(rows, recs, wall)
            if stop_below is not None and recs and max(r[0] for r in recs) < stop_below:
                break
    trace.state = state
    return trace
