"""PD-DistIAG: decentralized primal-dual incremental aggregated gradient.

Each agent keeps a local primal copy ``theta_i``, its dual ``w_i``, a primal
surrogate ``s_i`` tracked over the network and over time, a dual surrogate
``d_i`` tracked over time, and a table of the last per-sample gradients.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from ._backend import get_kernel
from .errors import DivergenceError, ParameterError
from .moments import beta_of
from .trace import RunTrace

_CHUNK = 2048


@dataclass
class Schedule:
    """Common sample selection rule shared by all agents.

    ``cyclic`` visits ``0, 1, ..., M-1`` in order; ``shuffle`` draws a fresh
    permutation of the samples every ``M`` picks from a seeded generator.
    """

    kind: str
    M: int
    seed: int = 0
    _block: int = field(default=-1, init=False, repr=False, compare=False)
    _perm: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("cyclic", "shuffle"):
            raise ParameterError(f"unknown schedule {self.kind!r}")
        if self.M < 1:
            raise ParameterError("M must be >= 1")

    def _permutation(self, block):
        if block != self._block:
            self._perm = np.random.default_rng([self.seed, block]).permutation(self.M)
            self._block = block
        return self._perm

    def picks(self, t0, n):
        """Sample indices for iterations ``t0, ..., t0 + n - 1`` (0-based indices)."""
        t = np.arange(t0, t0 + n, dtype=np.int64)
        if self.kind == "cyclic":
            return (t - 1) % self.M
        out = np.empty(n, dtype=np.int64)
        blocks = (t - 1) // self.M
        for blk in np.unique(blocks):
            sel = blocks == blk
            out[sel] = self._permutation(int(blk))[(t[sel] - 1) % self.M]
        return out


def next_index(schedule, t):
    """Sample picked at iteration ``t >= 1`` (0-based sample index)."""
    if t < 1:
        raise ParameterError("iterations are numbered from 1")
    return int(schedule.picks(t, 1)[0])


@dataclass
class SolverState:
    """Full PD-DistIAG state before iteration ``t``.

    ``theta`` and ``w`` hold the iterates entering iteration ``t``; ``s``,
    ``dvec``, ``tau`` and the gradient tables hold the values produced by
    iteration ``t - 1``.
    """

    t: int
    theta: np.ndarray
    w: np.ndarray
    s: np.ndarray
    dvec: np.ndarray
    tau: np.ndarray
    grad_table_theta: np.ndarray
    grad_table_w: np.ndarray
    grad_sum_theta: np.ndarray
    gamma1: float
    gamma2: float

    @property
    def N(self):
        return self.theta.shape[0]

    @property
    def M(self):
        return self.tau.shape[0]

    @property
    def d(self):
        return self.theta.shape[1]

    @property
    def theta_bar(self):
        return self.theta.mean(axis=0)

    def table_average(self):
        """``(1/NM) sum_{i,p}`` of the stored primal gradients, recomputed."""
        return self.grad_table_theta.sum(axis=(0, 1)) / (self.N * self.M)

    def copy(self):
        return replace(self, **{k: np.array(getattr(self, k), copy=True) for k in (
            "theta", "w", "s", "dvec", "tau", "grad_table_theta", "grad_table_w",
            "grad_sum_theta")})


def init_state(moments, mixing, gamma1, gamma2="auto", init_theta=None, init_w=None):
    """Algorithm input: zero surrogates, zero counters, zero gradient tables.

    ``gamma2="auto"`` sets ``gamma2 = beta * gamma1`` with ``beta`` from
    :func:`~pddistiag.moments.beta_of`.
    """
    N, M, d = moments.N, moments.M, moments.d
    n = mixing.n if hasattr(mixing, "n") else np.asarray(mixing).shape[0]
    if n != N:
        raise ParameterError(f"mixing matrix has {n} nodes but moments have {N} agents")
    if gamma1 < 0:
        raise ParameterError("gamma1 must be nonnegative")
    if isinstance(gamma2, str):
        if gamma2 != "auto":
            raise ParameterError(f"gamma2 must be a number or 'auto', got {gamma2!r}")
        gamma2 = beta_of(moments) * gamma1

    def _init(x, name):
        if x is None:
            return np.zeros((N, d))
        x = np.array(x, dtype=float)
        if x.shape == (d,):
            x = np.tile(x, (N, 1))
        if x.shape != (N, d):
            raise ParameterError(f"{name} must have shape ({N}, {d})")
        return x

    return SolverState(
        t=1,
        theta=_init(init_theta, "init_theta"),
        w=_init(init_w, "init_w"),
        s=np.zeros((N, d)),
        dvec=np.zeros((N, d)),
        tau=np.zeros(M, dtype=np.int64),
        grad_table_theta=np.zeros((N, M, d)),
        grad_table_w=np.zeros((N, M, d)),
        grad_sum_theta=np.zeros(d),
        gamma1=float(gamma1),
        gamma2=float(gamma2),
    )


def _w_matrix(mixing):
    return np.ascontiguousarray(getattr(mixing, "w", mixing), dtype=float)


def _advance(state, moments, W, picks, kernel, metrics=None, oracle_args=None,
             record_every=1):
    extra = {}
    if metrics is not None:
        H, theta_star, w_star, beta = oracle_args
        extra = dict(metrics=metrics, H=H, theta_star=theta_star, w_star=w_star,
                     beta=beta, record_every=record_every)
    bad = kernel.run_steps(
        state.theta, state.w, state.s, state.dvec, state.grad_table_theta,
        state.grad_table_w, state.grad_sum_theta, state.tau, W,
        moments.A, moments.C, moments.b, picks, state.t,
        state.gamma1, state.gamma2, moments.rho, **extra)
    if bad >= 0:
        raise DivergenceError(
            f"non-finite iterate at iteration {bad} (gamma1={state.gamma1:g}, "
            f"gamma2={state.gamma2:g}); reduce the step sizes", iteration=int(bad))
    state.t += len(picks)
    return state


def step(state, moments, mixing, schedule, backend=None):
    """One synchronous PD-DistIAG round; ``state`` is updated in place and returned."""
    picks = schedule.picks(state.t, 1)
    return _advance(state, moments, _w_matrix(mixing), picks, get_kernel(backend))


def run_steps(state, moments, mixing, schedule, n_iters, backend=None):
    """Advance ``n_iters`` rounds without recording diagnostics."""
    kernel = get_kernel(backend)
    W = _w_matrix(mixing)
    done = 0
    while done < n_iters:
        n = min(_CHUNK, n_iters - done)
        _advance(state, moments, W, schedule.picks(state.t, n), kernel)
        done += n
    return state


def run(state, moments, mixing, schedule, n_iters, oracle, record_every=1,
        backend=None, timing=False, stop_below=None):
    """Drive the algorithm for ``n_iters`` rounds, recording diagnostics.

    Parameters
    ----------
    oracle : SaddlePoint
        Reference solution the gap and distance columns are measured against.
    record_every : int
        Stride between recorded rows; the last iteration is always recorded.
    timing : bool
        Record elapsed wall time; off by default so traces are reproducible.
    stop_below : float, optional
        Stop early once every gap recorded in a chunk of iterations falls below this value.

    Raises
    ------
    DivergenceError
        If an iterate becomes non-finite.
    """
    if n_iters < 1:
        raise ParameterError("n_iters must be >= 1")
    kernel = get_kernel(backend)
    W = _w_matrix(mixing)
    H = moments.normal_matrix + moments.rho * np.eye(moments.d)
    oracle_args = (np.ascontiguousarray(H), np.ascontiguousarray(oracle.theta_star),
                   np.ascontiguousarray(oracle.w_star), float(oracle.beta))
    trace = RunTrace("pd-distiag", moments.M)
    record_every = max(1, int(record_every))
    chunk = record_every * max(1, _CHUNK // record_every)
    t_start = time.perf_counter()
    done = 0
    while done < n_iters:
        n = min(chunk, n_iters - done)
        metrics = np.full((n, 4), np.nan)
        t0 = state.t
        _advance(state, moments, W, schedule.picks(t0, n), kernel, metrics,
                 oracle_args, record_every)
        done += n
        rows = np.nonzero(~np.isnan(metrics[:, 0]))[0]
        wall = (time.perf_counter() - t_start) * 1e3 if timing else 0.0
        trace.extend(t0 + rows, metrics[rows], wall)
        if stop_below is not None and rows.size and metrics[rows, 0].max() < stop_below:
            break
    return trace
