"""Convergence-theory quantities: the G system, Lyapunov functions and Q(gamma).

``G`` acts on ``(theta, w_1/sqrt(beta N), ..., w_N/sqrt(beta N))``. Its
action splits into the span of the agent-average dual direction, where it
reduces to the ``2d x 2d`` matrix ``[[rho I, sqrt(beta) A^T], [-sqrt(beta) A,
beta C]]``, and the orthogonal complement, where it is ``beta C``. Spectral
quantities of ``G`` and of every ``G_p`` are computed on these reduced blocks.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CertificateError, ParameterError
from .moments import beta_of, stationarity_system

log = logging.getLogger(__name__)

CERT_MARGIN = 1e-6
CERT_RESOLUTION = 1e-8


def reduced_block(A, C, rho, beta):
    d = A.shape[0]
    sb = np.sqrt(beta)
    return np.block([[rho * np.eye(d), sb * A.T], [-sb * A, beta * C]])


def g_spectrum(A, C, rho, beta, N):
    """Eigenvalues of the full ``(N+1) d`` block matrix, from its reduced blocks."""
    ev = np.linalg.eigvals(reduced_block(A, C, rho, beta))
    if N > 1:
        ev = np.concatenate([ev, np.repeat(beta * np.linalg.eigvalsh(C), N - 1)])
    return ev


def g_norm(A, C, rho, beta, N):
    """Spectral norm of the full block matrix, from its reduced blocks."""
    nrm = np.linalg.norm(reduced_block(A, C, rho, beta), 2)
    if N > 1:
        nrm = max(nrm, beta * np.linalg.norm(C, 2))
    return float(nrm)


@dataclass
class GSystem:
    """Assembled optimality system ``G v* = rhs`` with its spectral summary."""

    G: np.ndarray
    rhs: np.ndarray
    beta: float
    eigvals: np.ndarray
    eig_min: float
    eig_max: float
    U_cond: float
    U_norm_bound: float
    U_inv_norm_bound: float
    eig_min_bound: float
    eig_max_bound: float

    def residual(self, v):
        return float(np.linalg.norm(self.G @ v - self.rhs))


def build_g_system(mom, beta=None):
    """Assemble ``G`` and check the eigenvalue bounds that hold for the default ``beta``."""
    beta = beta_of(mom) if beta is None else float(beta)
    G, rhs = stationarity_system(mom, beta)
    ev = g_spectrum(mom.A_hat, mom.C_hat, mom.rho, beta, mom.N)
    # eigenvectors of the reduced block; the complement block is symmetric (cond 1)
    _, U = np.linalg.eig(reduced_block(mom.A_hat, mom.C_hat, mom.rho, beta))
    U_cond = float(np.linalg.cond(U))
    c_ev = np.linalg.eigvalsh(mom.C_hat)
    k_ev = np.linalg.eigvalsh(mom.normal_matrix)
    kappa_c = c_ev[-1] / c_ev[0]
    top = mom.rho + k_ev[-1]
    eig_min_bound = 8.0 / 9.0 * k_ev[0]
    eig_max_bound = kappa_c * top
    sysm = GSystem(G, rhs, beta, ev, float(np.min(ev.real)), float(np.max(np.abs(ev))),
                   U_cond, 8.0 * top * kappa_c, 1.0 / top, eig_min_bound, eig_max_bound)
    if np.isclose(beta, beta_of(mom), rtol=1e-12) and sysm.eig_min < eig_min_bound * (1 - 1e-9):
        warnings.warn(f"lambda_min(G)={sysm.eig_min:.3e} below its bound {eig_min_bound:.3e}",
                      RuntimeWarning, stacklevel=2)
    return sysm


def per_sample_g(mom, beta, p):
    return stationarity_system(mom, beta, per_sample=p)[0]


@dataclass
class LyapunovReport:
    """Consensus error, tracking error and weighted distance to the saddle point."""

    e_c: float
    e_g: float
    v_norm: float
    theta_bar: np.ndarray = field(repr=False)
    g_theta: np.ndarray = field(repr=False)


def lyapunov(state, oracle, mom, beta=None):
    """Lyapunov quantities of a solver state.

    The averaged gradient is recomputed from the stored gradient tables, not
    from the surrogates, so ``e_g`` measures the true tracking error.
    """
    beta = oracle.beta if beta is None else beta
    N = state.N
    if state.theta.shape[1] != mom.d or oracle.w_star.shape != state.w.shape:
        raise ParameterError("state and oracle dimensions differ")
    theta_bar = state.theta.mean(axis=0)
    g = state.grad_table_theta.reshape(-1, state.d).sum(axis=0) / (N * state.M)
    e_c = np.sqrt(((state.theta - theta_bar) ** 2).sum()) / N
    e_g = np.sqrt(((state.s - g) ** 2).sum()) / N
    dt = theta_bar - oracle.theta_star
    v = dt @ dt + ((state.w - oracle.w_star) ** 2).sum() / (beta * N)
    return LyapunovReport(float(e_c), float(e_g), float(v), theta_bar, g)


def scaled_error(state, oracle, beta=None):
    """Stacked vector ``(theta_bar - theta*, (w_i - w_i*) / sqrt(beta N))``."""
    beta = oracle.beta if beta is None else beta
    N = state.N
    return np.concatenate([state.theta.mean(axis=0) - oracle.theta_star,
                           ((state.w - oracle.w_star) / np.sqrt(beta * N)).ravel()])


def v_hat_norm(state, oracle, mom, beta=None):
    """Norm of the scaled error in the eigenbasis of ``G``.

    ``G`` splits into the reduced ``2d`` block acting on ``(v_theta, sqrt(N) mean v_w)``
    and ``beta C_hat`` on the dual deviations, whose eigenvectors are orthonormal.
    """
    beta = oracle.beta if beta is None else beta
    N, d = state.N, state.d
    v = scaled_error(state, oracle, beta)
    vw = v[d:].reshape(N, d)
    m = vw.mean(axis=0)
    _, U = np.linalg.eig(reduced_block(mom.A_hat, mom.C_hat, mom.rho, beta))
    head = np.linalg.solve(U, np.concatenate([v[:d], np.sqrt(N) * m]))
    return float(np.sqrt(np.sum(np.abs(head) ** 2) + ((vw - m) ** 2).sum()))


def batch_gradient_vector(state, mom, beta):
    """Centralized batch gradient ``h(t)`` at the mean primal iterate."""
    N = state.N
    theta_bar = state.theta.mean(axis=0)
    h_theta = mom.rho * theta_bar + mom.A_hat.T @ state.w.mean(axis=0)
    h_w = theta_bar @ mom.A_hat.T - state.w @ mom.C_hat - mom.b_hat
    return np.concatenate([h_theta, (-np.sqrt(beta / N) * h_w).ravel()])


def g_identity_residual(state, mom, oracle, gsys=None):
    """``||h(t) - G v(t)||``; zero up to rounding for any state."""
    beta = oracle.beta
    gsys = build_g_system(mom, beta) if gsys is None else gsys
    v = scaled_error(state, oracle, beta)
    return float(np.linalg.norm(batch_gradient_vector(state, mom, beta) - gsys.G @ v))


def mean_recursion_residual(before, after):
    """Check ``theta_bar(t+1) = theta_bar(t) - gamma1 g_theta(t)`` and the dual analog.

    ``after`` is ``before`` advanced by one iteration; the aggregated
    gradients are read from ``after``'s tables. Returns the largest deviation.
    """
    g_theta = after.table_average()
    g_w = after.grad_table_w.mean(axis=1)
    r1 = after.theta.mean(axis=0) - (before.theta.mean(axis=0) - after.gamma1 * g_theta)
    r2 = after.w - (before.w + after.gamma2 * g_w)
    return float(max(np.abs(r1).max(), np.abs(r2).max()))


@dataclass
class QCert:
    """Step-size certificate: the nonnegative 3x3 delayed-system matrix at ``gamma1``."""

    gamma1: float
    lam: float
    beta: float
    theta_gamma: float
    a: np.ndarray
    G_norm: float
    G_bar: float
    A_bar: float
    C_bar: float
    U_norm: float
    U_inv_norm: float
    q: np.ndarray
    spectral_radius: float
    u_norms: str = "bound"
    notes: tuple = ()

    def to_dict(self):
        return {
            "gamma1": self.gamma1, "lambda": self.lam, "beta": self.beta,
            "theta_gamma": self.theta_gamma, "a": [float(x) for x in self.a],
            "G_norm": self.G_norm, "G_bar": self.G_bar, "A_bar": self.A_bar,
            "C_bar": self.C_bar, "U_norm": self.U_norm, "U_inv_norm": self.U_inv_norm,
            "q": self.q.tolist(), "spectral_radius": self.spectral_radius,
            "u_norms": self.u_norms, "notes": list(self.notes),
        }


@dataclass
class _QConstants:
    """Step-independent ingredients of ``Q``; cached for bisection."""

    eig: np.ndarray
    G_norm: float
    G_bar: float
    A_bar: float
    C_bar: float
    U_norm: float
    U_inv_norm: float
    beta: float
    lam: float
    rho: float
    M: int
    N: int


def q_constants(mom, mixing, beta=None, M=None, N=None, u_norms="bound"):
    beta = beta_of(mom) if beta is None else float(beta)
    M = mom.M if M is None else int(M)
    N = mom.N if N is None else int(N)
    lam = float(getattr(mixing, "lam", mixing))
    eig = g_spectrum(mom.A_hat, mom.C_hat, mom.rho, beta, N)
    G_norm = g_norm(mom.A_hat, mom.C_hat, mom.rho, beta, N)
    G_bar = max(g_norm(mom.A[p], mom.C[p], mom.rho, beta, N) for p in range(mom.M))
    A_bar = float(np.max(np.linalg.norm(mom.A, ord=2, axis=(1, 2))))
    C_bar = float(np.max(np.linalg.norm(mom.C, ord=2, axis=(1, 2))))
    if u_norms == "bound":
        c_ev = np.linalg.eigvalsh(mom.C_hat)
        top = mom.rho + np.linalg.eigvalsh(mom.normal_matrix)[-1]
        U_norm = 8.0 * top * c_ev[-1] / c_ev[0]
        U_inv_norm = 1.0 / top
    elif u_norms == "exact":
        _, U = np.linalg.eig(reduced_block(mom.A_hat, mom.C_hat, mom.rho, beta))
        U_norm = np.linalg.norm(U, 2)
        U_inv_norm = np.linalg.norm(np.linalg.inv(U), 2)
    else:
        raise ParameterError(f"u_norms must be 'bound' or 'exact', got {u_norms!r}")
    return _QConstants(eig, G_norm, G_bar, A_bar, C_bar, float(U_norm), float(U_inv_norm),
                       beta, lam, mom.rho, M, N)


def _assemble_q(k, gamma):
    theta = float(np.max(np.abs(1.0 - gamma * k.eig)))
    if theta >= 1.0:
        raise CertificateError(
            f"||I - gamma G|| = {theta:.6g} >= 1 at gamma={gamma:g}; "
            "the certificate needs a smaller step")
    M, N, beta, lam, rho = k.M, k.N, k.beta, k.lam, k.rho
    a = np.array([
        (1.0 - theta) / gamma if gamma > 0 else float(np.min(k.eig.real)),
        k.U_norm * k.U_inv_norm * k.G_bar * M * (k.G_norm + 2.0 * k.G_bar * M),
        np.sqrt(N) * k.U_norm * (1.0 + gamma * k.G_bar * M) * (rho + k.A_bar * np.sqrt(beta * N)),
        2.0 * k.A_bar * np.sqrt(N + 1) * (M + 1) / (beta * M) * k.U_norm
        * max(k.A_bar, np.sqrt(beta) * k.C_bar),
        2.0 * (1.0 + lam) / M,
        np.sqrt(N) * 2.0 * k.A_bar ** 2 * (M + 1) / (beta * M),
        rho / M,
    ])
    q = np.array([
        [theta + gamma ** 2 * a[1], gamma * a[2], 0.0],
        [0.0, lam, gamma],
        [gamma * a[3], a[4] + gamma * a[5], lam + gamma * a[6]],
    ])
    return theta, a, q


def q_matrix(mom, mixing, gamma1, beta=None, M=None, N=None, u_norms="bound", constants=None):
    """Assemble ``Q(gamma1)`` and its spectral radius.

    Parameters
    ----------
    mixing : MixingMatrix or float
        Communication matrix, or directly its connectivity ``lambda``.
    u_norms : {"bound", "exact"}
        Use the closed-form bounds on the eigenvector-matrix norms, or the
        norms of the computed eigenvector matrix (unit-norm columns).

    Raises
    ------
    CertificateError
        If ``||I - gamma1 Lambda|| >= 1``.
    """
    if gamma1 < 0:
        raise ParameterError("gamma1 must be nonnegative")
    k = constants or q_constants(mom, mixing, beta, M, N, u_norms)
    theta, a, q = _assemble_q(k, gamma1) if gamma1 > 0 else _q_at_zero(k)
    sr = float(np.max(np.abs(np.linalg.eigvals(q))))
    notes = ("row 1 column 2 carries ||U|| where the one-step bound derivation has "
             "||U^-1||; implemented as assembled in the final system",)
    return QCert(float(gamma1), k.lam, k.beta, theta, a, k.G_norm, k.G_bar, k.A_bar,
                 k.C_bar, k.U_norm, k.U_inv_norm, q, sr, u_norms, notes)


def _q_at_zero(k):
    a = np.array([float(np.min(k.eig.real)), 0, 0, 0, 2.0 * (1.0 + k.lam) / k.M, 0, 0])
    q = np.array([[1.0, 0, 0], [0, k.lam, 0], [0, a[4], k.lam]])
    return 1.0, a, q


def _radius(k, gamma):
    try:
        _, _, q = _assemble_q(k, gamma)
    except CertificateError:
        return np.inf
    return float(np.max(np.abs(np.linalg.eigvals(q))))


@dataclass
class Certificate:
    """Result of the step-size search; ``gamma1`` is ``None`` when absent."""

    gamma1: float | None
    sigma: float | None
    gamma_max: float
    best_radius: float
    best_gamma: float | None = None

    @property
    def found(self):
        return self.gamma1 is not None

    def __iter__(self):
        return iter((self.gamma1, self.sigma))


def certify_step_size(mom, mixing, M=None, N=None, beta=None, u_norms="bound",
                      margin=CERT_MARGIN, resolution=CERT_RESOLUTION):
    """Largest ``gamma1 <= 1/|lambda|_max(G)`` with ``rho(Q(gamma1)) < 1 - margin``.

    A geometric scan locates the certified region, then bisection refines
    its upper end to relative ``resolution``. Absence of a certificate is
    returned as a value: the condition is sufficient, not necessary.
    """
    k = q_constants(mom, mixing, beta, M, N, u_norms)
    gamma_max = 1.0 / float(np.max(np.abs(k.eig)))
    target = 1.0 - margin
    hi = gamma_max
    best = (np.inf, None)
    lo = None
    g = gamma_max
    for _ in range(200):
        r = _radius(k, g)
        if r < best[0]:
            best = (r, g)
        if r < target:
            lo = g
            break
        hi = g
        g *= 0.5
    if lo is None:
        return Certificate(None, None, gamma_max, best[0], best[1])
    if lo < gamma_max:
        while (hi - lo) > resolution * lo:
            mid = 0.5 * (lo + hi)
            if _radius(k, mid) < target:
                lo = mid
            else:
                hi = mid
    sigma = _radius(k, lo)
    return Certificate(lo, sigma, gamma_max, sigma, lo)


def error_triples(state, mom, mixing, schedule, oracle, n_iters, beta=None):
    """Run ``n_iters`` steps and record ``(||v_hat(t)||, E_c(t), E_g(t))`` per step.

    ``v_hat`` and ``E_c`` use the iterate entering step ``t``; ``E_g`` uses the
    surrogate formed during it, the pairing under which the primal update reads
    ``theta(t+1) = W theta(t) - gamma1 s(t)``. Advances ``state`` in place.
    """
    from .solver import step
    rows = np.empty((n_iters, 3))
    for k in range(n_iters):
        rows[k, 0] = v_hat_norm(state, oracle, mom, beta)
        rows[k, 1] = lyapunov(state, oracle, mom, beta).e_c
        step(state, mom, mixing, schedule)
        rows[k, 2] = lyapunov(state, oracle, mom, beta).e_g
    return rows


def inequality_system_violations(errors, q, M, tol=1e-12):
    """Check ``e(t+1) <= Q max_{(t-2M)+ <= r <= t} e(r)`` along a recorded run.

    ``errors`` has one row ``(||v_hat||, E_c, E_g)`` per iteration. Returns the
    iterations where some entry exceeds its bound by more than ``tol`` relative.
    """
    e = np.asarray(errors, dtype=float)
    bad = []
    for t in range(e.shape[0] - 1):
        window = e[max(0, t - 2 * M):t + 1].max(axis=0)
        bound = q @ window
        if np.any(e[t + 1] > bound * (1 + tol) + tol):
            bad.append(t)
    return bad


def fit_linear_rate(trace, burn_in=0, column="gap", floor=1e-14):
    """Least-squares slope of ``log(column)`` against iteration after ``burn_in``.

    Accepts a :class:`~pddistiag.trace.RunTrace` or a 1-d array (iteration =
    index). Returns ``(slope, r2)``; a negative slope means linear convergence.
    """
    if hasattr(trace, "iters"):
        x = np.asarray(trace.iters, dtype=float)
        y = np.asarray(getattr(trace, column), dtype=float)
    else:
        y = np.asarray(trace, dtype=float)
        x = np.arange(y.size, dtype=float)
    keep = (x >= x[0] + burn_in) if x.size else x.astype(bool)
    keep &= y > floor
    x, y = x[keep], np.log(y[keep])
    if x.size < 10:
        raise ParameterError(f"need >= 10 post-burn-in points above {floor}, got {x.size}")
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean()) / (xc @ xc))
    resid = y - y.mean() - slope * xc
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
    return slope, r2
