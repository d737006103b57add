"""Sampled and population moment matrices, MSPBE objectives and the saddle point.

The regularizer is ``(rho / 2) * ||theta||^2`` throughout, so that the
MSPBE minimizer coincides with the primal part of the saddle point of the
per-sample objective ``J_{i,p}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .env import policy_transition, stationary_distribution
from .errors import ParameterError, RankDeficiencyError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class FeatureMap:
    """State features; row ``s`` of ``table`` is ``phi(s)``."""

    table: np.ndarray

    def __post_init__(self):
        t = np.atleast_2d(np.asarray(self.table, dtype=float))
        if t.shape[1] < 1 or not np.all(np.isfinite(t)):
            raise ParameterError("feature table must be finite with d >= 1")
        object.__setattr__(self, "table", t)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    def __call__(self, s):
        return self.table[s]


def random_features(seed, n_states, d, kind="orthogonal"):
    """Random feature table.

    ``orthogonal`` draws orthonormal columns scaled to unit mean square per
    state (well conditioned ``C_hat``); ``gaussian`` draws i.i.d. normals
    scaled by ``1/sqrt(d)``.
    """
    if d > n_states:
        raise ParameterError(f"need n_states >= d for full-rank features ({n_states} < {d})")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((n_states, d))
    if kind == "gaussian":
        return FeatureMap(raw / np.sqrt(d))
    if kind == "orthogonal":
        q, _ = np.linalg.qr(raw)
        return FeatureMap(q * np.sqrt(n_states / d))
    raise ParameterError(f"unknown feature kind {kind!r}")


def _check_rank(name, mat):
    sv = np.linalg.svd(mat, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] / sv[0] < RANK_TOL:
        raise RankDeficiencyError(
            f"{name} is rank deficient (relative singular value "
            f"{sv[-1] / sv[0] if sv[0] else 0.0:.3e} < {RANK_TOL}); "
            "assumption A2 requires a full-rank A_hat and an invertible C_hat")


@dataclass(frozen=True, eq=False)
class Moments:
    """Per-sample moments and their averages.

    Attributes
    ----------
    A : ndarray, shape (M, d, d)
        ``A[p] = phi_p (phi_p - gamma phi_{p+1})^T``.
    C : ndarray, shape (M, d, d)
        ``C[p] = phi_p phi_p^T``.
    b : ndarray, shape (M, N, d)
        ``b[p, i] = R_i(s_p, a_p) phi_p``.
    rho : float
        Primal regularization weight.
    """

    A: np.ndarray
    C: np.ndarray
    b: np.ndarray
    rho: float
    A_hat: np.ndarray = field(init=False)
    C_hat: np.ndarray = field(init=False)
    b_hat: np.ndarray = field(init=False)
    b_hat_global: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.rho < 0:
            raise ParameterError("rho must be nonnegative")
        A = np.asarray(self.A, dtype=float)
        C = np.asarray(self.C, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 3 or C.shape != A.shape or b.ndim != 3 or b.shape[0] != A.shape[0] \
                or b.shape[2] != A.shape[1] or A.shape[1] != A.shape[2]:
            raise ParameterError("moment arrays have inconsistent shapes")
        set_ = object.__setattr__
        set_(self, "A", A)
        set_(self, "C", C)
        set_(self, "b", b)
        set_(self, "rho", float(self.rho))
        set_(self, "A_hat", A.mean(axis=0))
        set_(self, "C_hat", C.mean(axis=0))
        set_(self, "b_hat", b.mean(axis=0))
        set_(self, "b_hat_global", self.b_hat.mean(axis=0))

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.b.shape[1]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    def check_rank(self):
        _check_rank("C_hat", self.C_hat)
        _check_rank("A_hat", self.A_hat)

    @cached_property
    def C_hat_factor(self):
        _check_rank("C_hat", self.C_hat)
        return sla.cho_factor(self.C_hat)

    @cached_property
    def C_hat_inv(self) -> np.ndarray:
        return sla.cho_solve(self.C_hat_factor, np.eye(self.d))

    @cached_property
    def normal_matrix(self) -> np.ndarray:
        """``A_hat^T C_hat^{-1} A_hat``, symmetrized."""
        K = self.A_hat.T @ sla.cho_solve(self.C_hat_factor, self.A_hat)
        return 0.5 * (K + K.T)

    def with_rho(self, rho):
        return Moments(self.A, self.C, self.b, rho)


def build_moments(samples, gamma, rho, check=True):
    """Per-sample moments of a trajectory.

    Raises
    ------
    RankDeficiencyError
        If ``C_hat`` or ``A_hat`` is numerically singular and ``check`` is set.
    """
    phi = samples.features[:-1]
    phi_next = samples.features[1:]
    A = np.einsum("pi,pj->pij", phi, phi - gamma * phi_next)
    C = np.einsum("pi,pj->pij", phi, phi)
    b = samples.local_rewards[:, :, None] * phi[:, None, :]
    mom = Moments(A, C, b, rho)
    if check:
        mom.check_rank()
    return mom


def population_moments(mdp, policy, feature_map, gamma=None):
    """Exact ``(A, C, b)`` under the stationary distribution of ``policy``."""
    gamma = mdp.gamma if gamma is None else gamma
    Phi = np.asarray(getattr(feature_map, "table", feature_map), dtype=float)
    mu = stationary_distribution(mdp, policy)
    P_pi = policy_transition(mdp, policy)
    r_pi = np.einsum("sa,sa->s", policy.probs, mdp.global_reward)
    DPhi = mu[:, None] * Phi
    A = DPhi.T @ (Phi - gamma * P_pi @ Phi)
    C = DPhi.T @ Phi
    b = DPhi.T @ r_pi
    return A, C, b


def _weighted_residual(mom, theta, b):
    r = mom.A_hat @ theta - b
    return 0.5 * r @ sla.cho_solve(mom.C_hat_factor, r)


def mspbe(mom, theta):
    """Empirical MSPBE ``1/2 ||A theta - b||^2_{C^{-1}} + rho/2 ||theta||^2``."""
    theta = np.asarray(theta, dtype=float)
    return _weighted_residual(mom, theta, mom.b_hat_global) + 0.5 * mom.rho * theta @ theta


def mspbe_agent(mom, theta, i):
    """Local MSPBE of agent ``i``: the global one with ``b_hat[i]`` in place of ``b_hat``."""
    if not 0 <= i < mom.N:
        raise ParameterError(f"agent index {i} out of range [0, {mom.N})")
    theta = np.asarray(theta, dtype=float)
    return _weighted_residual(mom, theta, mom.b_hat[i]) + 0.5 * mom.rho * theta @ theta


def mspbe_grad(mom, theta, b=None):
    b = mom.b_hat_global if b is None else b
    r = mom.A_hat @ theta - b
    return mom.A_hat.T @ sla.cho_solve(mom.C_hat_factor, r) + mom.rho * theta


def mspbe_minimizer(mom, b=None):
    """Closed-form minimizer ``(A^T C^{-1} A + rho I)^{-1} A^T C^{-1} b``."""
    b = mom.b_hat_global if b is None else b
    rhs = mom.A_hat.T @ sla.cho_solve(mom.C_hat_factor, b)
    return np.linalg.solve(mom.normal_matrix + mom.rho * np.eye(mom.d), rhs)


def dual_inner_max(mom, theta, i):
    """Value of the concave inner problem at its maximizer ``w = C^{-1}(A theta - b_i)``.

    Returns ``(value, w)`` where ``value`` includes the primal regularizer.
    """
    theta = np.asarray(theta, dtype=float)
    r = mom.A_hat @ theta - mom.b_hat[i]
    w = sla.cho_solve(mom.C_hat_factor, r)
    value = w @ r - 0.5 * w @ mom.C_hat @ w + 0.5 * mom.rho * theta @ theta
    return value, w


def j_value(mom, p, i, theta, w):
    """Per-sample saddle objective ``J_{i,p}(theta, w)``."""
    A, C = mom.A[p], mom.C[p]
    return (w @ A @ theta - mom.b[p, i] @ w - 0.5 * w @ C @ w
            + 0.5 * mom.rho * theta @ theta)


def j_grad_theta(mom, p, theta, w):
    """``rho theta + A_p^T w``."""
    return mom.rho * np.asarray(theta) + mom.A[p].T @ w


def j_grad_w(mom, p, i, theta, w):
    """``A_p theta - C_p w - b_{p,i}``."""
    return mom.A[p] @ theta - mom.C[p] @ w - mom.b[p, i]


def beta_of(mom):
    """Step-size ratio ``8 (rho + lambda_max(A^T C^-1 A)) / lambda_min(C)``."""
    _check_rank("C_hat", mom.C_hat)
    lam_min_c = np.linalg.eigvalsh(mom.C_hat)[0]
    if lam_min_c <= 0:
        raise RankDeficiencyError("C_hat is not positive definite")
    lam_max_k = np.linalg.eigvalsh(mom.normal_matrix)[-1]
    return 8.0 * (mom.rho + lam_max_k) / lam_min_c


def stationarity_system(mom, beta, per_sample=None):
    """Block matrix ``G`` and right-hand side of the scaled optimality system.

    The unknown stacks ``theta`` followed by ``w_i / sqrt(beta N)`` for each
    agent. With ``per_sample=p`` the per-sample analog ``G_p`` is returned
    (its right-hand side uses ``b_{p,i}``).
    """
    N, d = mom.N, mom.d
    if per_sample is None:
        A, C, b = mom.A_hat, mom.C_hat, mom.b_hat
    else:
        A, C, b = mom.A[per_sample], mom.C[per_sample], mom.b[per_sample]
    c = np.sqrt(beta / N)
    G = np.zeros(((N + 1) * d, (N + 1) * d))
    G[:d, :d] = mom.rho * np.eye(d)
    rhs = np.zeros((N + 1) * d)
    for i in range(N):
        blk = slice((i + 1) * d, (i + 2) * d)
        G[:d, blk] = c * A.T
        G[blk, :d] = -c * A
        G[blk, blk] = beta * C
        rhs[blk] = -c * b[i]
    return G, rhs


@dataclass(frozen=True)
class SaddlePoint:
    """Primal-dual optimum ``(theta*, {w_i*})`` and the ratio it was scaled with."""

    theta_star: np.ndarray
    w_star: np.ndarray
    beta: float
    residual: float = 0.0

    def stacked(self):
        """Scaled unknown ``(theta*, w_1*/sqrt(beta N), ...)``."""
        N = self.w_star.shape[0]
        return np.concatenate([self.theta_star,
                               (self.w_star / np.sqrt(self.beta * N)).ravel()])


def solve_saddle_point(mom, beta=None):
    """Solve the ``(N+1) d`` stationarity system by dense LU."""
    mom.check_rank()
    beta = beta_of(mom) if beta is None else float(beta)
    G, rhs = stationarity_system(mom, beta)
    lu = sla.lu_factor(G, check_finite=True)
    if np.min(np.abs(np.diag(lu[0]))) < RANK_TOL * np.max(np.abs(np.diag(lu[0]))):
        raise RankDeficiencyError("stationarity system is singular")
    v = sla.lu_solve(lu, rhs)
    res = np.linalg.norm(G @ v - rhs)
    N, d = mom.N, mom.d
    theta = v[:d].copy()
    w = v[d:].reshape(N, d) * np.sqrt(beta * N)
    return SaddlePoint(theta, w, beta, float(res))
