"""Finite multi-agent MDPs, joint policies and trajectory sampling.

Joint actions are flattened to a single index; nothing downstream needs the
per-agent factorization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import NumericalError, ParameterError

SMOOTHING = 1e-3
_ROW_TOL = 1e-12


def _check_gamma(gamma):
    if not (0.0 < gamma < 1.0):
        raise ParameterError(f"discount must lie in (0, 1), got {gamma!r}")


@dataclass(frozen=True)
class TabularMdp:
    """Multi-agent MDP with a shared transition kernel and private rewards.

    Attributes
    ----------
    transition : ndarray, shape (n_joint_actions, n_states, n_states)
        ``transition[a, s, s']`` is the probability of moving to ``s'``.
    local_reward : ndarray, shape (n_agents, n_states, n_joint_actions)
        Reward table of each agent.
    gamma : float
        Discount factor in (0, 1).
    """

    transition: np.ndarray
    local_reward: np.ndarray
    gamma: float

    def __post_init__(self):
        _check_gamma(self.gamma)
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.local_reward, dtype=float)
        if P.ndim != 3 or P.shape[1] != P.shape[2]:
            raise ParameterError("transition must have shape (A, S, S)")
        if R.ndim != 3 or R.shape[1:] != (P.shape[1], P.shape[0]):
            raise ParameterError("local_reward must have shape (N, S, A)")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > _ROW_TOL:
            raise ParameterError("transition rows must be probability vectors")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "local_reward", R)

    @property
    def n_states(self) -> int:
        return self.transition.shape[1]

    @property
    def n_joint_actions(self) -> int:
        return self.transition.shape[0]

    @property
    def n_agents(self) -> int:
        return self.local_reward.shape[0]

    @property
    def global_reward(self) -> np.ndarray:
        """Team-average reward table, shape (n_states, n_joint_actions)."""
        return self.local_reward.mean(axis=0)


@dataclass(frozen=True)
class Policy:
    """Joint stochastic policy ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.probs, dtype=float)
        if pi.ndim != 2:
            raise ParameterError("policy must be a (n_states, n_joint_actions) matrix")
        if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > _ROW_TOL:
            raise ParameterError("policy rows must be probability vectors")
        object.__setattr__(self, "probs", pi)


@dataclass(frozen=True)
class SampleSet:
    """A trajectory ``s_1, a_1, ..., s_M, a_M, s_{M+1}`` with features.

    ``features[p]`` is the feature vector of ``states[p]``; rows of
    ``local_rewards`` average to the team reward of the visited pair.
    """

    states: np.ndarray
    actions: np.ndarray
    local_rewards: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        actions = np.asarray(self.actions, dtype=np.int64)
        rewards = np.atleast_2d(np.asarray(self.local_rewards, dtype=float))
        feats = np.asarray(self.features, dtype=float)
        M = actions.shape[0]
        if states.shape != (M + 1,) or rewards.shape[0] != M or feats.shape[0] != M + 1:
            raise ParameterError("inconsistent SampleSet lengths")
        if feats.ndim != 2:
            raise ParameterError("features must be a (M+1, d) matrix")
        for name, val in (("states", states), ("actions", actions),
                          ("local_rewards", rewards), ("features", feats)):
            object.__setattr__(self, name, val)

    @property
    def n_samples(self) -> int:
        return self.actions.shape[0]

    @property
    def n_agents(self) -> int:
        return self.local_rewards.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def global_rewards(self) -> np.ndarray:
        return self.local_rewards.mean(axis=1)


def smooth_rows(P, eps=SMOOTHING):
    """Add ``eps`` to every entry and renormalize the last axis."""
    P = np.asarray(P, dtype=float) + eps
    return P / P.sum(axis=-1, keepdims=True)


def generate_random_mdp(seed, n_states, n_agents, n_joint_actions, gamma):
    """Draw a random multi-agent MDP.

    Transition rows are uniform-random, smoothed by :data:`SMOOTHING` so that
    the chain induced by any strictly positive policy is irreducible and
    aperiodic. Local rewards are standard normal.
    """
    _check_gamma(gamma)
    for name, v in (("n_states", n_states), ("n_agents", n_agents),
                    ("n_joint_actions", n_joint_actions)):
        if int(v) < 1:
            raise ParameterError(f"{name} must be >= 1, got {v!r}")
    rng = np.random.default_rng(seed)
    raw = rng.random((n_joint_actions, n_states, n_states))
    P = smooth_rows(raw / raw.sum(axis=2, keepdims=True))
    R = rng.standard_normal((n_agents, n_states, n_joint_actions))
    return TabularMdp(P, R, float(gamma))


def random_policy(seed, n_states, n_joint_actions):
    """Strictly positive random policy, rows drawn from a flat Dirichlet."""
    rng = np.random.default_rng(seed)
    return Policy(rng.dirichlet(np.ones(n_joint_actions), size=n_states))


def uniform_policy(n_states, n_joint_actions):
    return Policy(np.full((n_states, n_joint_actions), 1.0 / n_joint_actions))


def policy_transition(mdp, policy):
    """State-to-state matrix ``P_pi[s, s'] = sum_a pi(a|s) P^a[s, s']``."""
    return np.einsum("sa,ast->st", policy.probs, mdp.transition)


def stationary_from_matrix(P, tol=1e-14, max_iter=10**6):
    """Stationary distribution of a row-stochastic matrix by power iteration.

    The lazy chain ``(I + P) / 2`` is iterated; it shares the stationary
    distribution of ``P`` and is aperiodic whenever ``P`` is irreducible.
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    n_comp, _ = connected_components(P > 0, directed=True, connection="strong")
    if n_comp > 1:
        raise NumericalError(f"the chain is reducible ({n_comp} communicating classes)")
    lazy = 0.5 * (np.eye(n) + P)
    mu = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = mu @ lazy
        nxt /= nxt.sum()
        if np.abs(nxt - mu).sum() < tol:
            mu = nxt
            break
        mu = nxt
    else:
        raise NumericalError(
            f"power iteration did not converge in {max_iter} steps; "
            "the induced chain is likely reducible")
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def stationary_distribution(mdp, policy):
    """Stationary state distribution of the chain induced by ``policy``."""
    return stationary_from_matrix(policy_transition(mdp, policy))


def split_reward(r_global, n_agents, seed=None, fractions=None):
    """Split a team reward into ``n_agents`` private rewards with mean ``r_global``.

    Portions are normalized uniforms scaled by ``n_agents * r_global``; the
    last agent absorbs the rounding residue so the mean is exact.
    """
    if n_agents < 1:
        raise ParameterError("n_agents must be >= 1")
    if fractions is None:
        u = np.random.default_rng(seed).random(n_agents)
        fractions = u / u.sum()
    fractions = np.asarray(fractions, dtype=float)
    if fractions.shape != (n_agents,):
        raise ParameterError("fractions must have one entry per agent")
    total = n_agents * float(r_global)
    out = total * fractions
    out[-1] = total - out[:-1].sum()
    return out


def sample_trajectory(mdp, policy, feature_map, M, seed):
    """Simulate ``M`` transitions starting from the stationary distribution.

    Parameters
    ----------
    feature_map : FeatureMap or ndarray
        Table of state features, shape (n_states, d).
    M : int
        Number of state-action samples; ``M + 1`` states are recorded.
    seed : int
        Seed of the sampling stream; the output is a pure function of it.
    """
    if M < 1:
        raise ParameterError("M must be >= 1")
    table = np.asarray(getattr(feature_map, "table", feature_map), dtype=float)
    if table.shape[0] != mdp.n_states:
        raise ParameterError("feature table must have one row per state")
    rng = np.random.default_rng(seed)
    mu = stationary_distribution(mdp, policy)
    pi_cdf = np.cumsum(policy.probs, axis=1)
    P_cdf = np.cumsum(mdp.transition, axis=2)
    u = rng.random((M, 2))
    states = np.empty(M + 1, dtype=np.int64)
    actions = np.empty(M, dtype=np.int64)
    nS, nA = mdp.n_states, mdp.n_joint_actions
    states[0] = min(np.searchsorted(np.cumsum(mu), rng.random(), side="right"), nS - 1)
    for p in range(M):
        s = states[p]
        a = min(np.searchsorted(pi_cdf[s], u[p, 0], side="right"), nA - 1)
        actions[p] = a
        states[p + 1] = min(np.searchsorted(P_cdf[a, s], u[p, 1], side="right"), nS - 1)
    r_c = mdp.global_reward[states[:-1], actions]
    N = mdp.n_agents
    portions = rng.random((M, N))
    portions /= portions.sum(axis=1, keepdims=True)
    rewards = np.vstack([split_reward(r_c[p], N, fractions=portions[p]) for p in range(M)])
    return SampleSet(states, actions, rewards, table[states])
