"""Communication graphs and doubly stochastic mixing matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ParameterError, TopologyError

TOPOLOGIES = ("complete", "ring", "path", "erdos_renyi", "custom")
MAX_ER_ATTEMPTS = 1000


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Symmetric doubly stochastic weights over an undirected graph.

    ``lam`` is the consensus contraction factor of ``W - 11^T/N``.
    """

    w: np.ndarray
    lam: float
    topology: str
    edges: tuple = ()
    param: float | None = None

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def edge_list(self):
        return [list(e) for e in self.edges]


def lambda_of(w):
    """Connectivity ``lambda`` of a symmetric doubly stochastic matrix.

    Computed as the spectral norm of ``W - 11^T/N`` (largest eigenvalue in
    magnitude), which is the factor the consensus step contracts by.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ParameterError("mixing matrix must be square")
    if not np.allclose(w, w.T, atol=1e-12, rtol=0):
        raise ParameterError("mixing matrix must be symmetric")
    n = w.shape[0]
    ev = np.linalg.eigvalsh(w - np.full((n, n), 1.0 / n))
    return float(max(abs(ev[0]), abs(ev[-1])))


def metropolis_weights(n, edges):
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on each edge."""
    adj = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        if i == j:
            continue
        if not (0 <= i < n and 0 <= j < n):
            raise TopologyError(f"edge ({i}, {j}) out of range for {n} nodes")
        adj[i, j] = adj[j, i] = True
    deg = adj.sum(axis=1)
    W = np.zeros((n, n))
    ii, jj = np.nonzero(adj)
    W[ii, jj] = 1.0 / (1.0 + np.maximum(deg[ii], deg[jj]))
    W[np.diag_indices(n)] = 1.0 - W.sum(axis=1)
    return W


def _canonical_edges(adj):
    ii, jj = np.nonzero(np.triu(adj, 1))
    return tuple((int(i), int(j)) for i, j in zip(ii, jj))


def _is_connected(n, edges):
    if n == 1:
        return True
    adj = np.zeros((n, n), dtype=bool)
    for i, j in edges:
        adj[i, j] = adj[j, i] = True
    return connected_components(adj, directed=False)[0] == 1


def default_er_probability(n):
    """Sparse Erdos-Renyi regime ``1.01 log N / N`` (capped at 1)."""
    return min(1.0, 1.01 * math.log(n) / n) if n > 1 else 1.0


def graph_edges(topology, n, seed=None, p=None, edges=None):
    """Edge list of the requested topology (connected, undirected)."""
    if n < 1:
        raise ParameterError("number of agents must be >= 1")
    if topology == "complete":
        return tuple((i, j) for i in range(n) for j in range(i + 1, n))
    if topology == "ring":
        if n <= 2:
            return graph_edges("path", n)
        return tuple(sorted((min(i, (i + 1) % n), max(i, (i + 1) % n)) for i in range(n)))
    if topology == "path":
        return tuple((i, i + 1) for i in range(n - 1))
    if topology == "erdos_renyi":
        p = 0.2 if p is None else float(p)
        if not (0.0 < p <= 1.0):
            raise ParameterError(f"Erdos-Renyi probability must be in (0, 1], got {p}")
        rng = np.random.default_rng(seed)
        for _ in range(MAX_ER_ATTEMPTS):
            adj = np.triu(rng.random((n, n)) < p, 1)
            cand = _canonical_edges(adj)
            if _is_connected(n, cand):
                return cand
        raise TopologyError(
            f"no connected Erdos-Renyi graph (N={n}, p={p}) in {MAX_ER_ATTEMPTS} attempts")
    if topology == "custom":
        if edges is None:
            raise ParameterError("custom topology requires an edge list")
        cand = tuple(sorted({(min(int(i), int(j)), max(int(i), int(j)))
                             for i, j in edges if int(i) != int(j)}))
        if not _is_connected(n, cand):
            raise TopologyError("custom graph is not connected")
        return cand
    raise ParameterError(f"unknown topology {topology!r}; expected one of {TOPOLOGIES}")


def build_mixing(topology, n, seed=None, p=None, edges=None):
    """Metropolis mixing matrix on a connected graph.

    Parameters
    ----------
    topology : str
        One of ``complete``, ``ring``, ``path``, ``erdos_renyi``, ``custom``.
    n : int
        Number of agents.
    seed : int, optional
        Seed for the Erdos-Renyi draw; disconnected draws are resampled.
    p : float, optional
        Edge probability for ``erdos_renyi`` (default 0.2).
    edges : iterable of pairs, optional
        Edge list for ``custom``.
    """
    E = graph_edges(topology, n, seed=seed, p=p, edges=edges)
    W = metropolis_weights(n, E)
    if topology == "erdos_renyi" and p is None:
        p = 0.2
    return MixingMatrix(W, lambda_of(W), topology, E, p)


def from_matrix(w, topology="custom"):
    """Wrap an explicit symmetric doubly stochastic matrix."""
    w = np.asarray(w, dtype=float)
    if np.any(w < -1e-15):
        raise ParameterError("mixing weights must be nonnegative")
    n = w.shape[0]
    ones = np.ones(n)
    if np.max(np.abs(w @ ones - 1)) > 1e-12 or np.max(np.abs(ones @ w - 1)) > 1e-12:
        raise ParameterError("mixing matrix must be doubly stochastic")
    adj = (w > 0) & ~np.eye(n, dtype=bool)
    return MixingMatrix(w, lambda_of(w), topology, _canonical_edges(adj))


def uniform_averaging(n):
    """``W = 11^T / N``, the exact-averaging matrix of the complete graph."""
    return from_matrix(np.full((n, n), 1.0 / n), topology="complete")
