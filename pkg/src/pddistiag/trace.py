"""Per-iteration convergence records shared by all methods."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = ("epoch", "iter", "mspbe_gap", "consensus_err", "tracking_err",
               "v_norm", "wall_ms")


@dataclass
class RunTrace:
    """Columnar trace; ``iters[k]`` is the iteration that produced row ``k``."""

    method: str
    M: int
    iters: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    gap: np.ndarray = field(default_factory=lambda: np.zeros(0))
    consensus: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tracking: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_norm: np.ndarray = field(default_factory=lambda: np.zeros(0))
    wall_ms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iters)

    @property
    def epochs(self):
        return self.iters / self.M

    def extend(self, iters, metrics, wall_ms):
        metrics = np.asarray(metrics, dtype=float).reshape(-1, 4)
        self.iters = np.concatenate([self.iters, np.asarray(iters, dtype=np.int64)])
        self.gap = np.concatenate([self.gap, metrics[:, 0]])
        self.consensus = np.concatenate([self.consensus, metrics[:, 1]])
        self.tracking = np.concatenate([self.tracking, metrics[:, 2]])
        self.v_norm = np.concatenate([self.v_norm, metrics[:, 3]])
        self.wall_ms = np.concatenate([self.wall_ms, np.broadcast_to(
            np.asarray(wall_ms, dtype=float), (len(metrics),))])

    def first_below(self, tol):
        """Epoch at which the gap first drops below ``tol`` (``None`` if never)."""
        hit = np.nonzero(self.gap < tol)[0]
        return float(self.epochs[hit[0]]) if hit.size else None

    def settled_below(self, tol):
        """Epoch after which every recorded gap stays below ``tol`` (``None`` if it never settles)."""
        above = np.nonzero(~(self.gap < tol))[0]
        if not above.size:
            return float(self.epochs[0]) if len(self) else None
        k = above[-1] + 1
        return float(self.epochs[k]) if k < len(self) else None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(CSV_COLUMNS)
            for k in range(len(self)):
                wr.writerow([repr(float(self.epochs[k])), int(self.iters[k]),
                             repr(float(self.gap[k])), repr(float(self.consensus[k])),
                             repr(float(self.tracking[k])), repr(float(self.v_norm[k])),
                             f"{self.wall_ms[k]:.3f}"])

    @classmethod
    def read_csv(cls, path, method="", M=None):
        """Load a trace CSV; ``M`` is inferred from the epoch column when omitted."""
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        if M is None:
            pos = np.nonzero(data["epoch"] > 0)[0]
            M = int(round(data["iter"][pos[0]] / data["epoch"][pos[0]])) if pos.size else 1
        tr = cls(method, M)
        tr.iters = data["iter"].astype(np.int64)
        tr.gap = data["mspbe_gap"]
        tr.consensus = data["consensus_err"]
        tr.tracking = data["tracking_err"]
        tr.v_norm = data["v_norm"]
        tr.wall_ms = data["wall_ms"]
        return tr
