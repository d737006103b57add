"""JSON containers for reproducible experiments.

Every document carries ``format``, ``version``, ``kind``, a ``dims`` header,
scalar fields and row-major arrays stored as ``{"shape": [...], "data": [...]}``.
Floats are written with ``repr`` precision, so round trips are exact.
"""
from __future__ import annotations

import json

import numpy as np

from .env import SampleSet, TabularMdp
from .errors import ParameterError
from .moments import Moments
from .network import build_mixing
from .solver import SolverState

FORMAT = "pddistiag"
VERSION = 1


def _pack(arr):
    arr = np.asarray(arr)
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def _unpack(obj, dtype=float):
    return np.asarray(obj["data"], dtype=dtype).reshape(obj["shape"])


def _doc(kind, dims, arrays, scalars=None):
    return {"format": FORMAT, "version": VERSION, "kind": kind, "dims": dims,
            "scalars": scalars or {}, "arrays": {k: _pack(v) for k, v in arrays.items()}}


def _check(doc, kind):
    if doc.get("format") != FORMAT:
        raise ParameterError("not a pddistiag document")
    if doc.get("version") != VERSION:
        raise ParameterError(f"unsupported document version {doc.get('version')!r}")
    if doc.get("kind") != kind:
        raise ParameterError(f"expected a {kind!r} document, got {doc.get('kind')!r}")
    return doc["arrays"], doc.get("scalars", {})


def mdp_to_dict(mdp):
    return _doc("mdp", {"n_states": mdp.n_states, "n_agents": mdp.n_agents,
                        "n_joint_actions": mdp.n_joint_actions},
                {"transition": mdp.transition, "local_reward": mdp.local_reward},
                {"gamma": mdp.gamma})


def mdp_from_dict(doc):
    arrays, scalars = _check(doc, "mdp")
    return TabularMdp(_unpack(arrays["transition"]), _unpack(arrays["local_reward"]),
                      scalars["gamma"])


def samples_to_dict(ss):
    return _doc("samples", {"M": ss.n_samples, "N": ss.n_agents, "d": ss.dim},
                {"states": ss.states, "actions": ss.actions,
                 "local_rewards": ss.local_rewards, "features": ss.features})


def samples_from_dict(doc):
    a, _ = _check(doc, "samples")
    return SampleSet(_unpack(a["states"], np.int64), _unpack(a["actions"], np.int64),
                     _unpack(a["local_rewards"]), _unpack(a["features"]))


def moments_to_dict(mom):
    return _doc("moments", {"M": mom.M, "N": mom.N, "d": mom.d},
                {"A": mom.A, "C": mom.C, "b": mom.b}, {"rho": mom.rho})


def moments_from_dict(doc):
    a, s = _check(doc, "moments")
    return Moments(_unpack(a["A"]), _unpack(a["C"]), _unpack(a["b"]), s["rho"])


_STATE_ARRAYS = ("theta", "w", "s", "dvec", "grad_table_theta", "grad_table_w",
                 "grad_sum_theta")


def state_to_dict(state):
    arrays = {k: getattr(state, k) for k in _STATE_ARRAYS}
    arrays["tau"] = state.tau
    return _doc("solver_state", {"N": state.N, "M": state.M, "d": state.d}, arrays,
                {"t": state.t, "gamma1": state.gamma1, "gamma2": state.gamma2})


def state_from_dict(doc):
    a, s = _check(doc, "solver_state")
    kw = {k: _unpack(a[k]) for k in _STATE_ARRAYS}
    return SolverState(t=int(s["t"]), tau=_unpack(a["tau"], np.int64),
                       gamma1=float(s["gamma1"]), gamma2=float(s["gamma2"]), **kw)


def graph_to_dict(mixing):
    return {"format": FORMAT, "version": VERSION, "kind": "graph",
            "dims": {"N": mixing.n}, "topology": mixing.topology,
            "edges": mixing.edge_list(), "lambda": mixing.lam}


def graph_from_dict(doc):
    if doc.get("kind") != "graph":
        raise ParameterError("expected a 'graph' document")
    return build_mixing("custom", int(doc["dims"]["N"]), edges=doc["edges"])


_WRITERS = {
    TabularMdp: mdp_to_dict, SampleSet: samples_to_dict, Moments: moments_to_dict,
    SolverState: state_to_dict,
}
_READERS = {
    "mdp": mdp_from_dict, "samples": samples_from_dict, "moments": moments_from_dict,
    "solver_state": state_from_dict, "graph": graph_from_dict,
}


def save(obj, path):
    """Write any supported object (or a mixing matrix) to ``path`` as JSON."""
    if hasattr(obj, "edges") and hasattr(obj, "lam"):
        doc = graph_to_dict(obj)
    else:
        try:
            doc = _WRITERS[type(obj)](obj)
        except KeyError:
            raise ParameterError(f"cannot serialize {type(obj).__name__}") from None
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load(path):
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return _READERS[doc["kind"]](doc)
    except KeyError:
        raise ParameterError(f"unknown document kind {doc.get('kind')!r}") from None
