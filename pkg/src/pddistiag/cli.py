"""Experiment runner: ``pddistiag run`` and ``pddistiag sweep``.

Config files are plain text, one ``key = value`` per line; ``#`` starts a
comment, blank lines are ignored, list values are comma separated. Any key
can be overridden from the environment as ``PDDISTIAG_CFG_<KEY>`` (upper
case), and from the command line with ``--set key=value``.

Keys (defaults in brackets)::

    seed [0]              n_agents [10]           n_samples [200]
    feature_dim [20]      n_states [4*feature_dim] n_actions [4]
    features [orthogonal] discount [0.9]          rho [0.01]
    gamma1 [default]        # number | default (0.005/lambda_max(A_hat)) | auto-certified
    gamma2 [default]        # number | default (5e-3) | auto-beta (beta * gamma1)
    topology [erdos_renyi] # complete | ring | path | erdos_renyi
    er_p [0.2]            # number | auto (1.01 log N / N)
    schedule [cyclic]     # cyclic | shuffle
    epochs [100]          methods [pd-distiag,pdbg,gtd2,saga]
    gtd2_alpha [default]    gtd2_beta [0.005]
    record_every [M/10]   tol [1e-6]               timing [false]
    backend [auto]        output [runs/default]

Exit codes: 0 success, 2 configuration error, 3 rank-deficient moments,
4 divergence, 5 no certified step size.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines, diagnostics, plotting
from .env import generate_random_mdp, random_policy, sample_trajectory
from .errors import (CertificateError, DivergenceError, ParameterError,
                     RankDeficiencyError)
from .moments import beta_of, build_moments, mspbe, random_features, solve_saddle_point
from .network import build_mixing, default_er_probability
from .solver import Schedule, init_state, run

log = logging.getLogger("pddistiag")

ALL_METHODS = ("pd-distiag", "pdbg", "gtd2", "saga")
ENV_PREFIX = "PDDISTIAG_CFG_"
SWEEP_AXES = {"topology": "topology", "rho": "rho", "gamma1": "gamma1",
              "M": "n_samples", "N": "n_agents"}
PAPER_GAMMA1_SCALE = 0.005
PAPER_GAMMA2 = 5e-3


class ConfigError(ParameterError):
    pass


@dataclass
class ExperimentConfig:
    seed: int = 0
    n_agents: int = 10
    n_samples: int = 200
    feature_dim: int = 20
    n_states: int | None = None
    n_actions: int = 4
    features: str = "orthogonal"
    discount: float = 0.9
    rho: float = 0.01
    gamma1: str | float = "default"
    gamma2: str | float = "default"
    topology: str = "erdos_renyi"
    er_p: str | float = 0.2
    schedule: str = "cyclic"
    epochs: int = 100
    methods: tuple = ALL_METHODS
    gtd2_alpha: str | float = "default"
    gtd2_beta: float = 5e-3
    record_every: int | None = None
    tol: float = 1e-6
    timing: bool = False
    backend: str | None = None
    output: str = "runs/default"

    def validate(self):
        for name in ("n_agents", "n_samples", "feature_dim", "n_actions", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.rho < 0:
            raise ConfigError("rho must be nonnegative")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        bad = [m for m in self.methods if m not in ALL_METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {ALL_METHODS}")
        if not 0 < self.discount < 1:
            raise ConfigError("discount must lie in (0, 1)")
        if self.schedule not in ("cyclic", "shuffle"):
            raise ConfigError("schedule must be cyclic or shuffle")
        for name, words in (("gamma1", ("default", "auto-certified")),
                            ("gamma2", ("default", "auto-beta")),
                            ("gtd2_alpha", ("default",)), ("er_p", ("auto",))):
            v = getattr(self, name)
            if isinstance(v, str) and v not in words:
                raise ConfigError(f"{name} must be a number or one of {words}")
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _convert(key, raw):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    raw = raw.strip()
    try:
        if key == "methods":
            return tuple(m.strip() for m in raw.split(",") if m.strip())
        if key in ("seed", "n_agents", "n_samples", "feature_dim", "n_actions", "epochs"):
            return int(raw)
        if key in ("n_states", "record_every"):
            return None if raw.lower() in ("", "none", "auto") else int(raw)
        if key in ("discount", "rho", "gtd2_beta", "tol"):
            return float(raw)
        if key in ("gamma1", "gamma2", "gtd2_alpha", "er_p"):
            try:
                return float(raw)
            except ValueError:
                return raw.lower()
        if key == "timing":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if key == "backend":
            return None if raw.lower() in ("", "auto", "none") else raw.lower()
        if key == "topology":
            return {"er": "erdos_renyi"}.get(raw.lower(), raw.lower())
        return raw
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None


def parse_config_text(text, overrides=None, environ=None):
    """Parse the key-value format, then apply environment and explicit overrides."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        values[key.strip()] = _convert(key.strip(), raw)
    environ = os.environ if environ is None else environ
    for name, raw in environ.items():
        if name.startswith(ENV_PREFIX):
            key = name[len(ENV_PREFIX):].lower()
            values[key] = _convert(key, raw)
    for key, raw in (overrides or {}).items():
        values[key] = _convert(key, raw) if isinstance(raw, str) else raw
    return ExperimentConfig(**values).validate()


def load_config(path, overrides=None, environ=None):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, overrides, environ)


def build_problem(cfg):
    """Synthetic MDP, trajectory, moments and oracle for a config (pure in the seed)."""
    d = cfg.feature_dim
    n_states = cfg.n_states or 4 * d
    mdp = generate_random_mdp(cfg.seed, n_states, cfg.n_agents, cfg.n_actions, cfg.discount)
    policy = random_policy(cfg.seed + 1, n_states, cfg.n_actions)
    fmap = random_features(cfg.seed + 2, n_states, d, kind=cfg.features)
    samples = sample_trajectory(mdp, policy, fmap, cfg.n_samples, cfg.seed + 3)
    mom = build_moments(samples, cfg.discount, cfg.rho)
    beta = beta_of(mom)
    oracle = solve_saddle_point(mom, beta)
    return mom, oracle


def build_network(cfg):
    p = cfg.er_p
    if cfg.topology == "erdos_renyi" and p == "auto":
        p = default_er_probability(cfg.n_agents)
    return build_mixing(cfg.topology, cfg.n_agents, seed=cfg.seed + 4,
                        p=p if cfg.topology == "erdos_renyi" else None)


def default_gamma1(mom):
    return PAPER_GAMMA1_SCALE / float(np.max(np.abs(np.linalg.eigvals(mom.A_hat))))


def resolve_steps(cfg, mom, mixing):
    """Primal/dual step sizes and certificate metadata for a config."""
    meta = {}
    beta = beta_of(mom)
    if cfg.gamma1 == "default":
        g1 = default_gamma1(mom)
    elif cfg.gamma1 == "auto-certified":
        cert = diagnostics.certify_step_size(mom, mixing)
        meta["certificate"] = {"found": cert.found, "gamma1": cert.gamma1,
                               "sigma": cert.sigma, "gamma_max": cert.gamma_max,
                               "best_radius": cert.best_radius}
        if not cert.found:
            raise CertificateError(
                f"no step size certifies rho(Q) < 1 - {diagnostics.CERT_MARGIN:g} "
                f"(best spectral radius {cert.best_radius:.15f})")
        g1 = cert.gamma1
    else:
        g1 = float(cfg.gamma1)
    if cfg.gamma2 == "default":
        g2 = PAPER_GAMMA2
    elif cfg.gamma2 == "auto-beta":
        g2 = beta * g1
    else:
        g2 = float(cfg.gamma2)
    alpha = default_gamma1(mom) if cfg.gtd2_alpha == "default" else float(cfg.gtd2_alpha)
    return g1, g2, alpha, meta


def _safe_fit(trace, column="gap"):
    try:
        slope, r2 = diagnostics.fit_linear_rate(trace, burn_in=0, column=column)
        return {"slope_per_iter": slope, "r2": r2}
    except ParameterError:
        return None


def run_experiment(cfg, write=True):
    """Generate data, solve the oracle, run every method and write artifacts.

    Returns the summary dictionary (also written to ``summary.json``).
    """
    out = Path(cfg.output)
    mom, oracle = build_problem(cfg)
    mixing = build_network(cfg)
    g1, g2, alpha, meta = resolve_steps(cfg, mom, mixing)
    M = cfg.n_samples
    n_iters = cfg.epochs * M
    rec = cfg.record_every or max(1, M // 10)
    traces = {}
    for method in cfg.methods:
        sched = Schedule(cfg.schedule, M, seed=cfg.seed + 5)
        if method == "pd-distiag":
            state = init_state(mom, mixing, g1, g2)
            tr = run(state, mom, mixing, sched, n_iters, oracle, record_every=rec,
                     backend=cfg.backend, timing=cfg.timing)
        elif method == "pdbg":
            # one full-batch step touches all M samples: one epoch per iteration
            tr = baselines.run_central("pdbg", mom, oracle, cfg.epochs, g1, g2,
                                       record_every=1, timing=cfg.timing)
            tr.M = 1
        elif method == "gtd2":
            tr = baselines.run_central("gtd2", mom, oracle, n_iters, alpha, cfg.gtd2_beta,
                                       schedule=sched, record_every=rec, timing=cfg.timing)
        else:
            tr = baselines.run_central("saga", mom, oracle, n_iters, g1, g2,
                                       schedule=sched, record_every=rec, timing=cfg.timing)
        traces[method] = tr
    summary = {
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in dataclasses.asdict(cfg).items()},
        "dims": {"N": mom.N, "M": mom.M, "d": mom.d},
        "beta": oracle.beta, "lambda": mixing.lam, "topology": mixing.topology,
        "n_edges": len(mixing.edges), "gamma1": g1, "gamma2": g2,
        "gtd2": {"alpha": alpha, "beta": cfg.gtd2_beta,
                 "variant": "two-time-scale GTD2, unregularized, shared schedule"},
        "saga": {"variant": "primal-dual SAGA, tables initialized at the start point",
                 "gamma1": g1, "gamma2": g2},
        "schedule": cfg.schedule,
        "mspbe_star": float(mspbe(mom, oracle.theta_star)),
        "methods": {},
    }
    summary.update(meta)
    try:
        summary["qcert"] = diagnostics.q_matrix(mom, mixing, g1).to_dict()
    except CertificateError as exc:
        summary["qcert"] = {"applicable": False, "reason": str(exc)}
    for method, tr in traces.items():
        summary["methods"][method] = {
            "final_gap": float(tr.gap[-1]),
            "final_consensus_err": float(tr.consensus[-1]),
            "epochs_to_tol": tr.settled_below(cfg.tol),
            "iters_to_tol": _iters_to_tol(tr, cfg.tol),
            "rate_fit": _safe_fit(tr),
        }
    if write:
        out.mkdir(parents=True, exist_ok=True)
        for method, tr in traces.items():
            tr.write_csv(out / f"{method}.csv")
        plotting.write_svg(out / "convergence.svg",
                           {m: (tr.epochs, tr.gap) for m, tr in traces.items()},
                           title=f"MSPBE gap (N={mom.N}, M={M}, d={mom.d}, rho={cfg.rho:g})")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_jsonable))
    summary["_traces"] = traces
    return summary


def _iters_to_tol(tr, tol):
    above = np.nonzero(~(tr.gap < tol))[0]
    k = above[-1] + 1 if above.size else 0
    return int(tr.iters[k]) if k < len(tr) else None


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _parse_sweep_value(axis, raw):
    key = SWEEP_AXES[axis]
    if axis == "topology":
        return {"topology": _convert("topology", raw.split(":")[0])} | (
            {"er_p": _convert("er_p", raw.split(":", 1)[1])} if ":" in raw else {})
    return {key: _convert(key, raw)}


def sweep(cfg, axis, values, write=True):
    """One run per value of ``axis``; failed cells are recorded and skipped.

    ``topology`` values may carry an ER probability, e.g. ``erdos_renyi:auto``.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    values = [str(v).strip() for v in values if str(v).strip()]
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    root = Path(cfg.output)
    cells, curves = [], {}
    for raw in values:
        upd = _parse_sweep_value(axis, raw)
        cell_cfg = dataclasses.replace(cfg, output=str(root / f"{axis}={raw}"), **upd)
        cell = {"value": raw}
        try:
            cell_cfg.validate()
            res = run_experiment(cell_cfg, write=write)
        except (ParameterError, RankDeficiencyError, DivergenceError, CertificateError) as exc:
            cell.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            log.warning("sweep cell %s=%s failed: %s", axis, raw, exc)
        else:
            main_method = "pd-distiag" if "pd-distiag" in res["methods"] else cfg.methods[0]
            info = res["methods"][main_method]
            cell.update(status="ok", method=main_method, lam=res["lambda"],
                        epochs_to_tol=info["epochs_to_tol"],
                        iters_to_tol=info["iters_to_tol"], final_gap=info["final_gap"],
                        rate_fit=info["rate_fit"])
            tr = res["_traces"][main_method]
            curves[f"{axis}={raw}"] = (tr.epochs, tr.gap)
        cells.append(cell)
    summary = {"axis": axis, "values": values, "tol": cfg.tol, "cells": cells}
    if write:
        root.mkdir(parents=True, exist_ok=True)
        (root / "sweep_summary.json").write_text(json.dumps(summary, indent=2,
                                                            default=_jsonable))
        with open(root / "sweep_summary.csv", "w") as fh:
            fh.write("value,status,epochs_to_tol,iters_to_tol,final_gap\n")
            for c in cells:
                fh.write(f"{c['value']},{c['status']},{_csv(c.get('epochs_to_tol'))},"
                         f"{_csv(c.get('iters_to_tol'))},{_csv(c.get('final_gap'))}\n")
        plotting.write_svg(root / "sweep.svg", curves, title=f"sweep over {axis}")
    return summary


def _csv(v):
    return "" if v is None else repr(v)


EXIT_CODES = ((ConfigError, 2), (RankDeficiencyError, 3), (DivergenceError, 4),
              (CertificateError, 5), (ParameterError, 2))


def _parse_sets(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(prog="pddistiag", description=__doc__.split("\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_sw = sub.add_parser("sweep", help="run one experiment per value of an axis")
    p_sw.add_argument("--config", required=True)
    p_sw.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p_sw.add_argument("--values", required=True, help="comma-separated values")
    p_sw.add_argument("--set", action="append", metavar="KEY=VALUE")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, overrides=_parse_sets(args.set))
        if args.command == "run":
            res = run_experiment(cfg)
            for m, info in res["methods"].items():
                print(f"{m:11s} final_gap={info['final_gap']:.3e} "
                      f"epochs_to_tol={info['epochs_to_tol']}")
            print(f"artifacts written to {cfg.output}")
        else:
            res = sweep(cfg, args.axis, args.values.split(","))
            for c in res["cells"]:
                print(f"{args.axis}={c['value']:<16s} {c['status']:6s} "
                      f"epochs_to_tol={c.get('epochs_to_tol')}")
            print(f"artifacts written to {cfg.output}")
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes below
        for cls, code in EXIT_CODES:
            if isinstance(exc, cls):
                print(f"pddistiag: error: {exc}", file=sys.stderr)
                return code
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
