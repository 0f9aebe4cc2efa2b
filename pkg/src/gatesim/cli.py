"""Command-line front end.

Every subcommand writes plain-text data files plus ``<out>.manifest.json``
listing outputs, the config fingerprint, the seed and wall-clock timings.
Timings appear only in manifests, so data files are byte-reproducible.

Exit status: 0 success, 2 configuration error, 3 numerical abort, 4 I/O error.
Relative output paths are resolved against ``$GATESIM_OUTDIR`` when set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .dynamics import Outcome, run_trial
from .experiments import ASYMMETRIC_AXES, SYMMETRIC_AXES, default_jobs, parse_axis, sweep
from .landscape import compute_grid, overlay_csv, trajectory_overlay
from .lattice import Histogram, final_histogram, lattice_batch, lattice_initial_state, run_lattice_trial, trajectory_jsonl
from .markov import (TransitionMatrix, boundary_state_to_local, compare_distributions, discretize_input,
                     en_state, estimate_transition_matrix, mcmc_run)
from .model import (CONFIG_KEYS, ConfigError, SimConfig, asymmetric_config, lattice_config, load_config,
                    symmetric_config)

OUTDIR_ENV = "GATESIM_OUTDIR"

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_IO = 0, 2, 3, 4


class NumericalAbort(RuntimeError):
    pass


def _out_path(p: str) -> Path:
    path = Path(p)
    base = os.environ.get(OUTDIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    return path


def _coerce(key: str, text: str):
    if key not in CONFIG_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"value for {key} must be a number, got {text!r}") from None
    return v


def _config(args, default: SimConfig) -> SimConfig:
    cfg = load_config(Path(args.config)) if args.config else default
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = _coerce(key.strip(), value.strip())
    return cfg.with_values(**overrides) if overrides else cfg


class Run:
    """Collects output files and timings for the manifest."""

    def __init__(self, args, config: SimConfig | None):
        self.args = args
        self.config = config
        self.outputs: list[str] = []
        self.timings: dict[str, float] = {}
        self.extra: dict = {}
        self._t0 = time.perf_counter()

    def write(self, path: str | Path, text: str) -> Path:
        p = _out_path(str(path))
        if p.parent and not p.parent.exists():
            p.parent.mkdir(parents=True, exist_ok=True)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.outputs.append(str(p))
        return p

    def timed(self, name: str, fn, *a, **kw):
        t = time.perf_counter()
        out = fn(*a, **kw)
        self.timings[name] = time.perf_counter() - t
        return out

    def manifest(self) -> None:
        self.timings["total"] = time.perf_counter() - self._t0
        doc = {
            "subcommand": self.args.command,
            "version": __version__,
            "config_fingerprint": self.config.fingerprint() if self.config else None,
            "master_seed": getattr(self.args, "seed", None),
            "outputs": self.outputs,
            "timings_seconds": self.timings,
        }
        doc.update(self.extra)
        p = _out_path(self.args.out + ".manifest.json")
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(doc, indent=1, default=str) + "\n")


def _jsonl(rows) -> str:
    return "".join(json.dumps(r) + "\n" for r in rows)


def cmd_gate_run(args) -> int:
    cfg = _config(args, symmetric_config())
    run = Run(args, cfg)
    traj, out = run.timed("simulate", run_trial, cfg, args.seed, record_every=args.record_every)
    run.write(args.out, _jsonl(traj.records()))
    if args.overlay:
        run.write(args.overlay, overlay_csv(trajectory_overlay(traj, cfg, args.with_propulsion)))
    summary = {"outcome": out.outcome.value, "steps": out.steps, "final_x": out.final.x, "final_y": out.final.y,
               "max_theta1": out.max_theta[0], "max_theta2": out.max_theta[1]}
    run.extra["result"] = summary
    run.manifest()
    print(json.dumps(summary))
    if out.outcome is Outcome.ABORTED:
        raise NumericalAbort(f"trial aborted at step {out.steps}: non-finite state")
    return EXIT_OK


def cmd_gate_sweep(args) -> int:
    if args.preset == "asymmetric":
        template, axes = asymmetric_config(500.0, F_prop=7.0), dict(ASYMMETRIC_AXES)
    else:
        template, axes = symmetric_config(), dict(SYMMETRIC_AXES)
    template = _config(args, template)
    if args.axis:
        axes = dict(parse_axis(a) for a in args.axis)
    unknown = [k for k in axes if k not in CONFIG_KEYS]
    if unknown:
        raise ConfigError(f"unknown sweep axis {unknown[0]!r}")
    run = Run(args, template)
    res = run.timed("sweep", sweep, template, axes, args.n, args.seed, args.jobs)
    run.write(args.out, res.to_csv())
    run.extra["axes"] = axes
    run.manifest()
    return EXIT_OK


def cmd_landscape(args) -> int:
    cfg = _config(args, symmetric_config(7.0))
    run = Run(args, cfg)
    grid = run.timed("grid", compute_grid, cfg, args.spacing, not args.no_propulsion)
    run.write(args.out, grid.to_csv())
    run.extra["capped_nodes"] = grid.capped
    run.manifest()
    return EXIT_OK


def _entry(args, cfg: SimConfig):
    q = en_state(args.d, args.vx, args.vy)
    return q, boundary_state_to_local(q, cfg)


def cmd_lattice_run(args) -> int:
    cfg = _config(args, lattice_config())
    run = Run(args, cfg)
    _, start = _entry(args, cfg)
    init = lattice_initial_state(start.x, start.y, (start.vx, start.vy))
    if args.trajectory:
        res = run.timed("simulate", run_lattice_trial, cfg, args.seed, init, record_every=args.record_every)
        run.write(args.trajectory, trajectory_jsonl(res.trajectory))
        results = [res]
    else:
        results = run.timed("simulate", lattice_batch, cfg, args.n, args.seed, init, args.jobs)
    hist = final_histogram(results, cfg.lattice.cols, cfg.lattice.rows)
    run.write(args.out, hist.to_csv())
    term: dict[str, int] = {}
    for r in results:
        term[r.termination.value] = term.get(r.termination.value, 0) + 1
    run.extra["terminations"] = dict(sorted(term.items()))
    run.manifest()
    if term.get("aborted"):
        raise NumericalAbort(f"{term['aborted']} lattice trial(s) aborted")
    return EXIT_OK


def cmd_markov_estimate(args) -> int:
    cfg = _config(args, lattice_config())
    run = Run(args, cfg)
    m = run.timed("estimate", estimate_transition_matrix, cfg, args.trials, args.seed, jobs=args.jobs,
                  centre=args.centre)
    run.write(args.out, m.to_json())
    run.extra["clamps"] = m.clamps
    run.manifest()
    return EXIT_OK


def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def cmd_markov_predict(args) -> int:
    try:
        matrix = TransitionMatrix.from_json(_read(args.matrix))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad transition matrix file: {exc}") from exc
    cfg = _config(args, lattice_config())
    run = Run(args, cfg)
    q, _ = _entry(args, cfg)
    lat = cfg.lattice
    res = run.timed("mcmc", mcmc_run, matrix, discretize_input(q), args.n, args.seed, args.max_steps or lat.max_gates,
                    lat.cols, lat.rows)
    run.write(args.out, res.histogram.to_csv())
    run.extra["terminations"] = dict(sorted(res.terminations.items()))
    run.extra["initial_input"] = discretize_input(q)
    run.manifest()
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        a, b = Histogram.from_csv(_read(args.a)), Histogram.from_csv(_read(args.b))
    except ValueError as exc:
        raise ConfigError(f"bad histogram file: {exc}") from exc
    run = Run(args, None)
    corr, rmse = compare_distributions(a, b)
    doc = {"a": {"path": args.a, **a.to_json()}, "b": {"path": args.b, **b.to_json()},
           "corrcoef": None if corr != corr else corr, "rmse": rmse}
    run.write(args.out, json.dumps(doc, indent=1) + "\n")
    # wall-clock of the producing runs lives in their manifests; copied into ours only
    for key, path in (("a", args.a), ("b", args.b)):
        man = Path(path + ".manifest.json")
        if man.is_file():
            run.timings[f"{key}_source"] = json.loads(man.read_text()).get("timings_seconds", {}).get("total")
    run.manifest()
    print(json.dumps({"corrcoef": doc["corrcoef"], "rmse": rmse}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gatesim", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, jobs=False):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
        sp.add_argument("--out", required=True, help="primary output file")
        if seed:
            sp.add_argument("--seed", type=int, required=True, help="master seed")
        if jobs:
            sp.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes")

    def entry(sp):
        sp.add_argument("--d", type=float, default=0.0, help="entry position along EN (m)")
        sp.add_argument("--vx", type=float, default=0.0)
        sp.add_argument("--vy", type=float, default=15.0)

    sp = sub.add_parser("gate-run", help="one single-gate trial -> trajectory JSONL")
    common(sp)
    sp.add_argument("--record-every", type=int, default=1)
    sp.add_argument("--overlay", help="also write landscape energy along the trajectory (CSV)")
    sp.add_argument("--with-propulsion", action="store_true", help="include propulsive potential in the overlay")
    sp.set_defaults(func=cmd_gate_run)

    sp = sub.add_parser("gate-sweep", help="traversal statistics over parameter axes -> CSV")
    common(sp, jobs=True)
    sp.add_argument("--preset", choices=("symmetric", "asymmetric"), default="symmetric")
    sp.add_argument("--axis", action="append", metavar="KEY=a,b,c|start:step:stop")
    sp.add_argument("--n", type=int, default=100, help="trials per cell")
    sp.set_defaults(func=cmd_gate_sweep)

    sp = sub.add_parser("landscape", help="potential energy grid -> CSV")
    common(sp, seed=False)
    sp.add_argument("--spacing", type=float, default=0.5)
    sp.add_argument("--no-propulsion", action="store_true")
    sp.set_defaults(func=cmd_landscape)

    sp = sub.add_parser("lattice-run", help="dynamic obstacle-field trials -> final-location histogram CSV")
    common(sp, jobs=True)
    entry(sp)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--trajectory", help="run a single trial and write its trajectory JSONL here")
    sp.add_argument("--record-every", type=int, default=1)
    sp.set_defaults(func=cmd_lattice_run)

    sp = sub.add_parser("markov-estimate", help="estimate the transition matrix -> JSON")
    common(sp, jobs=True)
    sp.add_argument("--trials", type=int, default=100, help="trials per input state")
    sp.add_argument("--centre", action="store_true", help="start at bin centres instead of uniform draws")
    sp.set_defaults(func=cmd_markov_estimate)

    sp = sub.add_parser("markov-predict", help="MCMC final-location histogram -> CSV")
    common(sp)
    entry(sp)
    sp.add_argument("--matrix", required=True)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--max-steps", type=int, default=None, help="transition budget (default: lattice_max_gates)")
    sp.set_defaults(func=cmd_markov_predict)

    sp = sub.add_parser("compare", help="corrcoef and RMSE of two histograms -> JSON")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_compare, seed=None)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"gatesim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbort as exc:
        print(f"gatesim: numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except OSError as exc:
        print(f"gatesim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
