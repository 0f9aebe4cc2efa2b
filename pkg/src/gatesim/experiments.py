"""Monte Carlo batches and parameter sweeps over single-gate trials."""

from __future__ import annotations

import csv
import io
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dynamics import Outcome, Trajectory, TrialOutcome, require_f_prop, run_trial
from .model import ConfigError, SimConfig


class Side:
    LEFT = "L"
    RIGHT = "R"


def side_from_angles(max_theta1: float, max_theta2: float) -> str:
    """Left when the left beam was pushed further; an exact tie goes Right."""
    return Side.LEFT if max_theta1 > max_theta2 else Side.RIGHT


def classify_side(trial: Trajectory | TrialOutcome, success_y: float = 65.0) -> str:
    """Which beam the body pushed across, from the maximum deflection of each beam.

    Accepts either a recorded trajectory or a ``TrialOutcome``; both must
    describe a successful traversal.
    """
    if isinstance(trial, TrialOutcome):
        if trial.outcome is not Outcome.TRAVERSED:
            raise ValueError(f"cannot classify a {trial.outcome.value} trial")
        return side_from_angles(*trial.max_theta)
    if len(trial) == 0 or trial.rows[-1][2] < success_y:
        raise ValueError("trajectory does not reach the success height")
    return side_from_angles(float(trial.column("theta1").max()), float(trial.column("theta2").max()))


def trial_seed(master_seed: int, cell: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(cell), int(trial)])


@dataclass
class CellResult:
    params: dict
    n: int
    traversed_left: int = 0
    traversed_right: int = 0
    exited_left: int = 0
    exited_right: int = 0
    trapped: int = 0
    aborted: int = 0
    master_seed: int = 0
    cell: int = 0

    @property
    def traversed(self) -> int:
        return self.traversed_left + self.traversed_right

    @property
    def valid(self) -> int:
        """Trials counted in probability denominators (numerical aborts excluded)."""
        return self.n - self.aborted

    @property
    def p_traverse(self) -> float:
        return self.traversed / self.valid if self.valid else math.nan

    @property
    def right_ratio(self) -> float:
        """Right-type traversals over all traversals; NaN when nothing traversed."""
        return self.traversed_right / self.traversed if self.traversed else math.nan

    def sigma(self) -> float:
        p = self.p_traverse
        return math.sqrt(p * (1 - p) / self.valid) if self.valid else math.nan

    def add(self, out: TrialOutcome) -> None:
        o = out.outcome
        if o is Outcome.TRAVERSED:
            if side_from_angles(*out.max_theta) == Side.LEFT:
                self.traversed_left += 1
            else:
                self.traversed_right += 1
        elif o is Outcome.EXITED_LEFT:
            self.exited_left += 1
        elif o is Outcome.EXITED_RIGHT:
            self.exited_right += 1
        elif o is Outcome.TRAPPED:
            self.trapped += 1
        else:
            self.aborted += 1


def _run_one(args) -> TrialOutcome:
    config, seq = args
    _, out = run_trial(config, seq, record_every=None)
    return out


def default_jobs() -> int:
    return os.cpu_count() or 1


def _map(fn, items: list, jobs: int | None):
    jobs = default_jobs() if jobs is None else jobs
    if jobs <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def run_batch(config: SimConfig, n: int, master_seed: int, *, cell: int = 0,
              params: Mapping | None = None, jobs: int | None = 1) -> CellResult:
    """Run ``n`` independent trials seeded from ``(master_seed, cell, i)``."""
    if n < 1:
        raise ConfigError("trial count (n) must be >= 1")
    require_f_prop(config)
    result = CellResult(dict(params or {}), n, master_seed=master_seed, cell=cell)
    outs = _map(_run_one, [(config, trial_seed(master_seed, cell, i)) for i in range(n)], jobs)
    for out in outs:
        result.add(out)
    return result


SWEEP_COLUMNS = ("cell", "n", "traversed", "traversed_left", "traversed_right", "exited_left",
                 "exited_right", "trapped", "aborted", "p_traverse", "right_ratio", "master_seed")


@dataclass
class SweepResult:
    axes: dict
    cells: list = field(default_factory=list)
    master_seed: int = 0

    def lookup(self, **params) -> CellResult:
        for c in self.cells:
            if all(c.params.get(k) == v for k, v in params.items()):
                return c
        raise KeyError(params)

    def matrix(self, row_axis: str, col_axis: str, value: str = "p_traverse", **fixed) -> np.ndarray:
        """Tabulate a per-cell quantity on two axes, other axes pinned by ``fixed``."""
        rows, cols = self.axes[row_axis], self.axes[col_axis]
        out = np.full((len(rows), len(cols)), np.nan)
        for i, r in enumerate(rows):
            for j, c in enumerate(cols):
                out[i, j] = getattr(self.lookup(**{row_axis: r, col_axis: c}, **fixed), value)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.axes)
        w.writerow(names + list(SWEEP_COLUMNS))
        for c in self.cells:
            vals = [c.cell, c.n, c.traversed, c.traversed_left, c.traversed_right, c.exited_left,
                    c.exited_right, c.trapped, c.aborted, _fmt(c.p_traverse), _fmt(c.right_ratio), c.master_seed]
            w.writerow([_fmt(c.params[a]) for a in names] + vals)
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def sweep(template: SimConfig, axes: Mapping[str, Sequence], n: int, master_seed: int,
          jobs: int | None = 1, progress=None) -> SweepResult:
    """Cartesian product of flat-key axes; each cell gets its own seed stream."""
    if not axes or any(len(v) == 0 for v in axes.values()):
        raise ConfigError("sweep needs at least one non-empty axis")
    names = list(axes)
    combos = list(itertools.product(*(axes[k] for k in names)))
    configs = [template.with_values(**dict(zip(names, combo))) for combo in combos]
    for cfg in configs:
        require_f_prop(cfg)
    tasks = [(cfg, trial_seed(master_seed, ci, i)) for ci, cfg in enumerate(configs) for i in range(n)]
    outs = _map(_run_one, tasks, jobs)
    res = SweepResult({k: list(axes[k]) for k in names}, master_seed=master_seed)
    for ci, combo in enumerate(combos):
        cell = CellResult(dict(zip(names, combo)), n, master_seed=master_seed, cell=ci)
        for out in outs[ci * n:(ci + 1) * n]:
            cell.add(out)
        res.cells.append(cell)
        if progress:
            progress(cell)
    return res


SYMMETRIC_AXES = {"F_prop": [4.0, 5.0, 6.0, 7.0, 8.0, 9.0], "Rm": [0.0, 10.0, 20.0, 30.0, 40.0]}
ASYMMETRIC_AXES = {"k_L": [100.0 + 50.0 * i for i in range(9)], "Rm": [10.0, 20.0, 30.0, 40.0, 50.0, 60.0]}


def parse_axis(text: str) -> tuple[str, list[float]]:
    """``name=a,b,c`` or ``name=start:step:stop`` (inclusive)."""
    name, sep, spec = text.partition("=")
    if not sep or not name:
        raise ConfigError(f"bad axis {text!r}; expected name=values")
    try:
        if ":" in spec:
            a, s, b = (float(p) for p in spec.split(":"))
            if s <= 0:
                raise ValueError
            count = int(math.floor((b - a) / s + 1e-9)) + 1
            values = [a + s * i for i in range(count)]
        else:
            values = [float(p) for p in spec.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"bad axis values in {text!r}") from None
    if not values:
        raise ConfigError(f"axis {name!r} has no values")
    return name.strip(), values

