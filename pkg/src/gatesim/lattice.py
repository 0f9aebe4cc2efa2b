"""Obstacle field of identical gates: region bookkeeping and multi-gate trials.

Gate ``(i_x, i_y)`` occupies global ``X in [50 i_x - 25, 50 i_x + 25]`` and
``Y in [60 i_y, 60 i_y + 60]``. Only the gate holding the body is simulated;
its beams start at rest whenever the body enters.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .dynamics import _MODES, GateSim, RandomForce, require_f_prop
from .model import GateGeometry, Mode, SimConfig, SystemState

LATTICE_START_VELOCITY = (0.0, 15.0)


@dataclass(frozen=True, order=True)
class GateIndex:
    ix: int
    iy: int

    def inside(self, cols: int = 9, rows: int = 9) -> bool:
        half = cols // 2
        return -half <= self.ix <= half and 0 <= self.iy < rows

    def moved(self, dx: int, dy: int) -> "GateIndex":
        return GateIndex(self.ix + dx, self.iy + dy)


class Crossing(str, enum.Enum):
    TOP = "top"
    LEFT = "left"
    RIGHT = "right"
    BOTTOM = "bottom"


_SHIFT = {Crossing.TOP: (0, 1), Crossing.LEFT: (-1, 0), Crossing.RIGHT: (1, 0), Crossing.BOTTOM: (0, -1)}


def gate_width(geometry: GateGeometry) -> float:
    return 2.0 * geometry.half_width


def to_global(x: float, y: float, index: GateIndex, geometry: GateGeometry | None = None) -> tuple[float, float]:
    g = geometry or GateGeometry()
    return x + gate_width(g) * index.ix, y + g.region_height * index.iy


def to_local(X: float, Y: float, index: GateIndex | None = None,
             geometry: GateGeometry | None = None) -> tuple[GateIndex, float, float]:
    """Inverse of ``to_global``; the gate is inferred from the position unless given."""
    g = geometry or GateGeometry()
    w = gate_width(g)
    if index is None:
        index = GateIndex(int(math.floor((X + g.half_width) / w)), int(math.floor(Y / g.region_height)))
    return index, X - w * index.ix, Y - g.region_height * index.iy


def detect_crossing(x: float, y: float, geometry: GateGeometry) -> Crossing | None:
    """Region boundary the body centre is beyond; checked top, left, right, bottom."""
    if y > geometry.region_height:
        return Crossing.TOP
    if x < -geometry.half_width:
        return Crossing.LEFT
    if x > geometry.half_width:
        return Crossing.RIGHT
    if y < 0.0:
        return Crossing.BOTTOM
    return None


@dataclass(frozen=True)
class Remap:
    index: GateIndex
    state: SystemState
    exited: bool  # new gate would lie outside the lattice; index is then the old gate


def remap_crossing(state: SystemState, index: GateIndex, config: SimConfig | None = None,
                   crossing: Crossing | None = None) -> Remap:
    """Move a body that left its gate region into the neighbouring gate.

    Velocities carry over; beams of the new gate are at rest. ``crossing``
    defaults to the side reported by ``detect_crossing``.
    """
    cfg = config or SimConfig()
    g = cfg.geometry
    if crossing is None:
        crossing = detect_crossing(state.x, state.y, g)
    if crossing is None:
        raise ValueError("body is inside the gate region; nothing to remap")
    dx, dy = _SHIFT[crossing]
    new = index.moved(dx, dy)
    if not new.inside(cfg.lattice.cols, cfg.lattice.rows):
        return Remap(index, state, True)
    moved = replace(state, x=state.x - gate_width(g) * dx, y=state.y - g.region_height * dy,
                    theta=(0.0, 0.0), omega=(0.0, 0.0), mode=(Mode.FREE, Mode.FREE))
    return Remap(new, moved, False)


@dataclass
class GateExit:
    crossing: Crossing | None
    steps: int
    state: SystemState
    aborted: bool = False

    @property
    def trapped(self) -> bool:
        return self.crossing is None and not self.aborted


def run_gate(config: SimConfig, initial: SystemState, force: RandomForce, *, step_offset: int = 0,
             max_steps: int | None = None, record=None, record_every: int = 1) -> GateExit:
    """Integrate one gate until the body leaves its region or ``max_steps`` elapse.

    ``force`` is indexed by ``step_offset + n`` so a field-wide random sequence
    continues across gates. ``record(sim)`` is called every ``record_every`` steps.
    """
    g = config.geometry
    limit = config.numerics.max_steps if max_steps is None else max_steps
    sim = GateSim(config, initial)
    if record:
        record(sim)
    top, hw = g.region_height, g.half_width
    for n in range(1, limit + 1):
        if not sim.step(force(step_offset + n - 1)):
            if record:
                record(sim)
            return GateExit(None, n, sim.state(), aborted=True)
        x, y = sim.x, sim.y
        crossed = y > top or x < -hw or x > hw or y < 0.0
        if record and (crossed or n % record_every == 0):
            record(sim)
        if crossed:
            return GateExit(detect_crossing(x, y, g), n, sim.state())
    return GateExit(None, limit, sim.state())


LATTICE_FIELDS = ("t", "i_x", "i_y", "x", "y", "X", "Y", "vx", "vy",
                  "theta1", "omega1", "theta2", "omega2", "mode1", "mode2")


@dataclass
class LatticeTrajectory:
    rows: list = field(default_factory=list)

    def recorder(self, index: GateIndex, geometry: GateGeometry):
        w, h = gate_width(geometry), geometry.region_height

        def rec(sim: GateSim):
            self.rows.append((sim.t, index.ix, index.iy, sim.x, sim.y, sim.x + w * index.ix,
                              sim.y + h * index.iy, sim.vx, sim.vy, sim.theta[0], sim.omega[0],
                              sim.theta[1], sim.omega[1], _MODES[sim.mode[0]].value, _MODES[sim.mode[1]].value))
        return rec

    def column(self, name: str) -> np.ndarray:
        i = LATTICE_FIELDS.index(name)
        return np.array([r[i] for r in self.rows])

    def records(self):
        for r in self.rows:
            yield dict(zip(LATTICE_FIELDS, r))


class Termination(str, enum.Enum):
    EXITED_LATTICE = "exited_lattice"
    EXITED_BOTTOM = "exited_bottom"
    TRAPPED = "trapped"
    GATE_BUDGET = "gate_budget"
    STEP_BUDGET = "step_budget"
    ABORTED = "aborted"


@dataclass
class LatticeResult:
    final: GateIndex
    termination: Termination
    gates: list
    steps: int
    trajectory: LatticeTrajectory | None = None


def lattice_initial_state(x: float = 0.0, y: float = 0.0,
                          velocity: tuple[float, float] = LATTICE_START_VELOCITY) -> SystemState:
    return SystemState(0.0, float(x), float(y), float(velocity[0]), float(velocity[1]))


def run_lattice_trial(config: SimConfig, seed, initial: SystemState | None = None, *,
                      start: GateIndex = GateIndex(0, 0), record_every: int | None = None) -> LatticeResult:
    """Carry one body across the field until it leaves, gets trapped, or a budget runs out.

    A body leaving through the bottom of a gate stops in that gate: neither the
    gate lattice nor the Markov state space has an entry from above.
    """
    require_f_prop(config)
    cfg = config
    lat = cfg.lattice
    state = initial or lattice_initial_state()
    force = seed if isinstance(seed, RandomForce) else RandomForce(seed, cfg.forcing.Rm, cfg.forcing.f, cfg.numerics.dt)
    traj = LatticeTrajectory() if record_every else None
    index = start
    gates = [index]
    total = 0
    while True:
        budget = lat.max_total_steps - total
        limit = min(cfg.numerics.max_steps, budget)
        rec = traj.recorder(index, cfg.geometry) if traj is not None else None
        ex = run_gate(cfg, state, force, step_offset=total, max_steps=limit, record=rec,
                      record_every=record_every or 1)
        total += ex.steps
        if ex.aborted:
            term = Termination.ABORTED
            break
        if ex.crossing is None:
            term = Termination.TRAPPED if limit == cfg.numerics.max_steps else Termination.STEP_BUDGET
            break
        if ex.crossing is Crossing.BOTTOM:
            term = Termination.EXITED_BOTTOM
            break
        moved = remap_crossing(ex.state, index, cfg, ex.crossing)
        if moved.exited:
            term = Termination.EXITED_LATTICE
            break
        index, state = moved.index, moved.state
        gates.append(index)
        if len(gates) > lat.max_gates:
            term = Termination.GATE_BUDGET
            break
        if total >= lat.max_total_steps:
            term = Termination.STEP_BUDGET
            break
    return LatticeResult(index, term, gates, total, traj)


@dataclass
class Histogram:
    """Final-location counts; ``counts[i_y, i_x + cols // 2]``."""

    counts: np.ndarray

    @classmethod
    def empty(cls, cols: int = 9, rows: int = 9) -> "Histogram":
        return cls(np.zeros((rows, cols), dtype=np.int64))

    @property
    def cols(self) -> int:
        return self.counts.shape[1]

    @property
    def rows(self) -> int:
        return self.counts.shape[0]

    @property
    def ix_values(self) -> list[int]:
        half = self.cols // 2
        return list(range(-half, half + 1))

    def add(self, index: GateIndex, count: int = 1) -> None:
        self.counts[index.iy, index.ix + self.cols // 2] += count

    def count(self, ix: int, iy: int) -> int:
        return int(self.counts[iy, ix + self.cols // 2])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i_y"] + [str(v) for v in self.ix_values])
        for iy in range(self.rows):
            w.writerow([iy] + [int(c) for c in self.counts[iy]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Histogram":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if not rows or rows[0][0] != "i_y":
            raise ValueError("not a histogram file (missing i_y header)")
        body = rows[1:]
        counts = np.zeros((len(body), len(rows[0]) - 1), dtype=np.int64)
        for r in body:
            counts[int(r[0])] = [int(v) for v in r[1:]]
        return cls(counts)

    def to_json(self) -> dict:
        return {"i_x": self.ix_values, "counts_by_i_y": self.counts.tolist()}


def final_histogram(finals: Iterable[GateIndex | LatticeResult], cols: int = 9, rows: int = 9) -> Histogram:
    h = Histogram.empty(cols, rows)
    for f in finals:
        h.add(f.final if isinstance(f, LatticeResult) else f)
    return h


def lattice_batch(config: SimConfig, n: int, master_seed: int, initial: SystemState | None = None,
                  jobs: int | None = 1) -> list[LatticeResult]:
    from .experiments import _map

    tasks = [(config, np.random.SeedSequence([int(master_seed), i]), initial) for i in range(n)]
    return _map(_lattice_one, tasks, jobs)


def _lattice_one(args) -> LatticeResult:
    config, seq, initial = args
    return run_lattice_trial(config, seq, initial)


def trajectory_jsonl(traj: LatticeTrajectory) -> str:
    return "".join(json.dumps(rec) + "\n" for rec in traj.records())
