"""Markov coarse-graining of gate-to-gate transport.

A body crossing a gate boundary is summarised as ``q = (B, d, v_x, v_y)``.
Inputs use 87 discrete states and outputs 88 (the last is "trapped"). Every
non-trapped output is identified with an input state of the neighbouring
gate, so a chain of sampled outputs walks across the lattice.

Index layout (1-based, as in the usual ``I_i`` / ``O_j`` notation):

========  =========  =======================================
inputs    states     grid (d x v_x x v_y)
========  =========  =======================================
EN        1-25       5 x 5 x 1
RD        26-55      2 x 3 x 5
LD        56-85      2 x 3 x 5
RT        86         single state
LT        87         single state
========  =========  =======================================

Outputs 1-25 are top crossings on the EN grid, 26-55 right crossings below
the joint on the neighbour's LD grid, 56-85 left crossings below the joint
on the neighbour's RD grid, 86/87 right/left crossings above the joint, and
88 trapped.
"""

from __future__ import annotations

import json
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .dynamics import RandomForce, require_f_prop
from .lattice import (Crossing, GateExit, GateIndex, Histogram, LatticeResult, lattice_initial_state,
                      run_gate, run_lattice_trial)
from .model import SimConfig, SystemState

N_INPUTS = 87
N_OUTPUTS = 88
TRAPPED = 88

_EN_EDGES = (-25.0, -15.0, -5.0, 5.0, 15.0, 25.0)
_SIDE_D = (10.0, 20.0, 30.0)
_SIDE_VY = (-20.0, -10.0, 0.0, 10.0, 20.0, 30.0)

# boundary -> (d edges, v_x edges, v_y edges)
BIN_EDGES: dict[str, tuple[tuple[float, ...], ...]] = {
    "EN": (_EN_EDGES, _EN_EDGES, (10.0, 20.0)),
    "RD": (_SIDE_D, (-30.0, -20.0, -10.0, 0.0), _SIDE_VY),
    "LD": (_SIDE_D, (0.0, 10.0, 20.0, 30.0), _SIDE_VY),
}
# single-state boundaries are sampled from the matching below-joint box when estimating
SINGLE_BOX = {
    "RT": ((10.0, 30.0), (-30.0, 0.0), (-20.0, 30.0)),
    "LT": ((10.0, 30.0), (0.0, 30.0), (-20.0, 30.0)),
}
INPUT_OFFSET = {"EN": 0, "RD": 25, "LD": 55, "RT": 85, "LT": 86}
BOUNDARIES = ("EN", "RD", "LD", "RT", "LT", "MT")
_DIMS = ("d", "v_x", "v_y")


class ClampCounter(Counter):
    """Counts of values clamped into the outermost bin, keyed ``"<boundary>.<dim>"``."""


@dataclass(frozen=True)
class BoundaryState:
    boundary: str
    d: float
    v_x: float
    v_y: float

    def __post_init__(self):
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary {self.boundary!r}")


def _bin(value: float, edges, key: str, clamps: Counter | None) -> int:
    n = len(edges) - 1
    if value < edges[0] or value > edges[-1] or not math.isfinite(value):
        if clamps is not None:
            clamps[key] += 1
        return 0 if not value > edges[0] else n - 1
    # half-open bins [a, b), last one closed
    for i in range(n - 1):
        if value < edges[i + 1]:
            return i
    return n - 1


def grid_index(grid: str, d: float, v_x: float, v_y: float, clamps: Counter | None = None,
               label: str | None = None) -> int:
    """0-based position of ``(d, v_x, v_y)`` within one boundary grid (d slowest)."""
    edges = BIN_EDGES[grid]
    label = label or grid
    i = [_bin(v, e, f"{label}.{name}", clamps) for v, e, name in zip((d, v_x, v_y), edges, _DIMS)]
    nv_x, nv_y = len(edges[1]) - 1, len(edges[2]) - 1
    return (i[0] * nv_x + i[1]) * nv_y + i[2]


def discretize_input(q: BoundaryState, clamps: Counter | None = None) -> int:
    """Input index in 1..87; values outside the bin catalog clamp to the nearest bin."""
    if q.boundary == "MT":
        raise ValueError("MT is an output-only boundary")
    if q.boundary in SINGLE_BOX:
        return INPUT_OFFSET[q.boundary] + 1
    return INPUT_OFFSET[q.boundary] + grid_index(q.boundary, q.d, q.v_x, q.v_y, clamps) + 1


@dataclass(frozen=True)
class InputBox:
    index: int
    boundary: str
    d: tuple[float, float]
    v_x: tuple[float, float]
    v_y: tuple[float, float]

    @property
    def centre(self) -> tuple[float, float, float]:
        return tuple(0.5 * (a + b) for a, b in (self.d, self.v_x, self.v_y))


def input_box(index: int) -> InputBox:
    """The (d, v_x, v_y) box aggregated by an input state."""
    if not 1 <= index <= N_INPUTS:
        raise ValueError(f"input index {index} outside 1..{N_INPUTS}")
    for b in ("LT", "RT"):
        if index == INPUT_OFFSET[b] + 1:
            return InputBox(index, b, *SINGLE_BOX[b])
    b = "EN" if index <= 25 else ("RD" if index <= 55 else "LD")
    k = index - 1 - INPUT_OFFSET[b]
    e_d, e_vx, e_vy = BIN_EDGES[b]
    nvx, nvy = len(e_vx) - 1, len(e_vy) - 1
    i_d, rest = divmod(k, nvx * nvy)
    i_vx, i_vy = divmod(rest, nvy)
    return InputBox(index, b, (e_d[i_d], e_d[i_d + 1]), (e_vx[i_vx], e_vx[i_vx + 1]),
                    (e_vy[i_vy], e_vy[i_vy + 1]))


def input_catalog() -> list[InputBox]:
    return [input_box(i) for i in range(1, N_INPUTS + 1)]


def boundary_state_to_local(q: BoundaryState, config: SimConfig | None = None) -> SystemState:
    """Gate-local state of a body sitting on the entry boundary described by ``q``."""
    g = (config or SimConfig()).geometry
    if q.boundary == "EN":
        x, y = q.d, 0.0
    elif q.boundary in ("LD", "LT"):
        x = -g.half_width
        y = g.joint_y - q.d if q.boundary == "LD" else g.joint_y + q.d
    elif q.boundary in ("RD", "RT"):
        x = g.half_width
        y = g.joint_y - q.d if q.boundary == "RD" else g.joint_y + q.d
    else:
        raise ValueError("MT is an output-only boundary")
    return SystemState(0.0, x, y, q.v_x, q.v_y)


def sample_input_state(index: int, rng: np.random.Generator, config: SimConfig | None = None,
                       centre: bool = False) -> SystemState:
    """Uniform draw within the input box (or its centre) as a gate-local state."""
    box = input_box(index)
    if centre:
        d, vx, vy = box.centre
    else:
        d, vx, vy = (rng.uniform(lo, hi) for lo, hi in (box.d, box.v_x, box.v_y))
    return boundary_state_to_local(BoundaryState(box.boundary, float(d), float(vx), float(vy)), config)


def crossing_state(exit: GateExit, config: SimConfig | None = None) -> BoundaryState | None:
    """Boundary description of the exit point; None when the body did not cross."""
    g = (config or SimConfig()).geometry
    s = exit.state
    c = exit.crossing
    if c is None or c is Crossing.BOTTOM:
        return None
    if c is Crossing.TOP:
        return BoundaryState("MT", s.x, s.vx, s.vy)
    side = "R" if c is Crossing.RIGHT else "L"
    if s.y < g.joint_y:
        return BoundaryState(side + "D", g.joint_y - s.y, s.vx, s.vy)
    return BoundaryState(side + "T", s.y - g.joint_y, s.vx, s.vy)


def classify_output(exit: GateExit, config: SimConfig | None = None, clamps: Counter | None = None) -> int:
    """Output index in 1..88.

    Top crossings bin on the EN grid, right/left crossings below the joint on
    the LD/RD grid of the neighbour they enter. A trapped, aborted or
    bottom-exit trial is output 88.
    """
    q = crossing_state(exit, config)
    if q is None:
        return TRAPPED
    if q.boundary == "MT":
        return grid_index("EN", q.d, q.v_x, q.v_y, clamps, "MT") + 1
    if q.boundary == "RD":
        return 25 + grid_index("LD", q.d, q.v_x, q.v_y, clamps, "RD") + 1
    if q.boundary == "LD":
        return 55 + grid_index("RD", q.d, q.v_x, q.v_y, clamps, "LD") + 1
    return 86 if q.boundary == "RT" else 87


def next_input(output: int) -> tuple[int, int, int] | None:
    """``(input index, d_ix, d_iy)`` in the neighbouring gate, or None for trapped."""
    if not 1 <= output <= N_OUTPUTS:
        raise ValueError(f"output index {output} outside 1..{N_OUTPUTS}")
    if output == TRAPPED:
        return None
    if output <= 25:
        return output, 0, 1
    if output <= 55:
        return output + 30, 1, 0
    if output <= 85:
        return output - 30, -1, 0
    if output == 86:
        return 87, 1, 0
    return 86, -1, 0


@dataclass
class TransitionMatrix:
    counts: np.ndarray  # (87, 88) int
    trials_per_state: int = 0
    master_seed: int = 0
    fingerprint: str = ""
    clamps: dict = field(default_factory=dict)
    degenerate: list = field(default_factory=list)
    aborted: int = 0
    exited_bottom: int = 0

    @property
    def visits(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def zero_rows(self) -> list[int]:
        return [int(i) + 1 for i in np.flatnonzero(self.visits == 0)]

    @property
    def probabilities(self) -> np.ndarray:
        v = self.visits.astype(float)
        p = np.zeros(self.counts.shape)
        ok = v > 0
        p[ok] = self.counts[ok] / v[ok, None]
        return p

    def row(self, index: int) -> np.ndarray:
        return self.probabilities[index - 1]

    def to_json(self) -> str:
        doc = {
            "format": "gate-transition-matrix/1",
            "n_inputs": N_INPUTS,
            "n_outputs": N_OUTPUTS,
            "config_fingerprint": self.fingerprint,
            "trials_per_state": self.trials_per_state,
            "master_seed": self.master_seed,
            "inputs": [{"index": b.index, "boundary": b.boundary, "d": list(b.d), "v_x": list(b.v_x),
                        "v_y": list(b.v_y)} for b in input_catalog()],
            "visits": [int(v) for v in self.visits],
            "counts": self.counts.tolist(),
            "probabilities": self.probabilities.tolist(),
            "zero_visit_rows": self.zero_rows,
            "degenerate_rows": list(self.degenerate),
            "clamps": dict(sorted(self.clamps.items())),
            "aborted_trials": self.aborted,
            "bottom_exits": self.exited_bottom,
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TransitionMatrix":
        doc = json.loads(text)
        if doc.get("format") != "gate-transition-matrix/1":
            raise ValueError("not a transition matrix file")
        counts = np.array(doc["counts"], dtype=np.int64)
        if counts.shape != (N_INPUTS, N_OUTPUTS) or (counts < 0).any():
            raise ValueError(f"transition counts must be a non-negative {N_INPUTS}x{N_OUTPUTS} table")
        return cls(counts, doc.get("trials_per_state", 0), doc.get("master_seed", 0),
                   doc.get("config_fingerprint", ""), dict(doc.get("clamps", {})),
                   list(doc.get("degenerate_rows", [])), doc.get("aborted_trials", 0),
                   doc.get("bottom_exits", 0))

    @classmethod
    def from_probabilities(cls, probs: np.ndarray, scale: int = 10**6) -> "TransitionMatrix":
        """Build from an explicit row-stochastic table (counts are ``round(p * scale)``)."""
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (N_INPUTS, N_OUTPUTS):
            raise ValueError(f"expected a {N_INPUTS}x{N_OUTPUTS} table")
        return cls(np.rint(probs * scale).astype(np.int64))


def _estimate_row(args):
    config, index, n, master_seed, centre = args
    counts = np.zeros(N_OUTPUTS, dtype=np.int64)
    clamps: Counter = Counter()
    aborted = bottom = 0
    for t in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([int(master_seed), index, t]))
        start = sample_input_state(index, rng, config, centre)
        force = RandomForce(rng, config.forcing.Rm, config.forcing.f, config.numerics.dt)
        ex = run_gate(config, start, force)
        aborted += ex.aborted
        bottom += ex.crossing is Crossing.BOTTOM
        counts[classify_output(ex, config, clamps) - 1] += 1
    return index, counts, clamps, aborted, bottom


def estimate_transition_matrix(config: SimConfig, trials_per_state: int = 100, master_seed: int = 0, *,
                               inputs: Iterable[int] | None = None, centre: bool = False,
                               jobs: int | None = 1) -> TransitionMatrix:
    """Row ``i`` holds output frequencies of single-gate trials started in input box ``i``.

    ``inputs`` restricts estimation to some rows (others stay unvisited);
    ``centre`` starts every trial at the box centre instead of a uniform draw.
    """
    from .experiments import _map

    if trials_per_state < 1:
        raise ValueError("trials_per_state must be >= 1")
    require_f_prop(config)
    rows = sorted(set(inputs)) if inputs is not None else list(range(1, N_INPUTS + 1))
    results = _map(_estimate_row, [(config, i, trials_per_state, master_seed, centre) for i in rows], jobs)
    counts = np.zeros((N_INPUTS, N_OUTPUTS), dtype=np.int64)
    clamps: Counter = Counter()
    degenerate, aborted, bottom = [], 0, 0
    for index, row, cl, ab, bo in results:
        counts[index - 1] = row
        clamps.update(cl)
        aborted += ab
        bottom += bo
        if ab == trials_per_state:
            degenerate.append(index)
    return TransitionMatrix(counts, trials_per_state, master_seed, config.fingerprint(), dict(clamps),
                            degenerate, aborted, bottom)


@dataclass
class MCMCResult:
    histogram: Histogram
    terminations: Counter
    paths: list | None = None


def mcmc_run(matrix: TransitionMatrix, initial_input: int, n: int, seed, max_steps: int = 13,
             cols: int = 9, rows: int = 9, start: GateIndex = GateIndex(0, 0),
             keep_paths: bool = False) -> MCMCResult:
    """Sample gate-to-gate chains and histogram where they stop.

    A chain stops on the trapped output, when the next gate would be outside
    the lattice, on an unvisited row, or after ``max_steps`` transitions.
    """
    if not 1 <= initial_input <= N_INPUTS:
        raise ValueError(f"input index {initial_input} outside 1..{N_INPUTS}")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(matrix.probabilities, axis=1)
    cum[:, -1] = np.where(matrix.visits > 0, 1.0, 0.0)
    live = matrix.visits > 0
    nxt = [next_input(o) for o in range(1, N_OUTPUTS + 1)]
    half = cols // 2
    hist = Histogram.empty(cols, rows)
    reasons: Counter = Counter()
    paths = [] if keep_paths else None
    for _ in range(n):
        ix, iy, state = start.ix, start.iy, initial_input
        path = [(ix, iy)]
        reason = "step_budget"
        for _ in range(max_steps):
            if not live[state - 1]:
                reason = "unvisited_row"
                break
            o = int(np.searchsorted(cum[state - 1], rng.random(), side="right"))
            step = nxt[min(o, N_OUTPUTS - 1)]
            if step is None:
                reason = "trapped"
                break
            state, dx, dy = step
            if not (-half <= ix + dx <= half and 0 <= iy + dy < rows):
                reason = "exited_lattice"
                break
            ix, iy = ix + dx, iy + dy
            path.append((ix, iy))
        hist.add(GateIndex(ix, iy))
        reasons[reason] += 1
        if paths is not None:
            paths.append(path)
    return MCMCResult(hist, reasons, paths)


def compare_distributions(a, b) -> tuple[float, float]:
    """``(corrcoef, RMSE)`` over flattened grids; corrcoef is NaN for a constant grid."""
    A = np.asarray(getattr(a, "counts", a), dtype=float).ravel()
    B = np.asarray(getattr(b, "counts", b), dtype=float).ravel()
    if A.shape != B.shape:
        raise ValueError("histograms differ in shape")
    rmse = float(np.sqrt(np.mean((A - B) ** 2)))
    if A.std() == 0 or B.std() == 0:
        return math.nan, rmse
    return float(np.corrcoef(A, B)[0, 1]), rmse


def en_state(d: float, v_x: float, v_y: float) -> BoundaryState:
    return BoundaryState("EN", d, v_x, v_y)


@dataclass
class Comparison:
    initial: BoundaryState
    mcmc: Histogram
    dynamic: Histogram
    corrcoef: float
    rmse: float
    mcmc_seconds: float
    dynamic_seconds: float

    def to_json(self, include_timings: bool = True) -> str:
        doc = {
            "initial": {"boundary": self.initial.boundary, "d": self.initial.d, "v_x": self.initial.v_x,
                        "v_y": self.initial.v_y},
            "mcmc": self.mcmc.to_json(),
            "dynamic": self.dynamic.to_json(),
            "corrcoef": None if math.isnan(self.corrcoef) else self.corrcoef,
            "rmse": self.rmse,
        }
        if include_timings:
            doc["seconds"] = {"mcmc": self.mcmc_seconds, "dynamic": self.dynamic_seconds}
        return json.dumps(doc, indent=1) + "\n"


def dynamic_histogram(config: SimConfig, initial: BoundaryState, n: int, master_seed: int,
                      jobs: int | None = 1) -> tuple[Histogram, list[LatticeResult]]:
    from .lattice import final_histogram, lattice_batch

    start = boundary_state_to_local(initial, config)
    results = lattice_batch(config, n, master_seed, lattice_initial_state(start.x, start.y, (start.vx, start.vy)), jobs)
    return final_histogram(results, config.lattice.cols, config.lattice.rows), results


def compare_methods(config: SimConfig, matrix: TransitionMatrix, initial: BoundaryState, n: int = 100,
                    master_seed: int = 0, jobs: int | None = 1) -> Comparison:
    """MCMC prediction against full dynamic lattice runs from the same entry state."""
    lat = config.lattice
    t0 = time.perf_counter()
    pred = mcmc_run(matrix, discretize_input(initial), n, np.random.SeedSequence([int(master_seed), 1]),
                    lat.max_gates, lat.cols, lat.rows)
    t1 = time.perf_counter()
    dyn, _ = dynamic_histogram(config, initial, n, master_seed, jobs)
    t2 = time.perf_counter()
    corr, rmse = compare_distributions(pred.histogram, dyn)
    return Comparison(initial, pred.histogram, dyn, corr, rmse, t1 - t0, t2 - t1)


# entry states of the four benchmark comparisons: (d, v_x, v_y) on EN
BENCHMARK_STARTS = ((0.0, 0.0, 15.0), (23.0, -11.0, 16.0), (4.0, 5.0, 10.0), (-17.0, 13.0, 12.0))

