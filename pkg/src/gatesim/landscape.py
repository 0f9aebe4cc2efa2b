"""Potential energy landscape over body position.

Beams are assumed deflected forward just enough to touch the body whenever it
is within reach (joint distance at most ``L + R``). The elastic energy of both
joints, optionally tilted by the propulsive potential ``F_prop * (y0 - y)``,
is tabulated on a regular mesh.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .model import GateGeometry, SimConfig

_CAP = math.pi / 2


@dataclass
class LandscapeGrid:
    x: np.ndarray
    y: np.ndarray
    elastic_left: np.ndarray   # shape (len(y), len(x))
    elastic_right: np.ndarray
    propulsive: np.ndarray
    capped: int = 0

    @property
    def elastic(self) -> np.ndarray:
        return self.elastic_left + self.elastic_right

    @property
    def total(self) -> np.ndarray:
        return self.elastic + self.propulsive

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "E_left", "E_right", "E_prop", "E_total"])
        tot = self.total
        for iy, yv in enumerate(self.y):
            for ix, xv in enumerate(self.x):
                w.writerow([repr(float(xv)), repr(float(yv)), repr(float(self.elastic_left[iy, ix])),
                            repr(float(self.elastic_right[iy, ix])), repr(float(self.propulsive[iy, ix])),
                            repr(float(tot[iy, ix]))])
        return buf.getvalue()


def beam_angle(px: float, py: float, R: float, L: float) -> tuple[float, bool]:
    """Forward deflection of one beam touching a disc centred at (px, py) in its joint frame.

    Returns ``(theta, capped)``; ``capped`` is set when the disc overlaps the
    joint and the angle is pinned to pi/2.
    """
    rho2 = px * px + py * py
    if rho2 < R * R:
        return _CAP, True
    rho = math.sqrt(rho2)
    if rho > L + R:
        return 0.0, False
    phi = math.atan2(py, px)
    if rho2 - R * R <= L * L:
        th = phi + math.asin(R / rho)
    else:
        th = phi + math.acos((rho2 + L * L - R * R) / (2.0 * L * rho))
    return max(th, 0.0), False


def deflection_angles(position, geometry: GateGeometry | None = None, R: float = 10.0,
                      L: tuple[float, float] = (25.0, 25.0)) -> tuple[float, float]:
    g = geometry or GateGeometry()
    x, y = position
    t1, _ = beam_angle(x + g.half_width, y - g.joint_y, R, L[0])
    t2, _ = beam_angle(g.half_width - x, y - g.joint_y, R, L[1])
    return t1, t2


def landscape_energy(position, k_L: float, k_R: float, F_prop: float = 0.0,
                     include_propulsion: bool = False, geometry: GateGeometry | None = None,
                     R: float = 10.0, L: tuple[float, float] = (25.0, 25.0)) -> float:
    g = geometry or GateGeometry()
    t1, t2 = deflection_angles(position, g, R, L)
    e = 0.5 * k_L * t1 * t1 + 0.5 * k_R * t2 * t2
    if include_propulsion:
        e += F_prop * (g.region_height - position[1])
    return e


def compute_grid(config: SimConfig, spacing: float = 0.5, include_propulsion: bool = True) -> LandscapeGrid:
    g = config.geometry
    R = config.body.R
    F = config.forcing.F_prop or 0.0
    nx = int(round(2 * g.half_width / spacing)) + 1
    ny = int(round(g.region_height / spacing)) + 1
    xs = np.linspace(-g.half_width, g.half_width, nx)
    ys = np.linspace(0.0, g.region_height, ny)
    el = np.zeros((ny, nx))
    er = np.zeros((ny, nx))
    capped = 0
    for iy, yv in enumerate(ys):
        for ix, xv in enumerate(xs):
            t1, c1 = beam_angle(xv + g.half_width, yv - g.joint_y, R, config.left.L)
            t2, c2 = beam_angle(g.half_width - xv, yv - g.joint_y, R, config.right.L)
            capped += c1 + c2
            el[iy, ix] = 0.5 * config.left.k * t1 * t1
            er[iy, ix] = 0.5 * config.right.k * t2 * t2
    prop = np.zeros_like(el)
    if include_propulsion:
        prop += F * (g.region_height - ys)[:, None]
    return LandscapeGrid(xs, ys, el, er, prop, capped)


@dataclass
class OverlayPoint:
    t: float
    x: float
    y: float
    full: float
    active: float


def trajectory_overlay(trajectory, config: SimConfig, include_propulsion: bool = False) -> list[OverlayPoint]:
    """Landscape energy along a trajectory, with and without inactive barriers.

    ``active`` drops the elastic term of any beam whose recorded mode is free
    at that instant.
    """
    g = config.geometry
    R = config.body.R
    F = config.forcing.F_prop or 0.0
    out = []
    for rec in trajectory.records():
        x, y = rec["x"], rec["y"]
        t1, _ = beam_angle(x + g.half_width, y - g.joint_y, R, config.left.L)
        t2, _ = beam_angle(g.half_width - x, y - g.joint_y, R, config.right.L)
        e1 = 0.5 * config.left.k * t1 * t1
        e2 = 0.5 * config.right.k * t2 * t2
        prop = F * (g.region_height - y) if include_propulsion else 0.0
        a1 = e1 if rec["mode1"] != "free" else 0.0
        a2 = e2 if rec["mode2"] != "free" else 0.0
        out.append(OverlayPoint(rec["t"], x, y, e1 + e2 + prop, a1 + a2 + prop))
    return out


def overlay_csv(points: list[OverlayPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "y", "E_full", "E_active"])
    for p in points:
        w.writerow([repr(p.t), repr(p.x), repr(p.y), repr(p.full), repr(p.active)])
    return buf.getvalue()


def minimax_barrier(grid: LandscapeGrid, y_start: float = 20.0, y_end: float = 58.0) -> float:
    """Lowest possible peak energy along any grid path from row ``y_start`` to row ``y_end``.

    Used only as a diagnostic of how hard a landscape is to cross.
    """
    import heapq

    tot = grid.total
    ny, nx = tot.shape
    i0 = int(np.argmin(abs(grid.y - y_start)))
    i1 = int(np.argmin(abs(grid.y - y_end)))
    best = np.full(tot.shape, np.inf)
    heap = []
    for ix in range(nx):
        best[i0, ix] = tot[i0, ix]
        heap.append((tot[i0, ix], i0, ix))
    heapq.heapify(heap)
    while heap:
        e, iy, ix = heapq.heappop(heap)
        if e > best[iy, ix]:
            continue
        if iy == i1:
            return float(e)
        for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            jy, jx = iy + dy, ix + dx
            if i0 <= jy <= i1 and 0 <= jx < nx:
                ne = max(e, tot[jy, jx])
                if ne < best[jy, jx]:
                    best[jy, jx] = ne
                    heapq.heappush(heap, (ne, jy, jx))
    return float("inf")
