"""Single-gate rigid-body dynamics.

A frictionless disc is pushed forward (+y) by a constant propulsive force and
sideways by a piecewise-constant Gaussian force while it interacts with two
torsion-sprung rigid beams. Contacts are resolved with impulses while the
exchanged momentum is large and with a velocity-level constraint once it
drops below ``epsilon``; the system is advanced with explicit Euler.

Every beam is handled in its own *joint frame*: origin at the joint, +x along
the beam at rest (pointing into the gate), +y forward. For the right beam the
frame is the mirror image of the left one, which makes the update exactly
mirror symmetric.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ConfigError, Mode, SimConfig, SystemState

FREE, COLLIDING, TANGENTIAL, POINT = 0, 1, 2, 3
_MODES = (Mode.FREE, Mode.COLLIDING, Mode.TANGENTIAL, Mode.POINT)
_MODE_CODES = {m: i for i, m in enumerate(_MODES)}

MAX_COLLISION_ITERATIONS = 10
_MIN_LEVER = 1e-6


class ContactKind(str, enum.Enum):
    NONE = "none"
    TANGENTIAL = "tangential"
    POINT = "point"


@dataclass(frozen=True)
class ContactInfo:
    """Contact between the body and one beam, in gate-local coordinates.

    ``normal`` points from the beam towards the body centre. ``r`` is the
    joint-to-contact distance sqrt(|p|^2 - R^2) (tangential contacts only);
    ``foot`` is the projection of the body centre on the beam axis, which
    equals ``r`` at exact tangency.
    """

    kind: ContactKind
    point: tuple[float, float] | None = None
    normal: tuple[float, float] | None = None
    r: float | None = None
    foot: float | None = None
    gap: float | None = None


@dataclass(frozen=True)
class CollisionResult:
    v: tuple[float, float]
    omega: float
    impulse: float


def _frame(beam: int) -> float:
    if beam not in (0, 1):
        raise ValueError(f"beam index must be 0 (left) or 1 (right), got {beam}")
    return 1.0 if beam == 0 else -1.0


def contact_geometry(position, beam: int, theta: float, geometry, R: float, L: float = 25.0) -> ContactInfo:
    sx = _frame(beam)
    jx = -geometry.half_width if beam == 0 else geometry.half_width
    px = sx * (position[0] - jx)
    py = position[1] - geometry.joint_y
    c, s = math.cos(theta), math.sin(theta)
    foot = px * c + py * s
    h = -px * s + py * c
    if foot < 0:
        return ContactInfo(ContactKind.NONE)
    if foot <= L:
        if abs(h) > R:
            return ContactInfo(ContactKind.NONE)
        side = 1.0 if h > 0 else -1.0
        nx, ny = -side * s, side * c
        point = (jx + sx * foot * c, geometry.joint_y + foot * s)
        r = math.sqrt(max(px * px + py * py - R * R, 0.0))
        return ContactInfo(ContactKind.TANGENTIAL, point, (sx * nx, ny), r, foot, abs(h) - R)
    dx, dy = px - L * c, py - L * s
    rho = math.hypot(dx, dy)
    if rho > R or rho == 0.0:
        return ContactInfo(ContactKind.NONE)
    point = (jx + sx * L * c, geometry.joint_y + L * s)
    return ContactInfo(ContactKind.POINT, point, (sx * dx / rho, dy / rho), None, foot, rho - R)


def collide_tangential(v_ni: float, omega_i: float, r: float, M: float, I: float, CoR: float):
    """Impulsive tangential collision; returns ``(v_nf, omega_f)``.

    Solves angular-momentum conservation about the joint together with the
    restitution law ``v_nf - r w_f = CoR (r w_i - v_ni)``. The tangential body
    velocity is untouched.
    """
    if r == 0:
        raise ValueError("lever arm r must be non-zero")
    closing = v_ni - r * omega_i
    omega_f = (M * r * v_ni + I * omega_i + M * r * CoR * closing) / (M * r * r + I)
    v_nf = r * omega_f - CoR * closing
    return v_nf, omega_f


def collide_point(v_i, omega_i: float, lever, normal, M: float, I: float) -> CollisionResult:
    """Perfectly elastic collision of the body with the beam tip.

    ``lever`` is the joint-to-tip vector and ``normal`` the unit contact normal
    (tip towards body centre). The impulse ``J * normal`` acts on the body and
    its reaction on the tip, so the system angular momentum about the joint is
    unchanged; of the two energy-conserving roots the separating one is used.
    """
    nx, ny = normal
    arm = lever[0] * ny - lever[1] * nx
    closing = v_i[0] * nx + v_i[1] * ny - arm * omega_i
    if closing >= 0:
        return CollisionResult((v_i[0], v_i[1]), omega_i, 0.0)
    J = -2.0 * closing / (1.0 / M + arm * arm / I)
    return CollisionResult((v_i[0] + J * nx / M, v_i[1] + J * ny / M), omega_i - J * arm / I, J)


class RandomForce:
    """Lateral force ``Rm * z`` with ``z ~ N(0, 1)``, resampled at frequency ``f``.

    The value is held between resamples (``round(1 / (f dt))`` steps). Samples
    are drawn lazily but cached, so the value for a step index never changes.
    """

    def __init__(self, rng: np.random.Generator | int | None, Rm: float, f: float, dt: float, sign: float = 1.0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.Rm = Rm
        self.sign = sign
        self.hold = max(1, round(1.0 / (f * dt))) if dt > 0 else 1
        self._stream = _NormalStream(rng)

    def __call__(self, step: int) -> float:
        if self.Rm == 0:
            return 0.0
        return self.sign * self.Rm * self._stream[step // self.hold]

    def mirrored(self) -> "RandomForce":
        """Same sample sequence with the opposite sign (the two share samples)."""
        out = RandomForce.__new__(RandomForce)
        out.Rm, out.hold, out._stream = self.Rm, self.hold, self._stream
        out.sign = -self.sign
        return out


class _NormalStream:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.z = np.empty(0)

    def __getitem__(self, k: int) -> float:
        if k >= len(self.z):
            extra = max(k + 1 - len(self.z), 256)
            self.z = np.concatenate([self.z, self.rng.standard_normal(extra)])
        return float(self.z[k])


def sample_random_force(rng, Rm: float, step_index: int, f: float, dt: float) -> float:
    """Functional form of ``RandomForce``; ``rng`` may be a seed or a ``RandomForce``."""
    source = rng if isinstance(rng, RandomForce) else RandomForce(rng, Rm, f, dt)
    return source(step_index)


@dataclass
class Diagnostics:
    collisions: int = 0
    switches: int = 0
    releases: int = 0
    singular: int = 0
    max_residual: float = 0.0
    constrained_steps: int = 0
    collision_energy: float = 0.0
    drag_loss: float = 0.0
    damping_loss: float = 0.0
    random_work: float = 0.0


class GateSim:
    """Mutable single-gate integrator. ``SystemState`` is the immutable view."""

    def __init__(self, config: SimConfig, state: SystemState | None = None):
        cfg = config
        self.config = cfg
        self.M = cfg.body.M
        self.R = cfg.body.R
        self.F_prop = cfg.F_prop
        self.D = cfg.forcing.D
        self.dt = cfg.numerics.dt
        self.cor = cfg.numerics.CoR
        self.eps = cfg.numerics.epsilon
        g = cfg.geometry
        self.jy = g.joint_y
        self.jx = (-g.half_width, g.half_width)
        self.sx = (1.0, -1.0)
        self.k = (cfg.left.k, cfg.right.k)
        self.d = (cfg.left.d, cfg.right.d)
        self.I = (cfg.left.I, cfg.right.I)
        self.L = (cfg.left.L, cfg.right.L)
        self.diag = Diagnostics()
        if state is None:
            state = SystemState(0.0, 0.0, cfg.initial_y, 0.0, cfg.numerics.v0)
        self.set_state(state)

    def set_state(self, state: SystemState) -> None:
        self.t, self.x, self.y, self.vx, self.vy = state.t, state.x, state.y, state.vx, state.vy
        self.theta = list(state.theta)
        self.omega = list(state.omega)
        self.mode = [_MODE_CODES[Mode(m)] for m in state.mode]
        self.side = [-1.0, -1.0]
        for j in (0, 1):
            if self.mode[j] >= TANGENTIAL:
                px, py = self._local(j)
                c, s = math.cos(self.theta[j]), math.sin(self.theta[j])
                self.side[j] = 1.0 if -px * s + py * c > 0 else -1.0
                if self._project(j) is None:
                    self._release(j)

    def state(self) -> SystemState:
        return SystemState(
            self.t, self.x, self.y, self.vx, self.vy,
            (self.theta[0], self.theta[1]), (self.omega[0], self.omega[1]),
            (_MODES[self.mode[0]], _MODES[self.mode[1]]),
        )

    def energy(self) -> float:
        """Kinetic + elastic + propulsive potential (zero at y = 0)."""
        e = 0.5 * self.M * (self.vx * self.vx + self.vy * self.vy) - self.F_prop * self.y
        for j in (0, 1):
            e += 0.5 * self.I[j] * self.omega[j] ** 2 + 0.5 * self.k[j] * self.theta[j] ** 2
        return e

    # -- geometry --------------------------------------------------------

    def _local(self, j):
        return self.sx[j] * (self.x - self.jx[j]), self.y - self.jy

    def _detect(self, j):
        """Contact of a non-constrained beam: (kind, gap, cx, cy, G) with c global, or None."""
        px, py = self._local(j)
        th = self.theta[j]
        c, s = math.cos(th), math.sin(th)
        foot = px * c + py * s
        if foot < 0:
            return None
        R = self.R
        h = -px * s + py * c
        L = self.L[j]
        if foot <= L:
            gap = abs(h) - R
            if gap > 0:
                return None
            side = 1.0 if h > 0 else -1.0
            return TANGENTIAL, gap, self.sx[j] * (-side * s), side * c, -side * foot, side
        dx, dy = px - L * c, py - L * s
        rho = math.hypot(dx, dy)
        gap = rho - R
        if gap > 0 or rho == 0.0:
            return None
        nx, ny = dx / rho, dy / rho
        side = 1.0 if h > 0 else -1.0
        return POINT, gap, self.sx[j] * nx, ny, -L * (-nx * s + ny * c), side

    def _constraint_row(self, j):
        """(cx, cy, G, bias) of the active constraint of beam j at the current state."""
        px, py = self._local(j)
        vx, vy = self.sx[j] * self.vx, self.vy
        th, w = self.theta[j], self.omega[j]
        c, s = math.cos(th), math.sin(th)
        sx = self.sx[j]
        if self.mode[j] == TANGENTIAL:
            side = self.side[j]
            r = px * c + py * s
            h = -px * s + py * c
            ve = vx * c + vy * s
            bias = side * (-2.0 * w * ve - w * w * h)
            return sx * (-side * s), side * c, -side * r, bias
        L = self.L[j]
        dx, dy = px - L * c, py - L * s
        rho = math.hypot(dx, dy)
        nx, ny = dx / rho, dy / rho
        nn = -nx * s + ny * c
        wx, wy = vx + L * w * s, vy - L * w * c
        u = nx * wx + ny * wy
        bias = L * w * w * (nx * c + ny * s) + (wx * wx + wy * wy - u * u) / rho
        return sx * nx, ny, -L * nn, bias

    def _project(self, j):
        """Move beam j onto exact contact and match its normal velocity.

        Returns the post-projection normal velocity residual, or None when the
        contact cannot be maintained (body out of reach or degenerate lever).
        """
        px, py = self._local(j)
        R, L = self.R, self.L[j]
        rho2 = px * px + py * py
        if rho2 <= R * R:
            return None
        rho = math.sqrt(rho2)
        phi = math.atan2(py, px)
        side = self.side[j]
        if rho2 - R * R <= L * L:
            self.mode[j] = TANGENTIAL
            th = phi - math.asin(side * R / rho)
        else:
            kappa = (rho2 + L * L - R * R) / (2.0 * L * rho)
            if kappa > 1.0:
                return None
            self.mode[j] = POINT
            th = phi - side * math.acos(kappa)
        self.theta[j] = th
        c, s = math.cos(th), math.sin(th)
        vx, vy = self.sx[j] * self.vx, self.vy
        if self.mode[j] == TANGENTIAL:
            r = px * c + py * s
            if r < _MIN_LEVER:
                return None
            vn = -vx * s + vy * c
            self.omega[j] = vn / r
            return abs(side * (vn - r * self.omega[j]))
        dx, dy = px - L * c, py - L * s
        nx, ny = dx / R, dy / R
        G = -L * (-nx * s + ny * c)
        if abs(G) < _MIN_LEVER * L:
            return None
        vdot = nx * vx + ny * vy
        self.omega[j] = -vdot / G
        return abs(vdot + G * self.omega[j])

    def _release(self, j):
        self.mode[j] = FREE
        self.diag.releases += 1

    # -- dynamics --------------------------------------------------------

    def accelerations(self, f_rand: float):
        """Body acceleration, beam angular accelerations and contact forces.

        Constrained beams contribute a compressive normal force chosen so the
        differentiated velocity constraint holds; a beam whose force would be
        tensile is released and the system re-solved.
        """
        fx = f_rand - self.D * self.vx
        fy = self.F_prop - self.D * self.vy
        M = self.M
        tau = [-self.k[j] * self.theta[j] - self.d[j] * self.omega[j] for j in (0, 1)]
        lam = [0.0, 0.0]
        rows = {}
        while True:
            active = [j for j in (0, 1) if self.mode[j] >= TANGENTIAL]
            if not active:
                break
            for j in active:
                if j not in rows:
                    rows[j] = self._constraint_row(j)
            A, rhs = {}, {}
            for j in active:
                cx, cy, G, b = rows[j]
                rhs[j] = -((cx * fx + cy * fy) / M + G * tau[j] / self.I[j] + b)
                for k in active:
                    ck = rows[k]
                    A[j, k] = (cx * ck[0] + cy * ck[1]) / M + (G * G / self.I[j] if j == k else 0.0)
            sol = _solve(active, A, rhs)
            if sol is None:
                for j in active:
                    self._release(j)
                    self.diag.singular += 1
                break
            tensile = [j for j in active if sol[j] < 0]
            if not tensile:
                for j in active:
                    lam[j] = sol[j]
                break
            for j in tensile:
                self._release(j)
        # contact terms are summed first so that left + right commutes exactly
        cfx = [0.0, 0.0]
        cfy = [0.0, 0.0]
        beta = [0.0, 0.0]
        for j in (0, 1):
            if lam[j] != 0.0:
                cx, cy, G, _ = rows[j]
                cfx[j] = lam[j] * cx
                cfy[j] = lam[j] * cy
                tau[j] += lam[j] * G
            beta[j] = tau[j] / self.I[j]
        ax = fx + (cfx[0] + cfx[1])
        ay = fy + (cfy[0] + cfy[1])
        return ax / M, ay / M, beta, lam

    def step(self, f_rand: float = 0.0) -> bool:
        """Advance one Euler step. Returns False on numerical blow-up."""
        dt = self.dt
        if dt == 0:
            return True
        ax, ay, beta, _ = self.accelerations(f_rand)
        diag = self.diag
        vx, vy = self.vx, self.vy
        diag.drag_loss += self.D * (vx * vx + vy * vy) * dt
        x_old = self.x
        for j in (0, 1):
            w = self.omega[j]
            diag.damping_loss += self.d[j] * w * w * dt
            self.theta[j] += w * dt
            self.omega[j] += beta[j] * dt
        self.x += vx * dt
        self.y += vy * dt
        self.vx += ax * dt
        self.vy += ay * dt
        self.t += dt
        self._contacts()
        diag.random_work += f_rand * (self.x - x_old)
        return math.isfinite(self.x + self.y + self.vx + self.vy + sum(self.theta) + sum(self.omega))

    def _contacts(self):
        diag = self.diag
        for j in (0, 1):
            if self.mode[j] == COLLIDING:
                self.mode[j] = FREE
        hits = {}
        for j in (0, 1):
            if self.mode[j] == FREE:
                info = self._detect(j)
                if info is not None:
                    hits[j] = info
        if hits:
            self._collide(hits)
            # push the body out of any remaining penetration from the same state
            dx = dy = 0.0
            for j, info in hits.items():
                if self.mode[j] == COLLIDING:
                    cur = self._detect(j)
                    if cur is not None and cur[1] < 0:
                        dx -= cur[1] * cur[2]
                        dy -= cur[1] * cur[3]
            self.x += dx
            self.y += dy
        for j in (0, 1):
            if self.mode[j] >= TANGENTIAL:
                res = self._project(j)
                if res is None:
                    self._release(j)
                    continue
                diag.constrained_steps += 1
                if res > diag.max_residual:
                    diag.max_residual = res

    def _collide(self, hits):
        """Resolve closing contacts jointly with restitution; switch small impulses."""
        diag = self.diag
        M = self.M
        for _ in range(MAX_COLLISION_ITERATIONS):
            rows = {}
            for j in (0, 1):
                if self.mode[j] >= TANGENTIAL:
                    cx, cy, G, _ = self._constraint_row(j)
                    rows[j] = (cx, cy, G, 0.0, self._normal_velocity(cx, cy, G, j))
                elif j in hits:
                    info = self._detect(j)
                    if info is None:
                        continue
                    kind, _, cx, cy, G, side = info
                    hits[j] = info
                    u = self._normal_velocity(cx, cy, G, j)
                    if u < 0:
                        rows[j] = (cx, cy, G, self.cor if kind == TANGENTIAL else 1.0, u)
            if not any(self.mode[j] < TANGENTIAL for j in rows):
                return
            active = sorted(rows)
            A, rhs = {}, {}
            for j in active:
                cx, cy, G, e, u = rows[j]
                rhs[j] = -(1.0 + e) * u
                for k in active:
                    A[j, k] = (cx * rows[k][0] + cy * rows[k][1]) / M + (G * G / self.I[j] if j == k else 0.0)
            sol = _solve_nonneg(active, A, rhs)
            ke0 = self._kinetic()
            px = [0.0, 0.0]
            py = [0.0, 0.0]
            for j in active:
                J = sol.get(j, 0.0)
                if J <= 0.0:
                    continue
                cx, cy, G, _, _ = rows[j]
                px[j] = J * cx
                py[j] = J * cy
                self.omega[j] += J * G / self.I[j]
            self.vx += (px[0] + px[1]) / M
            self.vy += (py[0] + py[1]) / M
            diag.collision_energy += self._kinetic() - ke0
            for j in active:
                if self.mode[j] >= TANGENTIAL:
                    continue
                J = sol.get(j, 0.0)
                if J <= 0.0:
                    continue
                diag.collisions += 1
                kind, side = hits[j][0], hits[j][5]
                if J < self.eps:
                    self.mode[j] = kind
                    self.side[j] = side
                    diag.switches += 1
                else:
                    self.mode[j] = COLLIDING

    def _normal_velocity(self, cx, cy, G, j):
        return cx * self.vx + cy * self.vy + G * self.omega[j]

    def _kinetic(self):
        return 0.5 * self.M * (self.vx ** 2 + self.vy ** 2) + sum(
            0.5 * self.I[j] * self.omega[j] ** 2 for j in (0, 1))


def _solve(active, A, rhs):
    if len(active) == 1:
        (j,) = active
        a = A[j, j]
        if a <= 0 or not math.isfinite(a):
            return None
        return {j: rhs[j] / a}
    i, j = active
    det = A[i, i] * A[j, j] - A[i, j] * A[j, i]
    scale = abs(A[i, i] * A[j, j]) or 1.0
    if abs(det) <= 1e-12 * scale:
        return None
    return {
        i: (A[j, j] * rhs[i] - A[i, j] * rhs[j]) / det,
        j: (A[i, i] * rhs[j] - A[j, i] * rhs[i]) / det,
    }


def _solve_nonneg(active, A, rhs):
    """Non-negative impulses for up to two contacts (tiny LCP by enumeration)."""
    current = list(active)
    while current:
        sol = _solve(current, A, rhs)
        if sol is None:
            # parallel normals: share the load equally
            total = sum(rhs[j] for j in current) / sum(A[j, j] for j in current)
            return {j: max(total / len(current), 0.0) for j in current}
        neg = [j for j in current if sol[j] < 0]
        if not neg:
            return sol
        current = [j for j in current if j not in neg]
    return {}


def constraint_step(state: SystemState, config: SimConfig, f_rand: float = 0.0):
    """Accelerations for ``state`` with its constrained contacts active.

    Returns ``(a, beta, forces)`` where ``a = (ax, ay)``, ``beta`` holds both
    beam angular accelerations and ``forces`` the compressive contact forces.
    Beams whose contact would be tensile are treated as free.
    """
    sim = GateSim(config, state)
    ax, ay, beta, lam = sim.accelerations(f_rand)
    return (ax, ay), tuple(beta), tuple(lam)


def step(state: SystemState, config: SimConfig, f_rand: float = 0.0) -> SystemState:
    sim = GateSim(config, state)
    sim.step(f_rand)
    return sim.state()


class Outcome(str, enum.Enum):
    TRAVERSED = "traversed"
    EXITED_LEFT = "exited_left"
    EXITED_RIGHT = "exited_right"
    TRAPPED = "trapped"
    ABORTED = "aborted"


TRAJECTORY_FIELDS = ("t", "x", "y", "vx", "vy", "theta1", "omega1", "theta2", "omega2", "mode1", "mode2")


@dataclass
class Trajectory:
    """Sampled states; one tuple per record in ``TRAJECTORY_FIELDS`` order (modes as codes)."""

    rows: list = field(default_factory=list)

    def append(self, sim: GateSim) -> None:
        self.rows.append((sim.t, sim.x, sim.y, sim.vx, sim.vy, sim.theta[0], sim.omega[0],
                          sim.theta[1], sim.omega[1], sim.mode[0], sim.mode[1]))

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[TRAJECTORY_FIELDS.index(name)] for r in self.rows])

    def records(self):
        for r in self.rows:
            rec = dict(zip(TRAJECTORY_FIELDS, r))
            rec["mode1"] = _MODES[r[9]].value
            rec["mode2"] = _MODES[r[10]].value
            yield rec


@dataclass
class TrialOutcome:
    outcome: Outcome
    steps: int
    final: SystemState
    diagnostics: Diagnostics
    max_theta: tuple[float, float] = (0.0, 0.0)


def run_trial(config: SimConfig, seed: int | np.random.Generator | None = None, *,
              initial: SystemState | None = None, force: RandomForce | None = None,
              record_every: int | None = 1) -> tuple[Trajectory, TrialOutcome]:
    """Simulate one trial until traversal, side exit, or the step budget runs out.

    ``record_every=None`` disables trajectory recording (faster for batches).
    """
    cfg = config
    sim = GateSim(cfg, initial)
    if force is None:
        force = RandomForce(seed, cfg.forcing.Rm, cfg.forcing.f, cfg.numerics.dt)
    traj = Trajectory()
    if record_every:
        traj.append(sim)
    hw = cfg.geometry.half_width
    y_goal = cfg.numerics.success_y
    max_th = [sim.theta[0], sim.theta[1]]
    outcome = Outcome.TRAPPED
    n = 0
    for n in range(1, cfg.numerics.max_steps + 1):
        if not sim.step(force(n - 1)):
            outcome = Outcome.ABORTED
            break
        th = sim.theta
        if th[0] > max_th[0]:
            max_th[0] = th[0]
        if th[1] > max_th[1]:
            max_th[1] = th[1]
        if record_every and n % record_every == 0:
            traj.append(sim)
        if sim.y >= y_goal:
            outcome = Outcome.TRAVERSED
        elif sim.x <= -hw:
            outcome = Outcome.EXITED_LEFT
        elif sim.x >= hw:
            outcome = Outcome.EXITED_RIGHT
        else:
            continue
        break
    if record_every and traj.rows[-1][0] != sim.t:
        traj.append(sim)
    return traj, TrialOutcome(outcome, n, sim.state(), sim.diag, (max_th[0], max_th[1]))


def require_f_prop(config: SimConfig) -> None:
    if config.forcing.F_prop is None:
        raise ConfigError("F_prop is required but was not set")
