"""Independent reference computations used by the tests.

Nothing here imports the package's dynamics; formulas are written out
directly so the tests compare two separate derivations.
"""

from __future__ import annotations

import math


def penalty_single_beam(x, y, vx, vy, theta, omega, *, F_prop, T=1.0, dt=1e-5, kp=1e6,
                        M=1.0, R=10.0, L=25.0, I=20.83, k=400.0, d=50.0, joint=(-25.0, 30.0),
                        sample_every=None):
    """Disc against one hinged beam with a stiff penalty contact.

    Frictionless contact force ``kp * penetration`` along the segment-to-centre
    direction, semi-implicit Euler. Returns a list of (t, x, y, theta).
    """
    jx, jy = joint
    n_steps = int(round(T / dt))
    out = [(0.0, x, y, theta)]
    every = sample_every or n_steps
    for i in range(1, n_steps + 1):
        c, s = math.cos(theta), math.sin(theta)
        px, py = x - jx, y - jy
        foot = min(max(px * c + py * s, 0.0), L)
        qx, qy = jx + foot * c, jy + foot * s  # closest beam point
        dx, dy = x - qx, y - qy
        dist = math.hypot(dx, dy)
        fx = fy = tau = 0.0
        if dist < R:
            f = kp * (R - dist)
            fx, fy = f * dx / dist, f * dy / dist
            # reaction on the beam at the closest point
            tau = -((qx - jx) * fy - (qy - jy) * fx)
        vx += (fx / M) * dt
        vy += ((fy + F_prop) / M) * dt
        omega += ((tau - k * theta - d * omega) / I) * dt
        x += vx * dt
        y += vy * dt
        theta += omega * dt
        if i % every == 0:
            out.append((i * dt, x, y, theta))
    return out


def tangential_collision(v_ni, omega_i, r, M, I, CoR):
    """Solve momentum about the joint plus the restitution law as a 2x2 system."""
    # M r v_nf + I w_f = M r v_ni + I w_i ;  v_nf - r w_f = -CoR (v_ni - r w_i)
    a11, a12, b1 = M * r, I, M * r * v_ni + I * omega_i
    a21, a22, b2 = 1.0, -r, -CoR * (v_ni - r * omega_i)
    det = a11 * a22 - a12 * a21
    return (b1 * a22 - a12 * b2) / det, (a11 * b2 - a21 * b1) / det


def point_collision(v, omega, lever, n, M, I):
    """Elastic tip impact: solve the energy quadratic for the separating root J."""
    a = lever[0] * n[1] - lever[1] * n[0]
    # J*n on the body, -lever x (J n) = -a J on the beam
    # 0.5 M |v + J n / M|^2 + 0.5 I (w - a J / I)^2 = E0  ->  J (J (1/M + a^2/I) + 2 (v.n - a w)) = 0
    J = -2.0 * (v[0] * n[0] + v[1] * n[1] - a * omega) / (1.0 / M + a * a / I)
    return (v[0] + J * n[0] / M, v[1] + J * n[1] / M), omega - a * J / I, J


def segment_distance(p, a, b):
    ax, ay = a
    bx, by = b
    px, py = p
    ux, uy = bx - ax, by - ay
    t = max(0.0, min(1.0, ((px - ax) * ux + (py - ay) * uy) / (ux * ux + uy * uy)))
    return math.hypot(px - ax - t * ux, py - ay - t * uy)
