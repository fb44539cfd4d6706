"""Numba kernels for the planar walker's rigid-body dynamics.

Every point of interest is the hip plus a chain of rigidly rotating vectors
``R(alpha_j) r_j`` whose angles are sums of generalised coordinates, so the
point Jacobian and the velocity-product (centripetal) bias have closed forms:

    dp/dq_i = sum_j perp(R r_j) * S_j[i],   bias = -sum_j (R r_j) * alpha_dot_j^2

The mass matrix is assembled from the link Jacobians, the system is solved
with a dense Cholesky factorisation, and time is advanced with semi-implicit
Euler.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# packed geometry indices (see model.GEOM_FIELDS)
G_TORSO_COM, G_L1, G_C1, G_L2, G_C2, G_FCX, G_FCZ, G_HEEL, G_TOE, G_SOLE = range(10)
# joint table rows
J_LO, J_HI, J_TAU, J_KP, J_KD, J_DAMP, J_ARM, J_VMAX = range(8)
# ground vector
GR_G, GR_K, GR_C, GR_CT, GR_MU, GR_FIXED = range(6)

NDOF = 9


@njit(cache=True, inline="always")
def _rot(a, px, pz):
    c = np.cos(a)
    s = np.sin(a)
    return px * c - pz * s, px * s + pz * c


@njit(cache=True)
def _leg_point(q, qd, o, level, lx, lz, geom, J, bias, pos):
    """Hip-relative point on leg ``o`` (joint offset 3 or 6).

    ``level`` 1 = thigh frame, 2 = shank frame, 3 = foot frame; ``(lx, lz)``
    is the point in that frame. Fills J (2x9), bias (2) and pos (2).
    """
    for i in range(NDOF):
        J[0, i] = 0.0
        J[1, i] = 0.0
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    bias[0] = 0.0
    bias[1] = 0.0
    pos[0] = q[0]
    pos[1] = q[1]
    a = q[2] + q[o]
    ad = qd[2] + qd[o]
    # (col, sign) lists grow with each level
    for lev in range(1, level + 1):
        if lev == 1:
            rx, rz = (0.0, -geom[G_L1]) if level > 1 else (lx, lz)
        elif lev == 2:
            a = a - q[o + 1]
            ad = ad - qd[o + 1]
            rx, rz = (0.0, -geom[G_L2]) if level > 2 else (lx, lz)
        else:
            a = a + q[o + 2]
            ad = ad + qd[o + 2]
            rx, rz = lx, lz
        wx, wz = _rot(a, rx, rz)
        pos[0] += wx
        pos[1] += wz
        bias[0] -= wx * ad * ad
        bias[1] -= wz * ad * ad
        px, pz = -wz, wx
        J[0, 2] += px
        J[1, 2] += pz
        J[0, o] += px
        J[1, o] += pz
        if lev >= 2:
            J[0, o + 1] -= px
            J[1, o + 1] -= pz
        if lev >= 3:
            J[0, o + 2] += px
            J[1, o + 2] += pz


@njit(cache=True)
def _add_body(M, Q, J, bias, m, inertia, q_angle_cols, n_cols, o, g):
    for i in range(NDOF):
        ji0 = J[0, i]
        ji1 = J[1, i]
        if ji0 == 0.0 and ji1 == 0.0:
            continue
        for k in range(NDOF):
            M[i, k] += m * (ji0 * J[0, k] + ji1 * J[1, k])
        Q[i] += -m * g * ji1 - m * (ji0 * bias[0] + ji1 * bias[1])
    # rotational inertia: angle = q2 + q_o (- q_o+1) (+ q_o+2)
    for a in range(n_cols):
        ia, sa = q_angle_cols[a, 0], q_angle_cols[a, 1]
        for b in range(n_cols):
            ib, sb = q_angle_cols[b, 0], q_angle_cols[b, 1]
            M[ia, ib] += inertia * sa * sb


@njit(cache=True)
def _angle_cols(o, level, out):
    out[0, 0] = 2
    out[0, 1] = 1
    if level == 0:
        return 1
    out[1, 0] = o
    out[1, 1] = 1
    if level == 1:
        return 2
    out[2, 0] = o + 1
    out[2, 1] = -1
    if level == 2:
        return 3
    out[3, 0] = o + 2
    out[3, 1] = 1
    return 4


@njit(cache=True)
def _torso_point(q, qd, dist, J, bias, pos):
    for i in range(NDOF):
        J[0, i] = 0.0
        J[1, i] = 0.0
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    a = q[2]
    ad = qd[2]
    wx, wz = _rot(a, 0.0, dist)
    pos[0] = q[0] + wx
    pos[1] = q[1] + wz
    bias[0] = -wx * ad * ad
    bias[1] = -wz * ad * ad
    J[0, 2] = -wz
    J[1, 2] = wx


@njit(cache=True)
def _assemble(q, qd, tau, geom, masses, inertias, jnt, ground, M, Q, J, bias, pos, cols, contact):
    """Mass matrix and generalised forces (gravity, bias, contact, joint). Returns PE."""
    g = ground[GR_G]
    M[:, :] = 0.0
    Q[:] = 0.0
    pe = 0.0
    _torso_point(q, qd, geom[G_TORSO_COM], J, bias, pos)
    nc = _angle_cols(0, 0, cols)
    _add_body(M, Q, J, bias, masses[0], inertias[0], cols, nc, 0, g)
    pe += masses[0] * g * pos[1]
    for leg in range(2):
        o = 3 + 3 * leg
        # thigh, shank, foot COMs
        _leg_point(q, qd, o, 1, 0.0, -geom[G_C1], geom, J, bias, pos)
        nc = _angle_cols(o, 1, cols)
        _add_body(M, Q, J, bias, masses[1], inertias[1], cols, nc, o, g)
        pe += masses[1] * g * pos[1]
        _leg_point(q, qd, o, 2, 0.0, -geom[G_C2], geom, J, bias, pos)
        nc = _angle_cols(o, 2, cols)
        _add_body(M, Q, J, bias, masses[2], inertias[2], cols, nc, o, g)
        pe += masses[2] * g * pos[1]
        _leg_point(q, qd, o, 3, geom[G_FCX], geom[G_FCZ], geom, J, bias, pos)
        nc = _angle_cols(o, 3, cols)
        _add_body(M, Q, J, bias, masses[3], inertias[3], cols, nc, o, g)
        pe += masses[3] * g * pos[1]
        contact[leg] = 0.0
        for p in range(2):
            lx = geom[G_HEEL] if p == 0 else geom[G_TOE]
            _leg_point(q, qd, o, 3, lx, geom[G_SOLE], geom, J, bias, pos)
            z = pos[1]
            if z < 0.0:
                vx = 0.0
                vz = 0.0
                for i in range(NDOF):
                    vx += J[0, i] * qd[i]
                    vz += J[1, i] * qd[i]
                fz, fx = contact_force_scalar(z, vz, vx, ground[GR_K], ground[GR_C], ground[GR_CT], ground[GR_MU])
                pe += 0.5 * ground[GR_K] * z * z
                if fz > 0.0:
                    contact[leg] = 1.0
                for i in range(NDOF):
                    Q[i] += J[0, i] * fx + J[1, i] * fz
    for j in range(6):
        M[3 + j, 3 + j] += jnt[J_ARM, j]
        Q[3 + j] += tau[j] - jnt[J_DAMP, j] * qd[3 + j]
    if ground[GR_FIXED] > 0.5:
        for i in range(3):
            for k in range(NDOF):
                M[i, k] = 0.0
                M[k, i] = 0.0
            M[i, i] = 1.0
            Q[i] = 0.0
    return pe


@njit(cache=True, inline="always")
def contact_force_scalar(z, vz, vx, k, c, ct, mu):
    """Penalty normal force and Coulomb-clamped viscous friction; returns (fz, fx)."""
    if z >= 0.0:
        return 0.0, 0.0
    fz = -k * z - c * vz
    if fz <= 0.0:
        return 0.0, 0.0
    lim = mu * fz
    fx = -ct * vx
    if fx > lim:
        fx = lim
    elif fx < -lim:
        fx = -lim
    return fz, fx


@njit(cache=True)
def _cholesky(M, L):
    n = M.shape[0]
    for i in range(n):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]


@njit(cache=True)
def _solve_factored(L, b, x):
    n = L.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * x[k]
        x[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]


@njit(cache=True)
def _cholesky_solve(M, b, L, x):
    _cholesky(M, L)
    _solve_factored(L, b, x)


@njit(cache=True)
def _limit_impulses(q, qd, jnt, h, L, e, y):
    """Inelastic joint-limit impulses so that no joint steps past its limit.

    A joint whose next position would leave its range gets the generalised
    impulse along ``M^-1 e_j`` that brings it exactly onto the limit. Such an
    impulse only reduces the joint's speed, so it never adds kinetic energy.
    """
    for _pass in range(2):
        for j in range(6):
            i = 3 + j
            lo = jnt[J_LO, j]
            hi = jnt[J_HI, j]
            nxt = q[i] + h * qd[i]
            if nxt < lo and qd[i] < 0.0:
                v_star = min(0.0, (lo - q[i]) / h)
            elif nxt > hi and qd[i] > 0.0:
                v_star = max(0.0, (hi - q[i]) / h)
            else:
                continue
            for k in range(NDOF):
                e[k] = 0.0
            e[i] = 1.0
            _solve_factored(L, e, y)
            c = (qd[i] - v_star) / y[i]
            for k in range(NDOF):
                qd[k] -= c * y[k]
            qd[i] = v_star


@njit(cache=True)
def step_batch(qpos, qvel, targets, geom, masses, inertias, jnt, ground, h, n_pd, n_sub,
               tau_out, contact_out, pd_ticks):
    """Advance every environment by ``n_pd`` PD ticks of ``n_sub`` physics substeps each.

    Torques are recomputed once per PD tick and held across its substeps.
    Arrays are updated in place; ``tau_out`` receives the last tick's torques.
    """
    n = qpos.shape[0]
    M = np.zeros((NDOF, NDOF))
    L = np.zeros((NDOF, NDOF))
    Q = np.zeros(NDOF)
    qdd = np.zeros(NDOF)
    J = np.zeros((2, NDOF))
    bias = np.zeros(2)
    pos = np.zeros(2)
    cols = np.zeros((4, 2), dtype=np.int64)
    tau = np.zeros(6)
    contact = np.zeros(2)
    ev = np.zeros(NDOF)
    yv = np.zeros(NDOF)
    for e in range(n):
        q = qpos[e]
        qd = qvel[e]
        for _ in range(n_pd):
            for j in range(6):
                t = jnt[J_KP, j] * (targets[e, j] - q[3 + j]) - jnt[J_KD, j] * qd[3 + j]
                lim = jnt[J_TAU, j]
                vmax = jnt[J_VMAX, j]
                if vmax > 0.0 and t * qd[3 + j] > 0.0:
                    # servo torque-speed line: full stall torque at rest, none at no-load speed
                    lim *= max(0.0, 1.0 - abs(qd[3 + j]) / vmax)
                if t > lim:
                    t = lim
                elif t < -lim:
                    t = -lim
                tau[j] = t
            pd_ticks[e] += 1
            for _s in range(n_sub):
                _assemble(q, qd, tau, geom, masses, inertias, jnt, ground, M, Q, J, bias, pos, cols, contact)
                _cholesky_solve(M, Q, L, qdd)
                for i in range(NDOF):
                    qd[i] += h * qdd[i]
                _limit_impulses(q, qd, jnt, h, L, ev, yv)
                for i in range(NDOF):
                    q[i] += h * qd[i]
                # guard against round-off only; the impulses already keep q in range
                for j in range(6):
                    if q[3 + j] < jnt[J_LO, j]:
                        q[3 + j] = jnt[J_LO, j]
                    elif q[3 + j] > jnt[J_HI, j]:
                        q[3 + j] = jnt[J_HI, j]
        for j in range(6):
            tau_out[e, j] = tau[j]
        contact_out[e, 0] = contact[0]
        contact_out[e, 1] = contact[1]


@njit(cache=True)
def mechanical_energy(qpos, qvel, geom, masses, inertias, jnt, ground):
    """Kinetic + gravitational + contact-spring energy for each row."""
    n = qpos.shape[0]
    out = np.zeros(n)
    M = np.zeros((NDOF, NDOF))
    Q = np.zeros(NDOF)
    J = np.zeros((2, NDOF))
    bias = np.zeros(2)
    pos = np.zeros(2)
    cols = np.zeros((4, 2), dtype=np.int64)
    tau = np.zeros(6)
    contact = np.zeros(2)
    for e in range(n):
        pe = _assemble(qpos[e], qvel[e], tau, geom, masses, inertias, jnt, ground, M, Q, J, bias, pos, cols, contact)
        ke = 0.0
        for i in range(NDOF):
            for k in range(NDOF):
                ke += 0.5 * qvel[e, i] * M[i, k] * qvel[e, k]
        out[e] = ke + pe
    return out


@njit(cache=True)
def accelerations(qpos, qvel, tau, geom, masses, inertias, jnt, ground):
    """Generalised accelerations for given states and joint torques (no limits applied)."""
    n = qpos.shape[0]
    out = np.zeros((n, NDOF))
    M = np.zeros((NDOF, NDOF))
    L = np.zeros((NDOF, NDOF))
    Q = np.zeros(NDOF)
    J = np.zeros((2, NDOF))
    bias = np.zeros(2)
    pos = np.zeros(2)
    cols = np.zeros((4, 2), dtype=np.int64)
    contact = np.zeros(2)
    x = np.zeros(NDOF)
    for e in range(n):
        _assemble(qpos[e], qvel[e], tau[e], geom, masses, inertias, jnt, ground, M, Q, J, bias, pos, cols, contact)
        _cholesky_solve(M, Q, L, x)
        out[e] = x
    return out


@njit(cache=True)
def _points(q, geom, out):
    qd = np.zeros(NDOF)
    J = np.zeros((2, NDOF))
    bias = np.zeros(2)
    pos = np.zeros(2)
    for leg in range(2):
        o = 3 + 3 * leg
        for p in range(2):
            lx = geom[G_HEEL] if p == 0 else geom[G_TOE]
            _leg_point(q, qd, o, 3, lx, geom[G_SOLE], geom, J, bias, pos)
            out[2 * leg + p, 0] = pos[0]
            out[2 * leg + p, 1] = pos[1]


def contact_points(qpos, geom) -> np.ndarray:
    """World positions of (heel_L, toe_L, heel_R, toe_R) for one configuration."""
    out = np.zeros((4, 2))
    _points(np.asarray(qpos, dtype=float), np.asarray(geom, dtype=float), out)
    return out


@njit(cache=True)
def _link_points(q, geom, out):
    qd = np.zeros(NDOF)
    J = np.zeros((2, NDOF))
    bias = np.zeros(2)
    pos = np.zeros(2)
    for leg in range(2):
        o = 3 + 3 * leg
        _leg_point(q, qd, o, 1, 0.0, -geom[G_L1], geom, J, bias, pos)
        out[3 * leg, 0] = pos[0]
        out[3 * leg, 1] = pos[1]
        _leg_point(q, qd, o, 2, 0.0, -geom[G_L2], geom, J, bias, pos)
        out[3 * leg + 1, 0] = pos[0]
        out[3 * leg + 1, 1] = pos[1]
        _leg_point(q, qd, o, 3, geom[G_TOE], geom[G_SOLE], geom, J, bias, pos)
        out[3 * leg + 2, 0] = pos[0]
        out[3 * leg + 2, 1] = pos[1]


def link_points(qpos, geom) -> np.ndarray:
    """(knee, ankle, toe) for each leg, world frame; used for drawing and tests."""
    out = np.zeros((6, 2))
    _link_points(np.asarray(qpos, dtype=float), np.asarray(geom, dtype=float), out)
    return out
