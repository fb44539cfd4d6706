"""Open-loop gait references from sparse key frames.

A handful of key frames per step are placed by rule (no tuning), the body
is held at a fixed height, foot paths are interpolated with quintic Bezier
segments and converted to joint angles with planar two-link leg IK.

Angle conventions (planar, x forward, z up): a link at absolute angle
``a`` points along ``(sin a, -cos a)``, so positive hip pitch swings the
foot forward. Knee flexion is positive and bends the knee forward (the
shank rotates backward relative to the thigh). The foot sole pitch is
``hip - knee + ankle``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

JOINT_NAMES = ("q_hip_L", "q_knee_L", "q_ankle_L", "q_hip_R", "q_knee_R", "q_ankle_R")

_BINOM5 = np.array([1.0, 5.0, 10.0, 10.0, 5.0, 1.0])


class UnreachableError(ValueError):
    pass


@dataclass(frozen=True)
class LegGeometry:
    thigh: float
    shank: float

    @property
    def length(self) -> float:
        return self.thigh + self.shank


@dataclass(frozen=True)
class GaitParams:
    v_x: float
    step_period: float = 0.5
    lift_height: float = 0.0136
    body_height: float = 0.323
    # height of the interior lift frames, as a fraction of lift_height
    mid_lift_fraction: float = 0.6

    def __post_init__(self):
        if self.step_period <= 0:
            raise ValueError("step_period must be positive")
        if self.lift_height <= 0:
            raise ValueError("lift_height must be positive")
        if self.body_height <= 0:
            raise ValueError("body_height must be positive")
        if not 0.2 <= self.mid_lift_fraction <= 0.8:
            raise ValueError("mid_lift_fraction must lie in [0.2, 0.8] to keep the lift monotone")

    @property
    def step_length(self) -> float:
        return self.v_x * self.step_period

    @property
    def cycle_period(self) -> float:
        return 2.0 * self.step_period

    @classmethod
    def for_leg(cls, v_x: float, leg: LegGeometry, step_period: float = 0.5,
                lift_fraction: float = 0.04, height_fraction: float = 0.95) -> "GaitParams":
        return cls(
            v_x=v_x,
            step_period=step_period,
            lift_height=lift_fraction * leg.length,
            body_height=height_fraction * leg.length,
        )


@dataclass(frozen=True)
class CriticalFrame:
    """Key pose. ``body`` is in world coordinates, feet are relative to the hip."""

    phase: float
    body: tuple[float, float]
    left: tuple[float, float]
    right: tuple[float, float]


def bernstein5(s):
    s = np.asarray(s, dtype=float)
    k = np.arange(6)
    return _BINOM5 * (1.0 - s[..., None]) ** (5 - k) * s[..., None] ** k


def quintic_bezier_eval(control_points, s):
    """Evaluate a fifth-order Bezier curve with 6 control points at ``s`` in [0, 1]."""
    cp = np.asarray(control_points, dtype=float)
    if cp.shape[0] != 6:
        raise ValueError(f"need exactly 6 control points, got {cp.shape[0]}")
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0.0) or np.any(s_arr > 1.0):
        raise ValueError(f"bezier parameter outside [0, 1]: {s}")
    w = bernstein5(s_arr)
    return np.tensordot(w, cp, axes=([-1], [0]))


def build_critical_frames(params: GaitParams, leg: LegGeometry | None = None) -> list[CriticalFrame]:
    """Five key frames for one step with the left foot swinging.

    The stance foot slides back under the hip at ``-v_x`` while the swing foot
    travels from half a step behind to half a step ahead, peaking at
    ``lift_height`` mid-step. The next step is the left/right mirror image.
    """
    L = params.step_length
    h = params.lift_height
    z1 = params.mid_lift_fraction * h
    phases = (0.0, 0.25, 0.5, 0.75, 1.0)
    swing_x = (-L / 2, -L / 4, 0.0, L / 4, L / 2)
    swing_z = (0.0, z1, h, z1, 0.0)
    frames = []
    for i, ph in enumerate(phases):
        body = (params.v_x * params.step_period * ph, params.body_height)
        left = (swing_x[i], swing_z[i])
        right = (-swing_x[i], 0.0)
        frames.append(CriticalFrame(ph, body, left, right))
    if leg is not None:
        for fr in frames:
            for name, foot in (("left", fr.left), ("right", fr.right)):
                r = math.hypot(foot[0], foot[1] - params.body_height)
                if r > leg.length:
                    raise UnreachableError(
                        f"{name} foot target at step phase {fr.phase} is {r:.4f} m from the hip, "
                        f"beyond leg length {leg.length:.4f} m"
                    )
    return frames


def _tangents(y, dx, cyclic):
    """Knot slopes: central differences, zero at local extrema and free ends."""
    n = len(y)
    m = np.zeros(n)
    for k in range(n):
        if cyclic:
            prev, nxt = y[(k - 1) % n], y[(k + 1) % n]
        else:
            if k == 0 or k == n - 1:
                continue
            prev, nxt = y[k - 1], y[k + 1]
        if (y[k] - prev) * (nxt - y[k]) <= 0.0:
            continue
        m[k] = (nxt - prev) / (2.0 * dx)
    return m


def _segment_controls(y0, y1, m0, m1, dx):
    # keep the control polygon monotone so the curve cannot overshoot its knots
    budget = 2.5 * abs(y1 - y0)
    used = dx * (abs(m0) + abs(m1))
    if used > budget and used > 0.0:
        m0, m1 = m0 * budget / used, m1 * budget / used
    a, b = m0 * dx / 5.0, m1 * dx / 5.0
    return np.array([y0, y0 + a, y0 + 2 * a, y1 - 2 * b, y1 - b, y1])


class BezierSpline:
    """Piecewise quintic through uniformly spaced knots on ``[0, 1]``.

    Position and slope are continuous at knots and the second derivative is
    zero there (so it is continuous too). ``cyclic`` wraps the last knot
    back onto the first.
    """

    def __init__(self, knots, cyclic: bool):
        y = np.asarray(knots, dtype=float)
        self.cyclic = cyclic
        self.n_seg = len(y) if cyclic else len(y) - 1
        self.dx = 1.0 / self.n_seg
        m = _tangents(y, self.dx, cyclic)
        n = len(y)
        self.controls = np.stack([
            _segment_controls(y[k], y[(k + 1) % n], m[k], m[(k + 1) % n], self.dx)
            for k in range(self.n_seg)
        ])

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.cyclic:
            u = np.mod(u, 1.0)
        idx = np.clip(np.floor(u / self.dx).astype(int), 0, self.n_seg - 1)
        s = np.clip(u / self.dx - idx, 0.0, 1.0)
        w = bernstein5(s)
        return np.sum(w * self.controls[idx], axis=-1)

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        if self.cyclic:
            u = np.mod(u, 1.0)
        idx = np.clip(np.floor(u / self.dx).astype(int), 0, self.n_seg - 1)
        s = np.clip(u / self.dx - idx, 0.0, 1.0)
        c = self.controls[idx]
        d = 5.0 * np.diff(c, axis=-1)
        k = np.arange(5)
        binom4 = np.array([1.0, 4.0, 6.0, 4.0, 1.0])
        w = binom4 * (1.0 - s[..., None]) ** (4 - k) * s[..., None] ** k
        return np.sum(w * d, axis=-1) / self.dx


def _cycle_knots(params: GaitParams):
    """Left-foot x/z knots over a full cycle (left swing, then left stance)."""
    frames = build_critical_frames(params)
    swing = [fr.left for fr in frames]
    stance = [fr.right for fr in frames]
    xs = [p[0] for p in swing[:4]] + [p[0] for p in stance[:4]]
    zs = [p[1] for p in swing[:4]] + [p[1] for p in stance[:4]]
    return xs, zs


class FootPaths:
    """Hip-relative ankle paths for both feet over one gait cycle and the half step."""

    def __init__(self, params: GaitParams):
        self.params = params
        xs, zs = _cycle_knots(params)
        self.x = BezierSpline(xs, cyclic=True)
        self.z = BezierSpline(zs, cyclic=True)
        L = params.step_length
        h = params.lift_height
        z1 = params.mid_lift_fraction * h
        # half step from feet together: right foot swings to +L/2, left slides to -L/2
        self.pre_swing_x = BezierSpline([0.0, L / 8, L / 4, 3 * L / 8, L / 2], cyclic=False)
        self.pre_swing_z = BezierSpline([0.0, z1, h, z1, 0.0], cyclic=False)
        self.pre_stance_x = BezierSpline([0.0, -L / 8, -L / 4, -3 * L / 8, -L / 2], cyclic=False)

    def cycle(self, phase):
        """(left_xz, right_xz) at cycle phase; right is the left path half a cycle later."""
        phase = np.asarray(phase, dtype=float)
        left = np.stack([self.x(phase), self.z(phase)], axis=-1)
        right = np.stack([self.x(phase + 0.5), self.z(phase + 0.5)], axis=-1)
        return left, right

    def prefix(self, u):
        """Feet during the half step, ``u`` in [0, 1]."""
        u = np.asarray(u, dtype=float)
        left = np.stack([self.pre_stance_x(u), np.zeros_like(u)], axis=-1)
        right = np.stack([self.pre_swing_x(u), self.pre_swing_z(u)], axis=-1)
        return left, right


def leg_fk(angles, leg: LegGeometry):
    """Ankle position relative to the hip and the sole pitch, from (hip, knee, ankle)."""
    hip, knee, ankle = (np.asarray(a, dtype=float) for a in angles)
    shank = hip - knee
    x = leg.thigh * np.sin(hip) + leg.shank * np.sin(shank)
    z = -leg.thigh * np.cos(hip) - leg.shank * np.cos(shank)
    return x, z, shank + ankle


def leg_ik(x, z, leg: LegGeometry, pitch=0.0, tol: float = 1e-12):
    """Joint angles placing the ankle at ``(x, z)`` relative to the hip.

    The knee always bends forward (``knee >= 0``); the ankle keeps the sole at
    ``pitch``. Works elementwise on arrays.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    r2 = x * x + z * z
    r = np.sqrt(r2)
    if np.any(r > leg.length + tol) or np.any(r < abs(leg.thigh - leg.shank) - tol):
        bad = np.max(r) if np.any(r > leg.length + tol) else np.min(r)
        raise UnreachableError(f"ankle target at distance {bad:.6f} m outside leg reach")
    c = (r2 - leg.thigh**2 - leg.shank**2) / (2.0 * leg.thigh * leg.shank)
    knee = np.arccos(np.clip(c, -1.0, 1.0))
    target = np.arctan2(x, -z)
    hip = target + np.arctan2(leg.shank * np.sin(knee), leg.thigh + leg.shank * np.cos(knee))
    ankle = np.asarray(pitch, dtype=float) - hip + knee
    return hip, knee, ankle


def _feet_to_joints(left, right, params: GaitParams, leg: LegGeometry, where: str):
    out = []
    for foot, side in ((left, "left"), (right, "right")):
        try:
            out.append(np.stack(leg_ik(foot[..., 0], foot[..., 1] - params.body_height, leg), axis=-1))
        except UnreachableError as exc:
            raise UnreachableError(f"{side} leg during {where}: {exc}") from None
    return np.concatenate(out, axis=-1)


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """Joint-space reference: a half-step prefix followed by a repeating cycle.

    ``cycle`` holds samples at ``t = prefix_duration + k / rate``; ``prefix``
    holds samples at ``t = k / rate`` for ``t < prefix_duration``.
    """

    cycle: np.ndarray
    prefix: np.ndarray
    rate: float
    step_period: float
    params: GaitParams | None = None
    leg: LegGeometry | None = None
    meta: dict = field(default_factory=dict)

    @property
    def cycle_period(self) -> float:
        return len(self.cycle) / self.rate

    @property
    def prefix_duration(self) -> float:
        return len(self.prefix) / self.rate

    def phase(self, t):
        """Gait clock in [0, 1): runs 0.5 -> 1 over the half step, then cycles."""
        t = np.asarray(t, dtype=float)
        pre = 0.5 + 0.5 * t / self.prefix_duration if len(self.prefix) else t * 0
        cyc = np.mod((t - self.prefix_duration) / self.cycle_period, 1.0)
        out = np.where(t < self.prefix_duration, pre, cyc)
        return float(out) if out.ndim == 0 else out

    def initial_pose(self) -> np.ndarray:
        return (self.prefix[0] if len(self.prefix) else self.cycle[0]).copy()


def build_reference(params: GaitParams, leg: LegGeometry, rate: float = 50.0) -> ReferenceTrajectory:
    n_step = params.step_period * rate
    if abs(n_step - round(n_step)) > 1e-9:
        raise ValueError("step_period * rate must be an integer number of samples")
    n_step = int(round(n_step))
    build_critical_frames(params, leg)
    paths = FootPaths(params)
    n_cycle = 2 * n_step
    phase = np.arange(n_cycle) / n_cycle
    left, right = paths.cycle(phase)
    cycle = _feet_to_joints(left, right, params, leg, "cycle")
    u = np.arange(n_step) / n_step
    left, right = paths.prefix(u)
    prefix = _feet_to_joints(left, right, params, leg, "half step")
    return ReferenceTrajectory(cycle=cycle, prefix=prefix, rate=rate,
                               step_period=params.step_period, params=params, leg=leg)


def reference_pose_at(params: GaitParams, leg: LegGeometry, t):
    """Joint angles evaluated directly from the splines (no table lookup)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    paths = FootPaths(params)
    T = params.step_period
    out = np.empty(t.shape + (6,))
    pre = t < T
    if np.any(pre):
        left, right = paths.prefix(t[pre] / T)
        out[pre] = _feet_to_joints(left, right, params, leg, "half step")
    if np.any(~pre):
        left, right = paths.cycle((t[~pre] - T) / params.cycle_period)
        out[~pre] = _feet_to_joints(left, right, params, leg, "cycle")
    return out


def standing_reference(leg: LegGeometry, body_height: float | None = None,
                       rate: float = 50.0, step_period: float = 0.5) -> ReferenceTrajectory:
    """Constant feet-together pose at fixed body height."""
    if body_height is None:
        body_height = 0.95 * leg.length
    pose = np.concatenate([np.stack(leg_ik(0.0, -body_height, leg))] * 2)
    n_step = int(round(step_period * rate))
    return ReferenceTrajectory(cycle=np.tile(pose, (2 * n_step, 1)), prefix=np.tile(pose, (n_step, 1)),
                               rate=rate, step_period=step_period, leg=leg, meta={"standing": True})


def sample_reference(traj: ReferenceTrajectory, t):
    """Reference joint positions at time ``t`` (linear interpolation between samples)."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    pre_n = len(traj.prefix)
    n = len(traj.cycle)
    x = t * traj.rate
    out = np.empty(t.shape + (traj.cycle.shape[1],))
    in_pre = x < pre_n
    if np.any(in_pre):
        xp = x[in_pre]
        i0 = np.floor(xp).astype(int)
        frac = (xp - i0)[:, None]
        a = traj.prefix[i0]
        nxt = np.where((i0 + 1 < pre_n)[:, None], traj.prefix[np.minimum(i0 + 1, pre_n - 1)], traj.cycle[0])
        out[in_pre] = a + frac * (nxt - a)
    if np.any(~in_pre):
        xc = np.mod(x[~in_pre] - pre_n, n)
        i0 = np.floor(xc).astype(int) % n
        frac = (xc - np.floor(xc))[:, None]
        a = traj.cycle[i0]
        b = traj.cycle[(i0 + 1) % n]
        out[~in_pre] = a + frac * (b - a)
    return out[0] if scalar else out


def export_reference(traj: ReferenceTrajectory, path) -> Path:
    """Write the prefix followed by one cycle as a comma-separated table."""
    path = Path(path)
    rows = np.concatenate([traj.prefix, traj.cycle])
    t = np.arange(len(rows)) / traj.rate
    phase = traj.phase(t)
    with path.open("w") as fh:
        fh.write(", ".join(("t", "phase") + JOINT_NAMES) + "\n")
        for ti, ph, q in zip(t, np.atleast_1d(phase), rows):
            fh.write(", ".join(f"{v:.9g}" for v in (ti, ph, *q)) + "\n")
    return path


def load_reference_table(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
