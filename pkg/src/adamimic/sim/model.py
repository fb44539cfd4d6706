"""Physical parameters of the planar seven-link walker.

Links: torso, and per leg a thigh, shank and foot. Generalised coordinates
are ``[x, z, pitch, hip_L, knee_L, ankle_L, hip_R, knee_R, ankle_R]`` where
``(x, z)`` is the hip (pelvis) point and ``pitch`` the torso angle, all
angles counter-clockwise positive in the x-z plane (so positive pitch leans
the torso back and positive hip swings the leg forward). Knee flexion is
positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from adamimic.reference import LegGeometry, leg_ik

N_JOINTS = 6
N_DOF = 9

# layout of the packed geometry vector consumed by the dynamics kernel
GEOM_FIELDS = (
    "torso_com", "thigh_length", "thigh_com", "shank_length", "shank_com",
    "foot_com_x", "foot_com_z", "heel_x", "toe_x", "sole_z",
)


def _triple(hip, knee, ankle):
    return (hip, knee, ankle, hip, knee, ankle)


@dataclass(frozen=True)
class RobotModel:
    # masses in kg; lengths in m; inertias about the link COM in kg m^2
    torso_mass: float = 2.8
    torso_length: float = 0.215
    torso_com: float = 0.08
    torso_inertia: float = 0.015
    thigh_mass: float = 0.55
    thigh_length: float = 0.17
    thigh_com: float = 0.07
    thigh_inertia: float = 1.4e-3
    shank_mass: float = 0.4
    shank_length: float = 0.17
    shank_com: float = 0.07
    shank_inertia: float = 1.0e-3
    foot_mass: float = 0.15
    foot_inertia: float = 1.5e-4
    ankle_height: float = 0.025
    heel: float = 0.03
    toe: float = 0.07
    foot_com_x: float = 0.02
    foot_com_z: float = -0.015
    # joint order per leg: hip, knee, ankle
    q_lower: tuple = _triple(-1.2, -0.1, -1.0)
    q_upper: tuple = _triple(1.6, 2.4, 1.0)
    torque_limit: tuple = _triple(8.4, 6.0, 6.0)
    kp: tuple = (40.0,) * N_JOINTS
    kd: tuple = (1.0,) * N_JOINTS
    joint_damping: tuple = (0.05,) * N_JOINTS
    # reflected rotor inertia of the geared servos
    armature: tuple = (5e-3,) * N_JOINTS
    # no-load speed in rad/s for the torque-speed limit; 0 disables it
    no_load_speed: tuple = (0.0,) * N_JOINTS
    gravity: float = 9.81
    ground_stiffness: float = 1.0e4
    ground_damping: float = 100.0
    ground_tangent_damping: float = 200.0
    friction: float = 0.8
    fixed_base: bool = False

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.endswith(("_mass", "_length", "_inertia")) and not v > 0:
                raise ValueError(f"{f.name} must be positive, got {v}")
        if any(t <= 0 for t in self.torque_limit):
            raise ValueError("torque limits must be positive")
        for name in ("q_lower", "q_upper", "torque_limit", "kp", "kd", "joint_damping", "armature",
                     "no_load_speed"):
            if len(getattr(self, name)) != N_JOINTS:
                raise ValueError(f"{name} needs {N_JOINTS} entries")

    @property
    def total_mass(self) -> float:
        return self.torso_mass + 2 * (self.thigh_mass + self.shank_mass + self.foot_mass)

    @property
    def leg(self) -> LegGeometry:
        return LegGeometry(self.thigh_length, self.shank_length)

    @property
    def standing_hip_height(self) -> float:
        return self.thigh_length + self.shank_length + self.ankle_height

    @property
    def standing_height(self) -> float:
        return self.standing_hip_height + self.torso_length

    def masses(self) -> np.ndarray:
        return np.array([self.torso_mass, self.thigh_mass, self.shank_mass, self.foot_mass])

    def inertias(self) -> np.ndarray:
        return np.array([self.torso_inertia, self.thigh_inertia, self.shank_inertia, self.foot_inertia])

    def geometry(self) -> np.ndarray:
        return np.array([
            self.torso_com, self.thigh_length, self.thigh_com, self.shank_length, self.shank_com,
            self.foot_com_x, self.foot_com_z, -self.heel, self.toe, -self.ankle_height,
        ])

    def joint_arrays(self) -> np.ndarray:
        """Rows: lower, upper, torque limit, kp, kd, damping, armature, no-load speed."""
        return np.array([self.q_lower, self.q_upper, self.torque_limit, self.kp, self.kd,
                         self.joint_damping, self.armature, self.no_load_speed], dtype=float)

    def ground(self) -> np.ndarray:
        return np.array([self.gravity, self.ground_stiffness, self.ground_damping,
                         self.ground_tangent_damping, self.friction, float(self.fixed_base)])

    def hip_height_for_pose(self, q_joints, pitch: float = 0.0) -> float:
        """Hip height that puts the lowest foot contact point exactly on the ground."""
        from adamimic.sim.dynamics import contact_points

        qpos = np.zeros(N_DOF)
        qpos[2] = pitch
        qpos[3:] = q_joints
        pts = contact_points(qpos, self.geometry())
        return -float(pts[:, 1].min())

    def standing_pose(self, body_height: float | None = None) -> np.ndarray:
        if body_height is None:
            body_height = 0.95 * self.leg.length
        hip, knee, ankle = leg_ik(0.0, -body_height, self.leg)
        return np.array([hip, knee, ankle, hip, knee, ankle], dtype=float)


@dataclass(frozen=True)
class ObsScales:
    """Divisors applied to each observation group."""

    lin_vel: float = 0.5
    ang_vel: float = 4.0
    gravity: float = 1.0
    dof_pos: float = 1.0
    dof_vel: float = 20.0
    action: float = 1.0
    command: float = 0.5
    clock: float = 1.0


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.02
    pd_per_step: int = 4
    substeps_per_pd: int = 5
    horizon: int = 1000
    pitch_limit: float = float(np.pi / 3)
    reset_joint_noise: float = 0.03
    reset_vel_noise: float = 0.05
    obs_scales: ObsScales = field(default_factory=ObsScales)

    @property
    def physics_dt(self) -> float:
        return self.dt / (self.pd_per_step * self.substeps_per_pd)
