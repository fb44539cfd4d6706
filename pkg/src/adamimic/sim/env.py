"""Batched walker environment: stepping, observations, resets and reward terms."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from adamimic.reference import ReferenceTrajectory, sample_reference
from adamimic.rewards import (
    RewardConfig,
    RewardTerms,
    compute_alive,
    compute_imitation,
    compute_performance,
    compute_regularization,
)
from adamimic.sim import dynamics
from adamimic.sim.model import N_DOF, N_JOINTS, RobotModel, SimConfig

logger = logging.getLogger(__name__)

OBS_DIM = 26


class SimulationError(RuntimeError):
    """Non-finite state after integration; carries the state before the step."""

    def __init__(self, msg, state=None, env_ids=None):
        super().__init__(msg)
        self.state = state
        self.env_ids = env_ids


@dataclass(frozen=True)
class Command:
    v_x: float = 0.0
    v_y: float = 0.0
    omega_z: float = 0.0

    def planar(self) -> "Command":
        """Drop the out-of-plane components, which the planar model cannot follow."""
        if self.v_y != 0.0 or self.omega_z != 0.0:
            logger.warning("planar walker ignores v_y=%g and omega_z=%g", self.v_y, self.omega_z)
        return Command(self.v_x, 0.0, 0.0)


@dataclass
class SimState:
    """State of ``n`` environments; every field has leading dimension ``n``."""

    qpos: np.ndarray
    qvel: np.ndarray
    qacc: np.ndarray
    tau: np.ndarray
    action: np.ndarray
    prev_action: np.ndarray
    contact: np.ndarray
    time: np.ndarray
    ep_len: np.ndarray
    pd_ticks: np.ndarray

    @property
    def n(self) -> int:
        return self.qpos.shape[0]

    @property
    def q(self) -> np.ndarray:
        return self.qpos[:, 3:]

    @property
    def qdot(self) -> np.ndarray:
        return self.qvel[:, 3:]

    @property
    def height(self) -> np.ndarray:
        return self.qpos[:, 1]

    @property
    def pitch(self) -> np.ndarray:
        return self.qpos[:, 2]

    def copy(self) -> "SimState":
        return SimState(**{k: np.array(v, copy=True) for k, v in self.__dict__.items()})

    def take(self, idx) -> "SimState":
        return SimState(**{k: np.array(v[idx], copy=True) for k, v in self.__dict__.items()})

    def put(self, idx, other: "SimState") -> None:
        for k, v in self.__dict__.items():
            v[idx] = getattr(other, k)

    @classmethod
    def zeros(cls, n: int) -> "SimState":
        return cls(
            qpos=np.zeros((n, N_DOF)), qvel=np.zeros((n, N_DOF)), qacc=np.zeros((n, N_JOINTS)),
            tau=np.zeros((n, N_JOINTS)), action=np.zeros((n, N_JOINTS)), prev_action=np.zeros((n, N_JOINTS)),
            contact=np.zeros((n, 2)), time=np.zeros(n), ep_len=np.zeros(n, dtype=np.int64),
            pd_ticks=np.zeros(n, dtype=np.int64),
        )


@dataclass
class StepQuantities:
    """Everything the reward terms read after a step."""

    q: np.ndarray
    v: np.ndarray  # (n, 2): v_x and the (structurally zero) v_y
    v_z: np.ndarray
    omega_z: np.ndarray
    omega_xy: np.ndarray  # (n, 2): roll rate (zero) and pitch rate
    tau: np.ndarray
    qddot: np.ndarray
    delta_a: np.ndarray
    h: np.ndarray
    pitch: np.ndarray


def _model_arrays(model: RobotModel):
    return (model.geometry(), model.masses(), model.inertias(), model.joint_arrays(), model.ground())


def pd_torque(q, qdot, q_target, kp, kd, torque_limit):
    """Clamped PD law ``kp (q_target - q) - kd qdot``."""
    tau = np.asarray(kp) * (np.asarray(q_target) - np.asarray(q)) - np.asarray(kd) * np.asarray(qdot)
    lim = np.asarray(torque_limit, dtype=float)
    return np.clip(tau, -lim, lim)


def contact_force(z, vz, vx, model: RobotModel):
    """Ground reaction ``(fx, fz)`` at one contact point."""
    fz, fx = dynamics.contact_force_scalar(float(z), float(vz), float(vx), model.ground_stiffness,
                                           model.ground_damping, model.ground_tangent_damping, model.friction)
    return fx, fz


def step(model: RobotModel, cfg: SimConfig, state: SimState, action, command: Command | None = None):
    """Hold ``action`` (joint targets, rad) for one policy step and integrate.

    Returns ``(next_state, quantities, fallen, timeout)``. Targets are clipped
    to the joint limits before use.
    """
    action = np.asarray(action, dtype=float).reshape(state.n, N_JOINTS)
    jnt = model.joint_arrays()
    target = np.clip(action, jnt[0], jnt[1])
    nxt = state.copy()
    qd_prev = state.qvel[:, 3:].copy()
    dynamics.step_batch(nxt.qpos, nxt.qvel, target, *_model_arrays(model), cfg.physics_dt,
                        cfg.pd_per_step, cfg.substeps_per_pd, nxt.tau, nxt.contact, nxt.pd_ticks)
    bad = ~(np.isfinite(nxt.qpos).all(axis=1) & np.isfinite(nxt.qvel).all(axis=1))
    if bad.any():
        ids = np.flatnonzero(bad)
        raise SimulationError(f"non-finite state in envs {ids.tolist()}", state=state.take(ids), env_ids=ids)
    nxt.qacc = (nxt.qvel[:, 3:] - qd_prev) / cfg.dt
    nxt.prev_action = state.action.copy()
    nxt.action = target
    nxt.time = state.time + cfg.dt
    nxt.ep_len = state.ep_len + 1
    zeros = np.zeros(state.n)
    quantities = StepQuantities(
        q=nxt.q.copy(),
        v=np.stack([nxt.qvel[:, 0], zeros], axis=1),
        v_z=nxt.qvel[:, 1].copy(),
        omega_z=zeros,
        omega_xy=np.stack([zeros, nxt.qvel[:, 2]], axis=1),
        tau=nxt.tau.copy(),
        qddot=nxt.qacc.copy(),
        delta_a=target - state.action,
        h=nxt.height.copy(),
        pitch=nxt.pitch.copy(),
    )
    fallen = fall_check(nxt, cfg, None)
    timeout = nxt.ep_len >= cfg.horizon
    return nxt, quantities, fallen, timeout


def fall_check(state: SimState, cfg: SimConfig, height_threshold: float | None):
    """Pitch-limit fall test, plus the height test when a threshold is given."""
    fallen = np.abs(state.pitch) > cfg.pitch_limit
    if height_threshold is not None:
        fallen |= state.height < height_threshold
    return fallen


def check_termination(state: SimState, cfg: SimConfig, height_threshold: float):
    """True where the body is too low, the torso pitched past the limit, or the horizon is reached."""
    return fall_check(state, cfg, height_threshold) | (state.ep_len >= cfg.horizon)


def observe(state: SimState, command: Command | float, prev_action, cfg: SimConfig, phase=None):
    """Observation rows ``[v_x, v_z, pitch_rate, g_torso(2), q(6), qdot(6), prev_action(6), v_x_cmd, sin, cos]``.

    Each group is divided by its entry in ``cfg.obs_scales``. ``phase`` is the
    reference gait clock in [0, 1); the last two entries encode it.
    """
    s = cfg.obs_scales
    n = state.n
    v_cmd = command.v_x if isinstance(command, Command) else command
    pitch = state.pitch
    grav = np.stack([-np.sin(pitch), -np.cos(pitch)], axis=1)
    if phase is None:
        phase = np.zeros(n)
    ang = 2.0 * np.pi * np.broadcast_to(np.asarray(phase, dtype=float), (n,))
    cols = [
        state.qvel[:, 0:1] / s.lin_vel,
        state.qvel[:, 1:2] / s.lin_vel,
        state.qvel[:, 2:3] / s.ang_vel,
        grav / s.gravity,
        state.q / s.dof_pos,
        state.qdot / s.dof_vel,
        np.asarray(prev_action, dtype=float).reshape(n, N_JOINTS) / s.action,
        np.broadcast_to(np.asarray(v_cmd, dtype=float), (n,))[:, None] / s.command,
        np.sin(ang)[:, None] / s.clock,
        np.cos(ang)[:, None] / s.clock,
    ]
    return np.concatenate(cols, axis=1)


def reset(rng: np.random.Generator, reference: ReferenceTrajectory, model: RobotModel,
          cfg: SimConfig, n: int = 1, joint_noise: float | None = None,
          vel_noise: float | None = None) -> SimState:
    """Fresh states at the reference's first pose with uniform joint and base-velocity noise.

    The hip height is chosen per environment so the lowest sole point just
    touches the ground.
    """
    jn = cfg.reset_joint_noise if joint_noise is None else joint_noise
    vn = cfg.reset_vel_noise if vel_noise is None else vel_noise
    st = SimState.zeros(n)
    pose = reference.initial_pose()
    noise = rng.uniform(-jn, jn, size=(n, N_JOINTS)) if jn > 0 else np.zeros((n, N_JOINTS))
    vnoise = rng.uniform(-vn, vn, size=(n, 2)) if vn > 0 else np.zeros((n, 2))
    jnt = model.joint_arrays()
    st.qpos[:, 3:] = np.clip(pose + noise, jnt[0], jnt[1])
    geom = model.geometry()
    for i in range(n):
        pts = dynamics.contact_points(st.qpos[i], geom)
        st.qpos[i, 1] = -pts[:, 1].min()
    st.qvel[:, 0:2] = vnoise
    st.action[:] = st.qpos[:, 3:]
    st.prev_action[:] = st.action
    return st


class BipedEnv:
    """``n`` walkers tracking one command against one reference, with auto-reset.

    ``step`` returns the four reward terms; weighting them is left to the caller.
    """

    def __init__(self, n: int, model: RobotModel, sim_cfg: SimConfig, reward_cfg: RewardConfig,
                 reference: ReferenceTrajectory, command: Command, seed: int = 0):
        self.n = n
        self.model = model
        self.cfg = sim_cfg
        self.reward_cfg = reward_cfg.resolved(model.standing_hip_height)
        if abs(self.reward_cfg.dt - sim_cfg.dt) > 1e-15:
            raise ValueError("reward dt and simulator dt differ")
        self.reference = reference
        self.command = command.planar() if (command.v_y or command.omega_z) else command
        self.rng = np.random.default_rng(seed)
        self.state = reset(self.rng, reference, model, sim_cfg, n)

    @property
    def obs_dim(self) -> int:
        return OBS_DIM

    def observe(self) -> np.ndarray:
        return observe(self.state, self.command, self.state.action, self.cfg, self.reference.phase(self.state.time))

    def reward_terms(self, qs: StepQuantities, time) -> tuple[RewardTerms, np.ndarray]:
        rc = self.reward_cfg
        q_ref = sample_reference(self.reference, time)
        r_i = compute_imitation(qs.q, q_ref, rc)
        v_cmd = np.array([self.command.v_x, self.command.v_y])
        r_p = compute_performance(qs.v, v_cmd, qs.omega_z, self.command.omega_z, rc)
        r_r = compute_regularization(qs.tau, qs.qddot, qs.v_z, qs.omega_xy, qs.delta_a, rc)
        pitch_fall = np.abs(qs.pitch) > self.cfg.pitch_limit
        r_o, fallen = compute_alive(qs.h, rc, pitch_fall)
        return RewardTerms(r_i, r_p, r_r, r_o), fallen

    def step(self, actions):
        """Advance all envs; finished ones are reset in place.

        Returns ``(obs, terms, dones, info)``; ``info["timeouts"]`` marks
        horizon truncation and ``info["final_obs"]`` the pre-reset observation.
        """
        try:
            nxt, qs, _, timeout = step(self.model, self.cfg, self.state, actions, self.command)
        except SimulationError as exc:
            raise SimulationError(f"{exc} (env indices {exc.env_ids.tolist()})", exc.state, exc.env_ids) from None
        terms, fallen = self.reward_terms(qs, nxt.time)
        self.state = nxt
        dones = fallen | timeout
        timeouts = timeout & ~fallen
        info = {"timeouts": timeouts, "fallen": fallen, "ep_len": nxt.ep_len.copy(), "base_vx": nxt.qvel[:, 0].copy()}
        if timeouts.any():
            info["final_obs"] = self.observe()
        ids = np.flatnonzero(dones)
        if len(ids):
            self.state.put(ids, reset(self.rng, self.reference, self.model, self.cfg, len(ids)))
        return self.observe(), terms, dones, info
