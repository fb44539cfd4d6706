import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adamimic.reference import build_reference, standing_reference
from adamimic.reference import GaitParams
from adamimic.rewards import RewardConfig
from adamimic.sim import dynamics
from adamimic.sim.env import (
    OBS_DIM,
    BipedEnv,
    Command,
    SimState,
    SimulationError,
    check_termination,
    contact_force,
    observe,
    pd_torque,
    reset,
    step,
)
from adamimic.sim.model import ObsScales, RobotModel, SimConfig

MODEL = RobotModel()
CFG = SimConfig()


def airborne(model=MODEL, z=1.0):
    s = SimState.zeros(1)
    s.qpos[0, 1] = z
    s.qpos[0, 3:] = model.standing_pose()
    s.action[:] = s.qpos[:, 3:]
    s.prev_action[:] = s.action
    return s


def energy(model, s):
    return dynamics.mechanical_energy(s.qpos, s.qvel, model.geometry(), model.masses(), model.inertias(),
                                      model.joint_arrays(), model.ground())


def test_model_scale():
    assert abs(MODEL.total_mass - 5.0) < 0.05
    assert abs(MODEL.standing_height - 0.58) < 0.01
    with pytest.raises(ValueError):
        RobotModel(thigh_mass=0.0)
    with pytest.raises(ValueError):
        RobotModel(kp=(40.0,) * 5)


def test_pd_torque_examples():
    assert pd_torque(0.3, 0.0, 0.3, 40, 1, 6) == 0.0
    assert abs(pd_torque(0.0, 0.0, 0.1, 10, 1, 6) - 1.0) <= 1e-12
    assert pd_torque(0.0, 0.0, 1.0, 100, 1, 6) == 6.0
    assert pd_torque(0.0, 0.0, -1.0, 100, 1, 6) == -6.0


def test_contact_force_examples():
    assert contact_force(0.01, -1.0, 0.5, MODEL) == (0.0, 0.0)
    fx, fz = contact_force(-0.001, 0.0, 0.0, MODEL)
    assert abs(fz - 10.0) <= 1e-9 and fx == 0.0


@settings(max_examples=1000)
@given(st.floats(-0.02, 0.0, exclude_max=True), st.floats(-3, 3), st.floats(-3, 3))
def test_friction_cone(z, vz, vx):
    fx, fz = contact_force(z, vz, vx, MODEL)
    assert fz >= 0.0
    assert abs(fx) <= MODEL.friction * fz + 1e-12


def test_zero_gravity_equilibrium():
    model = replace(MODEL, gravity=0.0)
    s = airborne(model)
    nxt, *_ = step(model, CFG, s, s.q)
    assert np.max(np.abs(nxt.qpos - s.qpos)) <= 1e-12
    assert np.max(np.abs(nxt.qvel)) <= 1e-12


def test_free_fall():
    s = airborne()
    nxt, q, *_ = step(MODEL, CFG, s, s.q)
    assert abs(nxt.qvel[0, 1] - (-MODEL.gravity * CFG.dt)) <= 1e-6
    assert np.max(np.abs(nxt.qvel[0, 3:])) <= 1e-9
    assert nxt.contact.sum() == 0


def passive_pendulum_energy(steps=500):
    model = replace(MODEL, kp=(0.0,) * 6, kd=(0.0,) * 6, fixed_base=True)
    s = SimState.zeros(1)
    s.qpos[0] = [0, 0.6, 0.2, 0.8, 0.5, 0.3, -0.6, 1.2, -0.2]
    s.qvel[0, 3:] = [1, -2, 0.5, 0.3, 0.2, -1]
    e = [energy(model, s)[0]]
    for _ in range(steps):
        s, *_ = step(model, CFG, s, s.q)
        e.append(energy(model, s)[0])
    return np.array(e)


def passive_contact_energy(cfg=CFG, steps=500):
    model = replace(MODEL, kp=(0.0,) * 6, kd=(0.0,) * 6)
    s = SimState.zeros(1)
    s.qpos[0] = [0, 0.45, 0.2, 0.8, 0.5, 0.3, -0.6, 1.2, -0.2]
    s.qvel[0, 3:] = [1, -2, 0.5, 0.3, 0.2, -1]
    e = [energy(model, s)[0]]
    for _ in range(steps):
        s, *_ = step(model, cfg, s, s.q)
        e.append(energy(model, s)[0])
    return np.array(e), s


def test_passive_pendulum_energy_non_increasing():
    e = passive_pendulum_energy()
    assert np.max(np.diff(e)) <= 1e-6
    assert e[-1] < e[0]


def test_passive_contact_energy():
    e, s = passive_contact_energy()
    # dissipative overall; per-step upticks are integrator error of order h^2
    assert e[-1] < e[0]
    assert np.max(np.diff(e)) < 1e-4
    fine, _ = passive_contact_energy(SimConfig(substeps_per_pd=20))
    assert np.max(np.diff(fine)) <= 1e-6
    jnt = MODEL.joint_arrays()
    assert np.all(s.q >= jnt[0]) and np.all(s.q <= jnt[1])


def test_determinism():
    ref = build_reference(GaitParams.for_leg(0.4, MODEL.leg), MODEL.leg)
    acts = np.random.default_rng(3).normal(0, 0.3, (40, 4, 6)) + ref.initial_pose()

    def run():
        s = reset(np.random.default_rng(7), ref, MODEL, CFG, 4)
        out = []
        for a in acts:
            s, *_ = step(MODEL, CFG, s, a)
            out.append(np.concatenate([s.qpos, s.qvel], axis=1))
        return np.array(out)

    assert np.array_equal(run(), run())


def test_rate_contract_and_qddot():
    s = reset(np.random.default_rng(0), standing_reference(MODEL.leg), MODEL, CFG, 3)
    for k in range(1, 4):
        nxt, q, *_ = step(MODEL, CFG, s, s.q + 0.05)
        assert np.all(nxt.pd_ticks == 4 * k)
        assert np.array_equal(q.qddot, (nxt.qvel[:, 3:] - s.qvel[:, 3:]) / CFG.dt)
        assert np.array_equal(q.delta_a, nxt.action - s.action)
        s = nxt


def test_torque_speed_limit():
    fast = replace(MODEL, no_load_speed=(4.71, 6.6, 6.6) * 2)
    s = airborne(fast)
    s.qvel[0, 4] = 5.0  # knee moving towards the target at close to no-load speed
    target = s.q.copy()
    target[0, 1] += 1.0
    nxt, q, *_ = step(fast, CFG, s, target)
    slow, q2, *_ = step(MODEL, CFG, s, target)
    assert abs(q.tau[0, 1]) < abs(q2.tau[0, 1])


def test_nonfinite_raises_with_pre_step_state():
    s = airborne()
    bad = s.q.copy()
    bad[0, 2] = np.nan
    with pytest.raises(SimulationError) as info:
        step(MODEL, CFG, s, bad)
    assert np.array_equal(info.value.state.qpos, s.qpos)
    assert list(info.value.env_ids) == [0]


def test_observe_layout():
    s = SimState.zeros(2)
    s.qpos[:, 1] = 0.4
    o = observe(s, Command(0.0), s.action, CFG)
    assert o.shape == (2, OBS_DIM) == (2, 26)
    want = np.zeros(26)
    want[4] = -1.0
    want[25] = 1.0  # cos of the zero clock phase
    assert np.array_equal(o[0], want)


def test_observe_scaling_linear():
    s = reset(np.random.default_rng(1), standing_reference(MODEL.leg), MODEL, CFG, 5)
    s.qvel[:] = np.random.default_rng(2).normal(size=s.qvel.shape)
    base = observe(s, Command(0.3), s.prev_action, CFG, 0.2)
    doubled = ObsScales(*(2 * getattr(CFG.obs_scales, f) for f in ObsScales.__dataclass_fields__))
    half = observe(s, Command(0.3), s.prev_action, replace(CFG, obs_scales=doubled), 0.2)
    assert np.allclose(half, base / 2, rtol=0, atol=1e-15)


def test_reset():
    ref = build_reference(GaitParams.for_leg(0.4, MODEL.leg), MODEL.leg)
    s = reset(np.random.default_rng(0), ref, MODEL, CFG, 1, 0.0, 0.0)
    assert np.array_equal(s.q[0], ref.initial_pose())
    assert abs(dynamics.contact_points(s.qpos[0], MODEL.geometry())[:, 1].min()) <= 1e-12
    a = reset(np.random.default_rng(5), ref, MODEL, CFG, 3)
    b = reset(np.random.default_rng(5), ref, MODEL, CFG, 3)
    assert np.array_equal(a.qpos, b.qpos) and np.array_equal(a.qvel, b.qvel)
    many = reset(np.random.default_rng(9), ref, MODEL, CFG, 1000)
    assert np.max(np.abs(many.q - ref.initial_pose())) <= 0.03
    assert np.max(np.abs(many.qvel[:, :2])) <= 0.05


def test_termination():
    thr = RewardConfig().resolved(MODEL.standing_hip_height).height_threshold
    s = reset(np.random.default_rng(0), standing_reference(MODEL.leg), MODEL, CFG, 4, 0.0, 0.0)
    assert not check_termination(s, CFG, thr).any()
    s.qpos[1, 1] = 0.2
    s.qpos[2, 2] = math.pi / 2
    s.ep_len[3] = CFG.horizon
    assert list(check_termination(s, CFG, 0.33)) == [False, True, True, True]


def test_planar_command_warns(caplog):
    c = Command(0.4, 0.2, 0.5).planar()
    assert "ignores" in caplog.text
    assert (c.v_y, c.omega_z) == (0.0, 0.0)


def test_env_auto_reset_and_info():
    env = BipedEnv(4, MODEL, CFG, RewardConfig(), standing_reference(MODEL.leg), Command(0.4), seed=0)
    obs = env.observe()
    assert obs.shape == (4, OBS_DIM)
    fell = False
    for _ in range(60):
        obs, terms, dones, info = env.step(np.full((4, 6), 0.0) + np.array([1.5, 0, 0, -1.0, 0, 0]))
        assert np.all(np.asarray(terms.r_imitation) <= env.reward_cfg.r_star)
        if dones.any():
            fell = True
            assert np.all(terms.r_other[dones] == -50.0)
            assert np.all(env.state.ep_len[dones] == 0)
    assert fell
