"""Training runs, evaluation, open-loop reference playback and their file formats."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from adamimic.config import ExperimentConfig, from_dict, to_dict
from adamimic.ppo import ActorCritic, EpisodeTracker, collect_rollouts, compute_gae, gaussian_policy_eval, ppo_update
from adamimic.reference import ReferenceTrajectory, sample_reference
from adamimic.rewards import compute_imitation, compute_performance
from adamimic.sim.env import OBS_DIM, BipedEnv, Command, fall_check, reset, step
from adamimic.sim.model import N_JOINTS

log = logging.getLogger(__name__)

CURVE_COLUMNS = (
    "iteration", "episode_reward", "perf_reward_sum", "imit_reward_sum",
    "mean_rp", "mean_ri", "mean_omega_p", "mean_ep_len",
)
TRAJECTORY_COLUMNS = (
    "t", "torso_x", "torso_z", "pitch",
    "q_hip_L", "q_knee_L", "q_ankle_L", "q_hip_R", "q_knee_R", "q_ankle_R",
    "contact_L", "contact_R",
)
STRATEGIES = ("ada", "dm0.2", "dm0.5", "dm0.8", "ni")
# (reference speed, target speed) pairs of the task matrix
TASKS = ((0.4, 0.4), (0.4, 0.6), (0.15, 0.6), (-0.4, 0.6))


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)


@dataclass
class RunResult:
    config: ExperimentConfig
    policy: ActorCritic
    log: TrainingLog
    aborted: bool = False
    checkpoint: Path | None = None


def make_env(cfg: ExperimentConfig, n_envs: int | None = None, seed: int | None = None,
             reference: ReferenceTrajectory | None = None) -> BipedEnv:
    ref = cfg.reference() if reference is None else reference
    return BipedEnv(cfg.ppo.n_envs if n_envs is None else n_envs, cfg.robot, cfg.sim, cfg.reward, ref,
                    Command(cfg.task.target_vx), seed=cfg.seed if seed is None else seed)


def make_policy(cfg: ExperimentConfig, reference: ReferenceTrajectory | None = None) -> ActorCritic:
    p = cfg.ppo
    if p.action_offset == "nominal":
        ref = cfg.reference() if reference is None else reference
        bias = ref.initial_pose()
    elif p.action_offset == "zero":
        bias = None
    else:
        raise ValueError(f"unknown action_offset {p.action_offset!r}")
    return ActorCritic(OBS_DIM, N_JOINTS, tuple(int(h) for h in p.hidden), p.init_std, bias)


def run_experiment(cfg: ExperimentConfig, out: Path | str | None = None, progress=None) -> RunResult:
    """Train one policy with PPO under ``cfg.strategy``.

    Writes ``curve.csv``, ``diagnostics.csv``, ``config.yaml`` and
    ``checkpoint.pt`` into ``out`` when given. ``progress`` is called with each
    log row.
    """
    torch.set_num_threads(max(1, cfg.torch_threads))
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    ref = cfg.reference()
    env = make_env(cfg, reference=ref)
    policy = make_policy(cfg, ref)
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.ppo.lr)
    strategy = cfg.weight_strategy
    tracker = EpisodeTracker(env.n)
    r_star = env.reward_cfg.r_star
    result = RunResult(cfg, policy, TrainingLog())
    out = Path(out) if out is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        from adamimic.config import save_config

        save_config(cfg, out / "config.yaml")
    obs = env.observe()
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        batch = collect_rollouts(env, policy, cfg.ppo.n_steps, strategy, gen, cfg.ppo.gamma, tracker, obs)
        obs = batch.stats["last_obs"]
        batch.advantages, batch.returns = compute_gae(batch.rewards, batch.values, batch.dones,
                                                      batch.bootstrap_value, cfg.ppo.gamma, cfg.ppo.lam)
        t1 = time.perf_counter()
        stats = ppo_update(batch, policy, optimizer, cfg.ppo, gen)
        t2 = time.perf_counter()
        row = {"iteration": it, **{k: v for k, v in tracker.summary().items() if k in CURVE_COLUMNS}}
        row.update(mean_rp=float(batch.r_performance.mean()), mean_ri=float(batch.r_imitation.mean()),
                   mean_omega_p=float(batch.omega_p.mean()))
        row = {k: row[k] for k in CURVE_COLUMNS}
        diag = {"iteration": it, "rp_norm": row["mean_rp"] / r_star, "ri_norm": row["mean_ri"] / r_star,
                "fall_rate": tracker.summary()["fall_rate"], "clamp_count": batch.stats["clamp_count"],
                "std": float(policy.std().mean().detach()), "collect_s": t1 - t0, "update_s": t2 - t1,
                **{k: v for k, v in stats.items() if k != "aborted"}}
        result.log.rows.append(row)
        result.log.diagnostics.append(diag)
        if progress is not None:
            progress(row, diag)
        if stats["aborted"]:
            log.error("non-finite loss at iteration %d; stopping with the last good parameters", it)
            result.aborted = True
            break
        if out is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / "checkpoint.pt", policy, cfg, it + 1)
    if out is not None:
        export_log(result.log, out / "curve.csv")
        _write_csv(out / "diagnostics.csv", result.log.diagnostics)
        result.checkpoint = save_checkpoint(out / "checkpoint.pt", policy, cfg, len(result.log))
    return result


def _write_csv(path: Path, rows: list[dict]):
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def export_log(tlog: TrainingLog, path) -> Path:
    """Learning curve CSV; floats are written with ``repr`` so they parse back exactly."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for r in tlog.rows:
            w.writerow([r["iteration"]] + [repr(float(r[c])) for c in CURVE_COLUMNS[1:]])
    return path


def load_log(path) -> TrainingLog:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CURVE_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = [{k: (int(v) if k == "iteration" else float(v)) for k, v in r.items()} for r in reader]
    return TrainingLog(rows)


def save_checkpoint(path, policy: ActorCritic, cfg: ExperimentConfig, iteration: int = 0) -> Path:
    path = Path(path)
    torch.save({"format": "adamimic-checkpoint", "version": 1, "iteration": iteration,
                "state_dict": policy.state_dict(), "config": to_dict(cfg)}, path)
    return path


def load_checkpoint(path):
    """Returns ``(policy, config, iteration)``."""
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != "adamimic-checkpoint":
        raise ValueError(f"{path} is not a checkpoint")
    cfg = from_dict(ExperimentConfig, blob["config"])
    # the bias is overwritten by the state dict, so skip building the reference
    policy = make_policy(cfg.replace(ppo=dataclasses.replace(cfg.ppo, action_offset="zero")))
    policy.load_state_dict(blob["state_dict"])
    return policy, cfg, blob["iteration"]


def evaluate_policy(policy, cfg: ExperimentConfig, n_envs: int = 16, steps: int = 500,
                    seed: int = 12345) -> dict:
    """Roll out the deterministic mean action for ``steps`` env steps.

    ``policy`` is an :class:`ActorCritic` or a callable ``f(env) -> actions``
    (used for scripted controllers such as reference playback). Reward terms
    are normalised by R*.
    """
    env = make_env(cfg, n_envs=n_envs, seed=seed)
    r_star = env.reward_cfg.r_star
    obs = env.observe()
    rp, ri, vx_err, n_falls, lengths = [], [], [], 0, []
    for _ in range(steps):
        if isinstance(policy, ActorCritic):
            action, _ = gaussian_policy_eval(policy, obs, "mean")
        else:
            action = policy(env)
        obs, terms, dones, info = env.step(action)
        rp.append(np.mean(terms.r_performance) / r_star)
        ri.append(np.mean(terms.r_imitation) / r_star)
        vx_err.append(float(np.mean(np.abs(info["base_vx"] - cfg.task.target_vx))))
        n_falls += int(info["fallen"].sum())
        lengths.extend(info["ep_len"][dones].tolist())
    ended = len(lengths)
    return {
        "mean_abs_vx_error": float(np.mean(vx_err)),
        "mean_ep_len": float(np.mean(lengths)) if ended else float(steps),
        "fall_rate": n_falls / ended if ended else 0.0,
        "episodes_ended": ended,
        "rp_norm": float(np.mean(rp)),
        "ri_norm": float(np.mean(ri)),
    }


def reference_controller(reference: ReferenceTrajectory, dt: float):
    """Scripted open-loop policy that outputs the reference at the next control instant."""

    def act(env):
        return sample_reference(reference, env.state.time + dt)

    return act


@dataclass
class Playback:
    trajectory: np.ndarray
    fall_time: float | None
    step_period: float

    @property
    def fall_periods(self) -> float:
        return math.inf if self.fall_time is None else self.fall_time / self.step_period


def play_reference(cfg: ExperimentConfig, reference: ReferenceTrajectory, steps: int | None = None,
                   out=None) -> Playback:
    """Feed the reference open loop as PD targets to a single noiseless walker.

    Stops at the first fall (or after ``steps``, default the episode horizon).
    """
    sim = cfg.sim
    steps = sim.horizon if steps is None else steps
    model = cfg.robot
    threshold = cfg.reward.resolved(model.standing_hip_height).height_threshold
    state = reset(np.random.default_rng(0), reference, model, sim, 1, 0.0, 0.0)
    rows = [_traj_row(state)]
    fall_time = None
    for _ in range(steps):
        target = sample_reference(reference, state.time + sim.dt)
        state, _, _, _ = step(model, sim, state, target[None])
        rows.append(_traj_row(state))
        if fall_check(state, sim, threshold)[0]:
            fall_time = float(state.time[0])
            break
    traj = np.array(rows)
    if out is not None:
        export_trajectory(traj, out)
    return Playback(traj, fall_time, reference.step_period)


def _traj_row(state) -> list:
    qp = state.qpos[0]
    return [float(state.time[0]), qp[0], qp[1], qp[2], *qp[3:9],
            float(state.contact[0, 0]), float(state.contact[0, 1])]


def export_trajectory(traj: np.ndarray, path) -> Path:
    path = Path(path)
    np.savetxt(path, traj, fmt="%.9g", delimiter=",", header=",".join(TRAJECTORY_COLUMNS), comments="")
    return path


def reference_tracking(q, q_ref, v, cfg: ExperimentConfig):
    """Normalised imitation and performance rewards of recorded states."""
    rc = cfg.reward
    ri = compute_imitation(q, q_ref, rc) / rc.r_star
    rp = compute_performance(v, np.array([cfg.task.target_vx, 0.0]), 0.0, 0.0, rc) / rc.r_star
    return ri, rp
