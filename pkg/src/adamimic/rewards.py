"""Reward terms and imitation/performance weighting.

All functions are pure and accept either scalars or numpy arrays with a
leading batch dimension (vector quantities along the last axis), so the
same code scores a single state or a whole batch of environments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "RewardConfig",
    "WeightStrategy",
    "RewardTerms",
    "RewardBreakdown",
    "rbf",
    "adaptive_weight",
    "clamp_terms",
    "combine",
    "imitation_performance",
    "compute_imitation",
    "compute_performance",
    "compute_regularization",
    "compute_alive",
]

NOMINAL_HEIGHT_FRACTION = 0.33 / 0.58
OMEGA_CLAMP = 1.5


@dataclass(frozen=True)
class RewardConfig:
    dt: float = 0.02
    r_star_per_dt: float = 1.0
    sigma2_imitation: float = 1.5
    sigma2_linvel: float = 0.16
    sigma2_angvel: float = 2.5
    linvel_weight: float = 0.75
    angvel_weight: float = 0.25
    torque_coef: float = -1e-6
    joint_acc_coef: float = -2e-8
    vz_coef: float = -2e-2
    roll_pitch_rate_coef: float = -2e-2
    action_rate_coef: float = -1e-4
    alive_penalty: float = -50.0
    height_fraction: float = NOMINAL_HEIGHT_FRACTION
    # absolute threshold on body height; resolved from the robot's standing height
    height_threshold: float = 0.33
    omega_r: float = 1.0
    omega_o: float = 1.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.r_star_per_dt <= 0:
            raise ValueError("r_star_per_dt must be positive")
        for name in ("sigma2_imitation", "sigma2_linvel", "sigma2_angvel"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not math.isclose(self.linvel_weight + self.angvel_weight, 1.0, abs_tol=1e-12):
            raise ValueError("performance sub-weights must sum to 1 so that max r_p equals R*")

    @property
    def r_star(self) -> float:
        return self.r_star_per_dt * self.dt

    def resolved(self, standing_height: float) -> "RewardConfig":
        """Copy with ``height_threshold`` scaled to a robot of the given standing height."""
        from dataclasses import replace

        return replace(self, height_threshold=self.height_fraction * standing_height)


@dataclass(frozen=True)
class WeightStrategy:
    """How the performance weight is chosen.

    ``kind`` is ``"adaptive"``, ``"fixed"`` or ``"no_imitation"``. For fixed
    weighting ``omega_p`` holds the constant performance weight.
    """

    kind: str = "adaptive"
    omega_p: float = 1.0

    def __post_init__(self):
        if self.kind not in ("adaptive", "fixed", "no_imitation"):
            raise ValueError(f"unknown weight strategy kind {self.kind!r}")
        if not 0.0 <= self.omega_p <= 1.0:
            raise ValueError(f"fixed omega_p must lie in [0, 1], got {self.omega_p}")
        if self.kind == "no_imitation" and self.omega_p != 1.0:
            raise ValueError("no_imitation implies omega_p = 1")

    @classmethod
    def adaptive(cls) -> "WeightStrategy":
        return cls("adaptive")

    @classmethod
    def fixed(cls, omega_p: float) -> "WeightStrategy":
        return cls("fixed", float(omega_p))

    @classmethod
    def no_imitation(cls) -> "WeightStrategy":
        return cls("no_imitation", 1.0)

    @classmethod
    def parse(cls, name: str) -> "WeightStrategy":
        """Parse the short names ``ada``, ``dm0.2``, ``dm0.5``, ``dm0.8``, ``ni``."""
        key = name.strip().lower()
        if key == "ada":
            return cls.adaptive()
        if key == "ni":
            return cls.no_imitation()
        if key.startswith("dm"):
            try:
                return cls.fixed(float(key[2:]))
            except ValueError:
                pass
        raise ValueError(f"unknown strategy {name!r}; expected ada, dmW or ni")

    @property
    def name(self) -> str:
        if self.kind == "adaptive":
            return "ada"
        if self.kind == "no_imitation":
            return "ni"
        return f"dm{self.omega_p:g}"


@dataclass
class RewardTerms:
    r_imitation: np.ndarray | float
    r_performance: np.ndarray | float
    r_regularization: np.ndarray | float = 0.0
    r_other: np.ndarray | float = 0.0


@dataclass
class RewardBreakdown:
    r_imitation: np.ndarray | float
    r_performance: np.ndarray | float
    r_regularization: np.ndarray | float
    r_other: np.ndarray | float
    omega_p_applied: np.ndarray | float
    total: np.ndarray | float
    clamp_count: int = field(default=0)


def rbf(x, y, sigma2: float):
    """Gaussian kernel ``exp(-||x - y||^2 / sigma2)`` over the last axis.

    Scalars are treated as length-1 vectors.
    """
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 0 and y.ndim == 0:
        return float(np.exp(-((x - y) ** 2) / sigma2))
    if x.shape[-1:] != y.shape[-1:] and x.ndim and y.ndim:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    d2 = np.sum((x - y) ** 2, axis=-1)
    out = np.exp(-d2 / sigma2)
    return float(out) if np.ndim(out) == 0 else out


def clamp_terms(r_i, r_p, r_star: float):
    """Clip imitation/performance rewards into ``[0, r_star]``.

    Returns the clipped pair and how many entries were moved.
    """
    r_i = np.asarray(r_i, dtype=float)
    r_p = np.asarray(r_p, dtype=float)
    ci = np.clip(r_i, 0.0, r_star)
    cp = np.clip(r_p, 0.0, r_star)
    count = int(np.count_nonzero(ci != r_i) + np.count_nonzero(cp != r_p))
    return ci, cp, count


def adaptive_weight(r_i, r_p, r_star: float):
    """Performance weight as a function of the current imitation and performance rewards.

    While imitation does not exceed performance the weight is the normalised
    performance reward. Otherwise it grows with the imitation surplus,
    ``(4 r_i/R* - 3 r_p/R*)^2``, capped at 1.5 so that imitating without
    performing is penalised. Inputs are clipped into ``[0, r_star]`` first.
    """
    if not r_star > 0:
        raise ValueError(f"r_star must be positive, got {r_star}")
    r_i = np.asarray(r_i, dtype=float)
    r_p = np.asarray(r_p, dtype=float)
    if np.isnan(r_i).any() or np.isnan(r_p).any():
        raise ValueError("NaN reward passed to adaptive_weight")
    r_i, r_p, _ = clamp_terms(r_i, r_p, r_star)
    first = r_p / r_star
    second = np.minimum((4.0 * r_i / r_star - 3.0 * r_p / r_star) ** 2, OMEGA_CLAMP)
    out = np.where(r_i <= r_p, first, second)
    return float(out) if out.ndim == 0 else out


def imitation_performance(r_i, r_p, omega_p):
    """Blended value ``(1 - w) r_i + w r_p``."""
    return (1.0 - omega_p) * r_i + omega_p * r_p


def combine(strategy: WeightStrategy, terms: RewardTerms, cfg: RewardConfig) -> RewardBreakdown:
    r_i = np.asarray(terms.r_imitation, dtype=float)
    r_p = np.asarray(terms.r_performance, dtype=float)
    r_r = np.asarray(terms.r_regularization, dtype=float)
    r_o = np.asarray(terms.r_other, dtype=float)
    for arr in (r_i, r_p, r_r, r_o):
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite reward term")
    clamps = 0
    if strategy.kind == "adaptive":
        ci, cp, clamps = clamp_terms(r_i, r_p, cfg.r_star)
        omega = np.asarray(adaptive_weight(ci, cp, cfg.r_star))
        blended = imitation_performance(r_i, r_p, omega)
    elif strategy.kind == "fixed":
        omega = np.full(np.broadcast(r_i, r_p).shape, strategy.omega_p)
        blended = imitation_performance(r_i, r_p, omega)
    else:
        omega = np.ones(np.broadcast(r_i, r_p).shape)
        blended = r_p + 0.0 * r_i
    total = blended + cfg.omega_r * r_r + cfg.omega_o * r_o

    def _out(a):
        return float(a) if np.ndim(a) == 0 else a

    return RewardBreakdown(
        r_imitation=_out(r_i),
        r_performance=_out(r_p),
        r_regularization=_out(r_r),
        r_other=_out(r_o),
        omega_p_applied=_out(omega),
        total=_out(total),
        clamp_count=clamps,
    )


def compute_imitation(q, q_ref, cfg: RewardConfig):
    """Joint-position imitation reward, ``R* * RBF(q, q_ref, 1.5)``."""
    q = np.asarray(q, dtype=float)
    q_ref = np.asarray(q_ref, dtype=float)
    if q.shape[-1] != q_ref.shape[-1]:
        raise ValueError(f"joint vector length mismatch: {q.shape} vs {q_ref.shape}")
    return cfg.r_star * rbf(q, q_ref, cfg.sigma2_imitation)


def compute_performance(v, v_cmd, omega_z, omega_cmd, cfg: RewardConfig):
    """Velocity tracking: planar linear velocity plus yaw rate."""
    lin = rbf(v, v_cmd, cfg.sigma2_linvel)
    ang = np.exp(-((np.asarray(omega_z, dtype=float) - omega_cmd) ** 2) / cfg.sigma2_angvel)
    out = cfg.r_star * (cfg.linvel_weight * lin + cfg.angvel_weight * ang)
    return float(out) if np.ndim(out) == 0 else out


def _sq(a):
    a = np.asarray(a, dtype=float)
    return np.sum(a * a, axis=-1) if a.ndim else a * a


def compute_regularization(tau, qddot, v_z, omega_xy, delta_a, cfg: RewardConfig):
    """Sum of the quadratic penalties; always non-positive for the default coefficients."""
    dt = cfg.dt
    out = (
        cfg.torque_coef * dt * _sq(tau)
        + cfg.joint_acc_coef * dt * _sq(qddot)
        + cfg.vz_coef * dt * np.asarray(v_z, dtype=float) ** 2
        + cfg.roll_pitch_rate_coef * dt * _sq(omega_xy)
        + cfg.action_rate_coef * dt * _sq(delta_a)
    )
    return float(out) if np.ndim(out) == 0 else out


def compute_alive(h, cfg: RewardConfig, fallen=None):
    """Alive term and termination flag.

    Terminates (with ``alive_penalty``) when the body height is strictly
    below ``cfg.height_threshold``. ``fallen`` optionally ORs in another
    fall test computed by the caller, such as a pitch limit.
    """
    h = np.asarray(h, dtype=float)
    term = h < cfg.height_threshold
    if fallen is not None:
        term = term | np.asarray(fallen, dtype=bool)
    r = np.where(term, cfg.alive_penalty, 0.0)
    if r.ndim == 0:
        return float(r), bool(term)
    return r, term
