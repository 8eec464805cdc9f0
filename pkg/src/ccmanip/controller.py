"""Hybrid force-impedance control with error-scheduled stiffness.

The base law is

    u = H + Kp dx + Kd dxdot + lambda_prev * W_pred + u_fc

where ``lambda`` is a logistic function of the forward model's one-step
prediction error: an accurate model (small error) makes the controller
compliant and lets the feed-forward wrench do the work, an inaccurate one
pushes the stiffness towards ``kp_max``.  Axes that carry a force target
get no motion feedback; an integral force regulator drives them instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class ControllerFault(RuntimeError):
    """Non-finite input or output in the control law."""


@dataclass
class GainConfig:
    """Gains and hyper-parameters of the adaptive impedance law.

    Stiffnesses are per wrench axis (translation axes first, then rotation).
    """

    kp_free: np.ndarray
    kp_max: np.ndarray
    logistic_rate: float = 10.0
    logistic_midpoint: float = 0.5
    force_gain: float = 20.0       # integral gain of the force regulator, 1/s
    force_damping: float = 5.0     # velocity damping on force-controlled axes, N s/m
    force_windup: float = 20.0     # clamp on the integral term, N
    damping_rule: str = "paper"    # "paper": sqrt(kp/4); "critical": 2 sqrt(kp m)
    effector_mass: float = 1.0
    kp_slew: float = math.inf      # max stiffness change rate, (N/m)/s
    torque_scale: float = 1.0
    epsilon_smoothing: float = 0.2  # weight on the previous error in the EMA
    dead_band: float = 1e-3         # m/s; no feed-forward below this speed

    def __post_init__(self):
        self.kp_free = np.asarray(self.kp_free, dtype=float).reshape(-1)
        self.kp_max = np.asarray(self.kp_max, dtype=float).reshape(-1)
        if self.kp_free.shape != self.kp_max.shape:
            raise ValueError("kp_free and kp_max need the same number of axes")
        if np.any(self.kp_free <= 0) or np.any(self.kp_free > self.kp_max):
            raise ValueError("need 0 < kp_free <= kp_max on every axis")
        if self.logistic_rate <= 0 or self.logistic_midpoint <= 0:
            raise ValueError("logistic rate and midpoint must be positive")
        if self.damping_rule not in ("paper", "critical"):
            raise ValueError("damping_rule must be 'paper' or 'critical'")
        if not 0.0 <= self.epsilon_smoothing < 1.0:
            raise ValueError("epsilon_smoothing must lie in [0, 1)")
        if self.kp_slew <= 0:
            raise ValueError("kp_slew must be positive")

    @property
    def n_axes(self) -> int:
        return self.kp_free.size


def lambda_of_error(epsilon: float, cfg: GainConfig) -> float:
    """Trust in the feed-forward term: 1 - logistic(r (eps - eps0))."""
    if epsilon < 0:
        raise ValueError("prediction error must be non-negative")
    z = -cfg.logistic_rate * (epsilon - cfg.logistic_midpoint)
    # 1 - 1/(1+e^z) == 1/(1+e^-z), evaluated on the side that cannot overflow
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def damping_from_stiffness(kp, cfg: GainConfig) -> np.ndarray:
    kp = np.asarray(kp, dtype=float)
    if cfg.damping_rule == "paper":
        return np.sqrt(kp / 4.0)
    return 2.0 * np.sqrt(kp * cfg.effector_mass)


def stiffness_update(lam: float, cfg: GainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Stiffness interpolated between kp_free (lam=1) and kp_max (lam=0), plus damping."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    kp = cfg.kp_free + (1.0 - lam) * (cfg.kp_max - cfg.kp_free)
    return kp, damping_from_stiffness(kp, cfg)


def _rotation_error(ref_q: np.ndarray, q: np.ndarray) -> np.ndarray:
    if q.size == 1:
        d = float(ref_q[0] - q[0])
        return np.array([math.atan2(math.sin(d), math.cos(d))])
    # rotation vector of ref * q^-1, quaternions in (x, y, z, w)
    x1, y1, z1, w1 = ref_q
    x2, y2, z2, w2 = -q[0], -q[1], -q[2], q[3]
    rel = np.array([
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
    ])
    if rel[3] < 0:
        rel = -rel
    s = float(np.linalg.norm(rel[:3]))
    if s < 1e-12:
        return 2.0 * rel[:3]
    return 2.0 * math.atan2(s, rel[3]) * rel[:3] / s


def tracking_errors(state, ref_position, ref_velocity, ref_orientation=None) -> tuple[np.ndarray, np.ndarray]:
    """Pose and twist errors (reference minus actual) stacked as wrench-sized vectors."""
    if ref_orientation is None:
        ref_orientation = np.zeros(1) if state.dim == 2 else np.array([0.0, 0.0, 0.0, 1.0])
    dx = np.concatenate([np.asarray(ref_position) - state.position,
                         _rotation_error(np.asarray(ref_orientation, dtype=float), state.orientation)])
    dv = np.concatenate([np.asarray(ref_velocity) - state.linear_velocity, -state.angular_velocity])
    return dx, dv


def impedance_wrench(state, ref_position, ref_velocity, kp, kd, feed_forward=None, gravity_comp=None,
                     force_axes=None, u_fc=None) -> np.ndarray:
    """H + Kp dx + Kd dxdot + u_ff + u_fc with motion feedback removed on force axes."""
    dx, dv = tracking_errors(state, ref_position, ref_velocity)
    fb = np.asarray(kp) * dx + np.asarray(kd) * dv
    if force_axes is not None:
        fb = np.where(force_axes, 0.0, fb)
    u = fb
    if feed_forward is not None:
        ff = np.asarray(feed_forward, dtype=float)
        u = u + (np.where(force_axes, 0.0, ff) if force_axes is not None else ff)
    if gravity_comp is not None:
        u = u + gravity_comp
    if u_fc is not None:
        u = u + u_fc
    if not np.all(np.isfinite(u)):
        raise ControllerFault("control output is not finite")
    return u


def gravity_compensation(gravity, mass: float, n_axes: int) -> np.ndarray:
    """The H term for a point effector: cancel its weight."""
    g = np.asarray(gravity, dtype=float)
    out = np.zeros(n_axes)
    out[: g.size] = -mass * g
    return out


@dataclass
class ForceRegulator:
    """Integral force regulation with anti-windup on force-controlled axes.

    Targets and measurements use the sensor convention: the force the
    effector exerts on its surroundings.
    """

    gain: float
    damping: float
    windup: float
    integral: Optional[np.ndarray] = None

    def reset(self):
        self.integral = None

    def __call__(self, target, measured_wrench, velocity_twist, dt: float) -> np.ndarray:
        target = np.asarray(target, dtype=float)
        axes = ~np.isnan(target)
        if self.integral is None or self.integral.shape != target.shape:
            self.integral = np.zeros(target.shape)
        if not np.any(axes):
            self.integral[:] = 0.0
            return np.zeros(target.shape)
        err = np.where(axes, np.nan_to_num(target) - measured_wrench, 0.0)
        self.integral = np.clip(self.integral + self.gain * err * dt, -self.windup, self.windup)
        self.integral[~axes] = 0.0
        out = np.where(axes, np.nan_to_num(target) + self.integral - self.damping * velocity_twist, 0.0)
        return out


def control(state, target, w_pred, lam_prev: float, cfg: GainConfig, gravity_comp=None, u_fc=None):
    """Single evaluation of the adaptive law for given previous-tick trust ``lam_prev``.

    ``target`` needs ``position``, ``velocity`` and ``force_target`` (NaN
    on motion axes).  ``w_pred`` is the compensating wrench that cancels
    the predicted environment load.
    """
    for arr in (state.position, state.linear_velocity, state.measured_wrench, target.position, target.velocity):
        if not np.all(np.isfinite(arr)):
            raise ControllerFault("non-finite controller input")
    kp, kd = stiffness_update(lam_prev, cfg)
    axes = ~np.isnan(np.asarray(target.force_target, dtype=float))
    ff = None if w_pred is None else lam_prev * np.asarray(w_pred, dtype=float)
    return impedance_wrench(state, target.position, target.velocity, kp, kd, ff, gravity_comp, axes, u_fc)


def fixed_gain_control(state, target, kp_const, cfg: Optional[GainConfig] = None, gravity_comp=None, u_fc=None):
    """Constant-stiffness baseline: the adaptive law with lambda = 0 and fixed gains."""
    kp = np.asarray(kp_const, dtype=float)
    if cfg is None:
        kd = np.sqrt(kp / 4.0)
    else:
        kd = damping_from_stiffness(kp, cfg)
    axes = ~np.isnan(np.asarray(target.force_target, dtype=float))
    return impedance_wrench(state, target.position, target.velocity, kp, kd, None, gravity_comp, axes, u_fc)


@dataclass
class ControllerState:
    lam: float
    kp: np.ndarray
    kd: np.ndarray
    epsilon: float = math.inf

    def check(self, cfg: GainConfig):
        tol = 1e-9 * np.maximum(cfg.kp_max, 1.0)
        assert 0.0 <= self.lam <= 1.0
        assert np.all(self.kp >= cfg.kp_free - tol) and np.all(self.kp <= cfg.kp_max + tol)


class AdaptiveImpedance:
    """Stateful adaptive law: keeps lambda, gains and the smoothed error across ticks.

    A tick is ``output(...)`` (uses the previous tick's lambda) followed by
    ``observe_error(eps)`` (sets the lambda for the next tick).
    """

    def __init__(self, cfg: GainConfig, dt: float):
        self.cfg = cfg
        self.dt = dt
        kp, kd = stiffness_update(0.0, cfg)
        self.state = ControllerState(lam=0.0, kp=kp, kd=kd)
        self._eps_smooth: Optional[float] = None
        self.force = ForceRegulator(cfg.force_gain, cfg.force_damping, cfg.force_windup)
        self.last_fc = np.zeros(cfg.n_axes)

    def reset_error(self):
        self._eps_smooth = None
        self.state.lam = 0.0
        self.state.epsilon = math.inf

    def observe_error(self, epsilon: Optional[float]) -> float:
        """Fold the latest prediction error in; None means no prediction was available."""
        if epsilon is None or not math.isfinite(epsilon):
            self._eps_smooth = None
            self.state.epsilon = math.inf
            self.state.lam = 0.0
            return 0.0
        a = self.cfg.epsilon_smoothing
        self._eps_smooth = epsilon if self._eps_smooth is None else a * self._eps_smooth + (1.0 - a) * epsilon
        self.state.epsilon = self._eps_smooth
        self.state.lam = lambda_of_error(self._eps_smooth, self.cfg)
        return self.state.lam

    def gains(self, force_max: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Gains for this tick from the previous lambda, slew-limited unless forced to kp_max."""
        if force_max:
            kp = self.cfg.kp_max.copy()
        else:
            target, _ = stiffness_update(self.state.lam, self.cfg)
            step = self.cfg.kp_slew * self.dt
            kp = np.clip(target, self.state.kp - step, self.state.kp + step)
            kp = np.clip(kp, self.cfg.kp_free, self.cfg.kp_max)
        self.state.kp = kp
        self.state.kd = damping_from_stiffness(kp, self.cfg)
        return self.state.kp, self.state.kd

    def output(self, state, ref, w_pred, gravity_comp, force_max: bool = False) -> np.ndarray:
        kp, kd = self.gains(force_max)
        axes = ~np.isnan(ref.force_target)
        u_fc = self.force(ref.force_target, state.measured_wrench,
                          np.concatenate([state.linear_velocity, state.angular_velocity]), self.dt)
        self.last_fc = u_fc
        lam = 0.0 if force_max else self.state.lam
        ff = None if w_pred is None else lam * np.asarray(w_pred, dtype=float)
        return impedance_wrench(state, ref.position, ref.velocity, kp, kd, ff, gravity_comp, axes, u_fc)
