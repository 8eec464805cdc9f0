"""C-infinity speed transitions and the speed schedules built from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VelocityProfileParams:
    v1: float
    v2: float
    t1: float = 0.0
    t2: float = 1.0

    def __post_init__(self):
        if not self.t2 > self.t1:
            raise ValueError("profile needs t2 > t1")
        if self.v1 < 0 or self.v2 < 0:
            raise ValueError("profile speeds must be non-negative")

    @property
    def duration(self) -> float:
        return self.t2 - self.t1

    def tau(self, t: float) -> float:
        return (t - self.t1) / self.duration


def blend_weight(tau: float) -> float:
    """Smooth step from 0 at tau<=0 to 1 at tau>=1, flat to all orders at both ends."""
    if tau <= 0.0:
        return 0.0
    if tau >= 1.0:
        return 1.0
    # e^{-1/tau} / (e^{-1/tau} + e^{-1/(1-tau)}) rewritten to avoid overflow
    z = 1.0 / tau - 1.0 / (1.0 - tau)
    if z > 700.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(z))


def velocity_profile(params: VelocityProfileParams, t: float) -> float:
    """Speed at absolute time ``t`` for a transition from v1 to v2 over [t1, t2]."""
    return params.v1 + (params.v2 - params.v1) * blend_weight(params.tau(t))


def profile_distance(v1: float, v2: float, duration: float, dt: float | None = None) -> float:
    """Distance covered while the speed moves from v1 to v2 over ``duration``.

    With ``dt`` the trapezoidal sum at that rate is returned (what a
    controller integrating the profile tick by tick travels); otherwise the
    exact value, which by symmetry of the weight is the mean speed times the
    duration.
    """
    if dt is None:
        return 0.5 * (v1 + v2) * duration
    n = max(int(math.ceil(duration / dt - 1e-9)), 1)
    params = VelocityProfileParams(v1, v2, 0.0, duration)
    ts = np.minimum(np.arange(n + 1) * dt, duration)
    vs = np.array([velocity_profile(params, t) for t in ts])
    return float(np.sum(0.5 * (vs[1:] + vs[:-1]) * np.diff(ts)))


@dataclass
class SpeedSchedule:
    """Speed over time as a start speed plus a sequence of smooth transitions.

    A transition that starts before the previous one finishes takes over
    from whatever speed the schedule has at that instant, so the speed stays
    continuous.
    """

    v0: float
    transitions: list[VelocityProfileParams] = field(default_factory=list)

    def speed(self, t: float) -> float:
        v = self.v0
        for p in self.transitions:
            if t <= p.t1:
                break
            v = velocity_profile(p, t)
        return v

    def add(self, t_start: float, duration: float, v_target: float) -> VelocityProfileParams:
        v_now = self.speed(t_start)
        self.transitions = [p for p in self.transitions if p.t1 < t_start]
        if duration <= 0.0:
            duration = 1e-9
        p = VelocityProfileParams(v_now, v_target, t_start, t_start + duration)
        self.transitions.append(p)
        return p

    def final_speed(self) -> float:
        return self.transitions[-1].v2 if self.transitions else self.v0
