"""Transition-phase control: gain policy, output blending and plan retiming."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .anticipation import IMPACT, IMPACT_LESS, ImpactModel, TransitionRegion
from .controller import GainConfig, damping_from_stiffness
from .plan import MotionPlan, PlanSamples, SegmentRunner
from .profile import SpeedSchedule, VelocityProfileParams, blend_weight, profile_distance, velocity_profile

log = logging.getLogger(__name__)

__all__ = [
    "TransitionConfig", "TransitionGains", "transition_gains", "blend", "BlendSchedule",
    "velocity_profile", "VelocityProfileParams", "SpeedSchedule", "blend_weight",
    "deceleration_start", "retime_plan",
]


@dataclass
class TransitionConfig:
    kp_low: Optional[np.ndarray] = None  # impact stiffness; kp_free / 2 when unset
    k_sigma: float = 2.0
    blend_time: Optional[float] = None   # None: time to cross half the region
    min_blend_time: float = 0.02
    release_time: float = 0.2            # blend back to the base controller after contact
    hold_after_contact: float = 0.3      # impact-less: keep stiff this long past the region


@dataclass
class TransitionGains:
    kp: np.ndarray
    kd: np.ndarray
    target_speed: Optional[float]  # None keeps the plan speed


def transition_gains(kind: str, gains: GainConfig, cfg: Optional[TransitionConfig] = None,
                     impact: Optional[ImpactModel] = None) -> TransitionGains:
    """Gains and speed policy of the transition-phase controller for one transition type."""
    cfg = cfg or TransitionConfig()
    if kind == IMPACT_LESS:
        kp = gains.kp_max.copy()
        return TransitionGains(kp, damping_from_stiffness(kp, gains), None)
    if kind != IMPACT:
        raise ValueError(f"unknown transition type {kind!r}")
    kp = 0.5 * gains.kp_free if cfg.kp_low is None else np.asarray(cfg.kp_low, dtype=float) * np.ones(gains.n_axes)
    return TransitionGains(kp, damping_from_stiffness(kp, gains), None if impact is None else impact.v_a)


def blend(u1, u2, t: float, T: float) -> np.ndarray:
    """(1 - a) u1 + a u2 with a = clamp(t / T, 0, 1)."""
    if T <= 0:
        raise ValueError("blend window must be positive")
    a = min(max(t / T, 0.0), 1.0)
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    if a == 0.0:
        return u1.copy()
    if a == 1.0:
        return u2.copy()
    return (1.0 - a) * u1 + a * u2


@dataclass
class BlendSchedule:
    t_start: float
    window: float
    rising: bool = True  # True: base -> transition controller

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError("blend window must be positive")

    def alpha(self, t: float) -> float:
        a = min(max((t - self.t_start) / self.window, 0.0), 1.0)
        return a if self.rising else 1.0 - a

    def done(self, t: float) -> bool:
        return t - self.t_start >= self.window


def deceleration_start(s_entry: float, v1: float, v2: float, duration: float, dt: Optional[float] = None
                       ) -> tuple[float, float]:
    """Arc length at which a v1 -> v2 profile must start to finish at ``s_entry``.

    Returns ``(s_start, duration)``; if the profile does not fit before the
    segment start the duration is compressed so it starts at 0.
    """
    d = profile_distance(v1, v2, duration, dt)
    if d <= s_entry:
        return s_entry - d, duration
    if v1 + v2 <= 0:
        return 0.0, duration
    log.warning("transition region starts %.3f m into the segment; compressing the %.3f s profile",
                s_entry, duration)
    return 0.0, max(2.0 * s_entry / (v1 + v2), 1e-9)


def retime_plan(plan: MotionPlan, region: TransitionRegion, v2: float, duration: float, dt: float,
                restore_at: Optional[float] = None) -> PlanSamples:
    """Sampled plan whose speed follows a smooth profile down to ``v2`` by the region entry.

    The profile starts where the trapezoidally integrated profile distance
    makes the speed reach ``v2`` exactly at ``region.s_entry``.  With
    ``restore_at`` (arc length within the same segment) a mirrored profile
    brings the nominal speed back.  Paths are untouched; only timing changes.
    """
    ts, ps, vs, segs, arcs = [], [], [], [], []
    t0 = 0.0
    for k, seg in enumerate(plan.segments):
        run = SegmentRunner(seg, plan.entry_speed(k), t0)
        pending = k == region.segment and not math.isclose(v2, seg.speed)
        restore = restore_at if k == region.segment else None
        s_start, T = (0.0, duration)
        if pending:
            s_start, T = deceleration_start(region.s_entry, seg.speed, v2, duration, dt)
        while True:
            if pending and run.s >= s_start - 1e-12:
                run.schedule.add(run.t, T, v2)
                pending = False
            if restore is not None and run.s >= restore:
                run.schedule.add(run.t, T, seg.speed)
                restore = None
            ts.append(run.t)
            ps.append(run.position())
            vs.append(run.velocity())
            segs.append(k)
            arcs.append(run.s)
            if run.finished:
                break
            run.advance(dt)
        t0 = run.t + dt
    return PlanSamples(np.array(ts), np.array(ps), np.array(vs), np.array(segs), np.array(arcs))
