"""Motion plans: task-space paths with nominal speeds and orthogonal force targets.

A plan is a list of segments.  Each segment follows a line or an arc at a
nominal speed.  Axes with a force target are force-controlled while the
segment is active; the remaining axes track the path.  Segments flagged
``until_contact`` end when the effector touches something (their path
deliberately runs past where the contact is expected), all others end when
their path is exhausted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .profile import SpeedSchedule, blend_weight


@dataclass(frozen=True)
class LinePath:
    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "end", np.asarray(self.end, dtype=float))
        if self.start.shape != self.end.shape:
            raise ValueError("line endpoints must share a dimension")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))

    def point(self, s: float) -> np.ndarray:
        L = self.length
        if L == 0.0:
            return self.start.copy()
        return self.start + (min(max(s, 0.0), L) / L) * (self.end - self.start)

    def tangent(self, s: float) -> np.ndarray:
        L = self.length
        return (self.end - self.start) / L if L > 0 else np.zeros_like(self.start)

    def translated(self, delta) -> "LinePath":
        return LinePath(self.start + delta, self.end + delta)

    def reversed(self) -> "LinePath":
        return LinePath(self.end, self.start)


@dataclass(frozen=True)
class ArcPath:
    """Circular arc in the plane spanned by coordinate axes ``axes``."""

    center: np.ndarray
    radius: float
    start_angle: float
    sweep: float
    axes: tuple[int, int] = (0, 1)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("arc radius must be positive")

    @property
    def length(self) -> float:
        return abs(self.sweep) * self.radius

    def _angle(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        return self.start_angle + math.copysign(s / self.radius, self.sweep)

    def point(self, s: float) -> np.ndarray:
        a = self._angle(s)
        p = self.center.copy()
        i, j = self.axes
        p[i] += self.radius * math.cos(a)
        p[j] += self.radius * math.sin(a)
        return p

    def tangent(self, s: float) -> np.ndarray:
        a = self._angle(s)
        t = np.zeros_like(self.center)
        i, j = self.axes
        sign = 1.0 if self.sweep >= 0 else -1.0
        t[i] = -sign * math.sin(a)
        t[j] = sign * math.cos(a)
        return t

    def translated(self, delta) -> "ArcPath":
        return ArcPath(self.center + delta, self.radius, self.start_angle, self.sweep, self.axes)

    def reversed(self) -> "ArcPath":
        return ArcPath(self.center, self.radius, self.start_angle + self.sweep, -self.sweep, self.axes)


Path = Union[LinePath, ArcPath]


@dataclass
class PlanSegment:
    path: Path
    speed: float
    force_target: Optional[np.ndarray] = None  # per wrench axis, NaN where motion-controlled
    normal_load: float = 0.0
    until_contact: bool = False
    start_from_rest: bool = False
    ramp_time: float = 0.5
    name: str = ""

    def __post_init__(self):
        if self.speed <= 0:
            raise ValueError("segment speed must be positive")
        if self.normal_load < 0:
            raise ValueError("normal load must be non-negative")
        if self.force_target is not None:
            self.force_target = np.asarray(self.force_target, dtype=float)

    def force_axes(self, n_wrench: int) -> np.ndarray:
        if self.force_target is None:
            return np.zeros(n_wrench, dtype=bool)
        return ~np.isnan(self.force_target)


@dataclass
class PlanSamples:
    """Time-indexed waypoints, the sampled form of a plan."""

    time: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    segment: np.ndarray
    arc: np.ndarray  # arc length within the segment

    def __len__(self) -> int:
        return self.time.size


@dataclass
class MotionPlan:
    segments: list[PlanSegment]
    name: str = ""

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a plan needs at least one segment")
        dims = {seg.path.point(0.0).size for seg in self.segments}
        if len(dims) != 1:
            raise ValueError("all segments must live in the same space")

    @property
    def dim(self) -> int:
        return self.segments[0].path.point(0.0).size

    @property
    def start(self) -> np.ndarray:
        return self.segments[0].path.point(0.0)

    def entry_speed(self, index: int) -> float:
        seg = self.segments[index]
        if index == 0 or seg.start_from_rest or self.segments[index - 1].until_contact:
            return 0.0
        return self.segments[index - 1].speed

    def sample(self, dt: float) -> PlanSamples:
        """Nominal timing of the whole plan, assuming every segment runs to its end."""
        ts, ps, vs, segs, arcs = [], [], [], [], []
        t0 = 0.0
        for k, seg in enumerate(self.segments):
            ex = SegmentRunner(seg, self.entry_speed(k), t0)
            while True:
                ts.append(ex.t)
                ps.append(ex.position())
                vs.append(ex.velocity())
                segs.append(k)
                arcs.append(ex.s)
                if ex.finished:
                    break
                ex.advance(dt)
            t0 = ex.t + dt
        return PlanSamples(np.array(ts), np.array(ps), np.array(vs), np.array(segs), np.array(arcs))

    def reversed(self) -> "MotionPlan":
        segs = []
        for seg in reversed(self.segments):
            segs.append(PlanSegment(seg.path.reversed(), seg.speed, seg.force_target, seg.normal_load,
                                    False, seg.start_from_rest, seg.ramp_time, seg.name))
        segs[0].start_from_rest = True
        return MotionPlan(segs, self.name + "-reversed")


class SegmentRunner:
    """Advances a reference point along one segment under a speed schedule."""

    def __init__(self, segment: PlanSegment, entry_speed: float, t_start: float):
        self.segment = segment
        self.path = segment.path
        self.t_start = t_start
        self.t = t_start
        self.s = 0.0
        self.schedule = SpeedSchedule(entry_speed)
        if entry_speed != segment.speed:
            self.schedule.add(t_start, segment.ramp_time, segment.speed)
        self.v = self.schedule.speed(t_start)

    @property
    def finished(self) -> bool:
        return self.s >= self.path.length - 1e-12

    def position(self) -> np.ndarray:
        return self.path.point(self.s)

    def velocity(self) -> np.ndarray:
        if self.finished:
            return np.zeros_like(self.path.point(0.0))
        return self.v * self.path.tangent(self.s)

    def advance(self, dt: float):
        v_next = self.schedule.speed(self.t + dt)
        self.s = min(self.s + 0.5 * (self.v + v_next) * dt, self.path.length)
        self.t += dt
        self.v = v_next

    def remaining(self) -> float:
        return self.path.length - self.s

    def translate(self, delta):
        self.path = self.path.translated(np.asarray(delta, dtype=float))


@dataclass
class Reference:
    position: np.ndarray
    velocity: np.ndarray
    force_target: np.ndarray  # per wrench axis, NaN where motion-controlled
    normal_load: float
    segment: int


class PlanExecutor:
    """Walks a plan tick by tick; contacts advance ``until_contact`` segments."""

    def __init__(self, plan: MotionPlan, n_wrench: int, t0: float = 0.0):
        self.plan = plan
        self.n_wrench = n_wrench
        self.index = 0
        self.runner = SegmentRunner(plan.segments[0], plan.entry_speed(0), t0)
        self.done = False
        self.segment_started = [t0]
        self._ft_from = np.zeros(n_wrench)

    @property
    def segment(self) -> PlanSegment:
        return self.plan.segments[self.index]

    def reference(self) -> Reference:
        ft = self.segment.force_target
        if ft is None:
            ft = np.full(self.n_wrench, np.nan)
        elif self.segment.ramp_time > 0:
            # force targets ramp in from the previous segment's values
            w = blend_weight((self.runner.t - self.runner.t_start) / self.segment.ramp_time)
            ft = np.where(np.isnan(ft), np.nan, self._ft_from + w * (np.nan_to_num(ft) - self._ft_from))
        return Reference(self.runner.position(), self.runner.velocity(), ft,
                         self.segment.normal_load, self.index)

    def advance(self, dt: float):
        if self.done:
            return
        self.runner.advance(dt)
        if self.runner.finished and not self.segment.until_contact:
            self._next(self.runner.t + dt, None)

    def on_contact(self, t: float, position) -> bool:
        """Close the current segment if it was waiting for a contact."""
        if self.done or not self.segment.until_contact:
            return False
        self._next(t, np.asarray(position, dtype=float))
        return True

    def _next(self, t: float, anchor: Optional[np.ndarray]):
        if self.index + 1 >= len(self.plan.segments):
            self.done = True
            return
        prev = self.segment.force_target
        self._ft_from = np.zeros(self.n_wrench) if prev is None else np.nan_to_num(prev)
        self.index += 1
        seg = self.segment
        self.runner = SegmentRunner(seg, self.plan.entry_speed(self.index), t)
        if anchor is not None:
            self.runner.translate(anchor - seg.path.point(0.0))
        self.segment_started.append(t)
