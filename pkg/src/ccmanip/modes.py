"""Contact-mode detection and recognition.

Each contact mode owns a forward model.  A mode change is flagged either by
a sudden jump in the sensed force or by a persistent disagreement between
the sensed force and a frozen snapshot of the active mode's model.  After a
change the controller is held stiff while a batch of friction-style
features ``|F|/R`` is collected; the batch is then matched against cluster
summaries of the known modes.  A confident match reactivates that mode, any
other outcome creates a new one with a fresh model.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .forward_model import FeatureState, IGMMConfig, InteractionEffect, MixtureModel, joint_point


@dataclass
class ModeConfig:
    batch_size: int = 50
    confidence_threshold: float = 0.9
    cluster_distance_threshold: float = 0.1
    jump_threshold: float = 1.0        # N, tick-to-tick change of |F|
    error_threshold: float = 1.0       # N, |F| against the frozen model
    error_dwell: int = 10              # ticks the error must persist
    refractory: int = 50               # ticks after a confirmed transition
    batch_delay: int = 5               # ticks skipped before collecting
    min_speed: float = 0.01            # m/s, features below are not collected
    min_normal: float = 1e-3           # N, floor on R
    learning_hold: int = 100           # extra stiff ticks while a new model warms up
    settle_ticks: int = 100            # ticks in a mode before its snapshot is frozen

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0.0 < self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must lie in (0, 1]")
        if self.cluster_distance_threshold <= 0:
            raise ValueError("cluster_distance_threshold must be positive")
        if self.error_dwell < 1:
            raise ValueError("error_dwell must be at least 1")


def mode_feature(state, normal_load: float, force_axes=None, min_normal: float = 1e-3) -> float:
    """Friction-style feature |F| / R over the motion-controlled force axes."""
    f = state.force
    if force_axes is not None:
        f = np.where(np.asarray(force_axes)[: f.size], 0.0, f)
    return float(np.linalg.norm(f)) / max(float(normal_load), min_normal)


@dataclass
class ClusterSummary:
    """Cluster feature triple (n, linear sum, squared sum)."""

    n: int
    linear_sum: np.ndarray
    squared_sum: np.ndarray

    @classmethod
    def from_points(cls, points) -> "ClusterSummary":
        x = np.asarray(points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[0] == 0:
            raise ValueError("a cluster summary needs at least one point")
        return cls(x.shape[0], x.sum(axis=0), (x * x).sum(axis=0))

    @property
    def centroid(self) -> np.ndarray:
        return self.linear_sum / self.n

    @property
    def radius(self) -> float:
        c = self.centroid
        return math.sqrt(max(float(np.sum(self.squared_sum / self.n - c * c)), 0.0))

    def merged(self, other: "ClusterSummary") -> "ClusterSummary":
        return ClusterSummary(self.n + other.n, self.linear_sum + other.linear_sum,
                              self.squared_sum + other.squared_sum)

    def to_dict(self) -> dict:
        return {"n": self.n, "linear_sum": self.linear_sum.tolist(), "squared_sum": self.squared_sum.tolist()}


@dataclass
class Mode:
    id: int
    summary: ClusterSummary
    model: MixtureModel


@dataclass
class ModeRegistry:
    config: ModeConfig = field(default_factory=ModeConfig)
    igmm: IGMMConfig = field(default_factory=IGMMConfig)
    modes: list[Mode] = field(default_factory=list)
    active_mode: Optional[int] = None

    def __len__(self) -> int:
        return len(self.modes)

    def get(self, mode_id: int) -> Mode:
        for m in self.modes:
            if m.id == mode_id:
                return m
        raise KeyError(mode_id)

    @property
    def active(self) -> Optional[Mode]:
        return None if self.active_mode is None else self.get(self.active_mode)

    def add_mode(self, summary: ClusterSummary) -> Mode:
        mode = Mode(len(self.modes), summary, MixtureModel(self.igmm))
        self.modes.append(mode)
        return mode

    def snapshot(self) -> list[dict]:
        return [{"id": m.id, "centroid": m.summary.centroid.tolist(), "radius": m.summary.radius,
                 "n": m.summary.n, "components": m.model.n_components} for m in self.modes]


@dataclass
class Classification:
    mode_id: int
    confidence: float
    runner_up: float
    new_mode: bool


def _assignment_fractions(features: np.ndarray, registry: ModeRegistry) -> np.ndarray:
    cfg = registry.config
    centroids = np.array([m.summary.centroid for m in registry.modes])
    d = np.linalg.norm(features[:, None, :] - centroids[None, :, :], axis=2)
    nearest = np.argmin(d, axis=1)
    in_range = d[np.arange(len(features)), nearest] <= cfg.cluster_distance_threshold
    counts = np.bincount(nearest[in_range], minlength=len(registry.modes))
    return counts / len(features)


def classify_batch(features: Sequence[float], registry: ModeRegistry, absorb: bool = True) -> Classification:
    """Match a batch of mode features to a known mode or open a new one.

    Args:
        features: batch of ``|F|/R`` values (or feature vectors).
        registry: known modes; mutated when ``absorb`` is set.
        absorb: fold the batch into the winning summary, or create the new
            mode, in place.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("cannot classify an empty batch")
    conf, runner = 0.0, 0.0
    best = None
    if registry.modes:
        frac = _assignment_fractions(x, registry)
        order = np.argsort(-frac, kind="stable")
        best = int(order[0])
        conf = float(frac[best])
        runner = float(frac[order[1]]) if len(order) > 1 else 0.0
    if best is not None and conf >= registry.config.confidence_threshold:
        mode = registry.modes[best]
        if absorb:
            mode.summary = mode.summary.merged(ClusterSummary.from_points(x))
            registry.active_mode = mode.id
        return Classification(mode.id, conf, runner, False)
    if absorb:
        mode = registry.add_mode(ClusterSummary.from_points(x))
        registry.active_mode = mode.id
        new_id = mode.id
    else:
        new_id = len(registry.modes)
    return Classification(new_id, conf, runner, True)


def detect_mode_change(forces: Sequence[float], predicted: Sequence[Optional[float]], cfg: ModeConfig,
                       use_error: bool = True) -> Optional[str]:
    """Check a window of sensed force magnitudes for a mode change.

    Returns ``"jump"`` when the last tick-to-tick change exceeds the jump
    threshold, ``"error"`` when the last ``error_dwell`` ticks all disagree
    with the frozen-model predictions by more than the error threshold, and
    None otherwise.  ``predicted`` entries may be None (no snapshot yet).
    """
    if len(forces) < 2:
        raise ValueError("need at least two ticks")
    if abs(forces[-1] - forces[-2]) > cfg.jump_threshold:
        return "jump"
    if use_error and len(forces) >= cfg.error_dwell:
        tail = list(zip(forces, predicted))[-cfg.error_dwell:]
        if all(p is not None and abs(f - p) > cfg.error_threshold for f, p in tail):
            return "error"
    return None


@dataclass
class ModeEvent:
    tick: int
    trigger: str
    mode: int
    confidence: float
    runner_up: float
    new_mode: bool
    dwell_ticks: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class ModeManager:
    """The hierarchical mode loop: detect, hold stiff, classify, route models.

    Phases: ``normal`` (adaptive control, active model updated every tick),
    ``collect`` (stiff, gathering the feature batch) and ``learn`` (stiff
    while a freshly spawned model gathers its first data).
    """

    def __init__(self, registry: ModeRegistry):
        self.registry = registry
        self.cfg = registry.config
        self.phase = "collect"
        self.trigger = "start"
        self.tick = 0
        self.detect_tick = 0
        self.hold_start = 0
        self.batch: list[float] = []
        self.events: list[ModeEvent] = []
        self._pending: Optional[ModeEvent] = None
        self._since_change = 0
        self._hold_left = 0
        self._skip = self.cfg.batch_delay
        self._frozen: Optional[MixtureModel] = None
        cap = max(self.cfg.error_dwell, 2)
        self._forces: deque = deque(maxlen=cap)
        self._preds: deque = deque(maxlen=cap)

    @property
    def stiff(self) -> bool:
        return self.phase != "normal"

    @property
    def model(self) -> Optional[MixtureModel]:
        mode = self.registry.active
        return None if mode is None else mode.model

    def start_trial(self):
        """A new trial begins from rest: its first batch identifies the mode."""
        self.tick = 0
        self._begin_collect("start")
        self._forces.clear()
        self._preds.clear()

    def _begin_collect(self, trigger: str):
        self.phase = "collect"
        self.trigger = trigger
        self.detect_tick = self.tick
        self.hold_start = self.tick
        self.batch = []
        self._skip = self.cfg.batch_delay
        self._frozen = None

    def observe(self, state, normal_load: float, force_axes, prev_feature: Optional[FeatureState],
                feature: FeatureState) -> Optional[str]:
        """Advance one tick with the latest measurement; returns a detection trigger if any."""
        self.tick += 1
        self._since_change += 1
        f_now = feature.force_mag
        pred = None
        if self._frozen is not None and prev_feature is not None:
            p = self._frozen.predict(prev_feature)
            pred = None if p is None else p.effect.force_mag
        self._forces.append(f_now)
        self._preds.append(pred)

        trigger = None
        if len(self._forces) >= 2 and self._since_change > self.cfg.refractory:
            trigger = detect_mode_change(list(self._forces), list(self._preds), self.cfg,
                                         use_error=self.phase == "normal")
        if trigger is not None:
            if self.phase == "normal":
                self._begin_collect(trigger)
            elif self.phase == "collect":
                self.batch = []
                self._skip = self.cfg.batch_delay
            # a jump while learning a fresh model is the model's own settling; ignore
            if self.phase == "collect":
                self._forces.clear()
                self._preds.clear()
                self._forces.append(f_now)
                self._preds.append(None)
                return trigger

        if self.phase == "collect":
            if self._skip > 0:
                self._skip -= 1
            elif float(np.linalg.norm(state.linear_velocity)) >= self.cfg.min_speed:
                self.batch.append(mode_feature(state, normal_load, force_axes, self.cfg.min_normal))
            if len(self.batch) >= self.cfg.batch_size:
                self._classify()
        elif self.phase == "learn":
            self._hold_left -= 1
            if self._hold_left <= 0:
                self._finish_hold()
        elif self._frozen is None and self._since_change >= self.cfg.settle_ticks:
            m = self.model
            if m is not None and m.n_components > 0:
                self._frozen = m.frozen_copy()
        return trigger

    def _classify(self):
        result = classify_batch(self.batch, self.registry)
        self._pending = ModeEvent(self.detect_tick, self.trigger, result.mode_id, result.confidence,
                                  result.runner_up, result.new_mode)
        self._since_change = 0
        if result.new_mode and self.cfg.learning_hold > 0:
            self.phase = "learn"
            self._hold_left = self.cfg.learning_hold
        else:
            self._finish_hold()

    def _finish_hold(self):
        self.phase = "normal"
        self._since_change = 0
        self._forces.clear()
        self._preds.clear()
        if self._pending is not None:
            self._pending.dwell_ticks = self.tick - self.hold_start
            self.events.append(self._pending)
            self._pending = None

    def learn(self, prev_feature: Optional[FeatureState], effect: InteractionEffect):
        """Online update of the active mode's model (skipped while collecting)."""
        if self.phase == "collect" or prev_feature is None:
            return
        m = self.model
        if m is not None:
            m.update(joint_point(prev_feature, effect))

    def write_log(self, path):
        with open(path, "w") as fh:
            for ev in self.events:
                fh.write(ev.to_json() + "\n")
