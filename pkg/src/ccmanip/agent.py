"""Per-tick control loop tying the learning, mode and anticipation layers together.

One ``Agent`` persists across trials (models, mode clusters, contact beliefs
and impact speeds carry over); ``start_trial``/``finish_trial`` bracket each
run of the plan and ``step`` is called once per control tick.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .anticipation import (IMPACT, IMPACT_LESS, AnticipationStore, ContactEstimate, ImpactModel,
                           TransitionRegion, impact_force, kf_predict, kf_update, region_of,
                           update_approach_velocity)
from .controller import (AdaptiveImpedance, GainConfig, fixed_gain_control, gravity_compensation,
                         impedance_wrench)
from .forward_model import (FeatureState, IGMMConfig, InteractionEffect, MixtureModel, direction_recovery,
                            joint_point, prediction_error)
from .modes import ModeConfig, ModeManager, ModeRegistry
from .plan import MotionPlan, PlanExecutor
from .profile import profile_distance
from .transition import BlendSchedule, TransitionConfig, blend, deceleration_start, transition_gains

log = logging.getLogger(__name__)

CONTROLLERS = ("avic", "fixed_gain", "avic_no_anticipation")
MODEL_POLICIES = ("incremental", "frozen_pretrained")


@dataclass
class AgentConfig:
    gains: GainConfig
    igmm: IGMMConfig = field(default_factory=IGMMConfig)
    modes: Optional[ModeConfig] = None
    transition: TransitionConfig = field(default_factory=TransitionConfig)
    controller: str = "avic"
    model_policy: str = "incremental"
    fixed_kp: Optional[np.ndarray] = None
    anticipation: bool = True
    measurement_std: float = 0.08
    process_std: float = 0.0
    desired_impact_force: float = 8.0
    beta: float = 0.002
    approach_speed: float = 0.05
    use_impact_fit: bool = True
    impact_window: float = 0.1
    impact_baseline: float = 0.04
    impact_less_prior_std: float = 0.2
    impact_less_gate: float = 0.1
    switch_window: float = 0.5  # seconds after a surface switch scanned by the metrics

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.model_policy not in MODEL_POLICIES:
            raise ValueError(f"model policy must be one of {MODEL_POLICIES}")
        if self.controller == "avic_no_anticipation":
            self.anticipation = False

    @property
    def measurement_noise(self) -> float:
        return self.measurement_std ** 2


@dataclass
class _Transition:
    region: TransitionRegion
    estimate: int
    kind: str
    s_start: float
    window: float
    target_speed: Optional[float]
    kp: np.ndarray
    kd: np.ndarray
    blend: Optional[BlendSchedule] = None
    release: Optional[BlendSchedule] = None
    contact_time: Optional[float] = None

    def alpha(self, t: float) -> float:
        if self.release is not None:
            return self.release.alpha(t)
        if self.blend is not None:
            return self.blend.alpha(t)
        return 0.0


@dataclass
class ContactRecord:
    estimate: int
    kind: str
    tick: int
    time: float
    position: list
    normal: list
    approach_speed: float
    commanded_speed: Optional[float]


class Agent:
    def __init__(self, cfg: AgentConfig, dim: int, mass: float, gravity, dt: float,
                 store: Optional[AnticipationStore] = None, model: Optional[MixtureModel] = None):
        self.cfg = cfg
        self.dim = dim
        self.n_wrench = 3 if dim == 2 else 6
        self.dt = dt
        self.H = gravity_compensation(gravity, mass, self.n_wrench)
        self.store = store or AnticipationStore()
        self.model = model if model is not None else MixtureModel(cfg.igmm)
        self.registry = ModeRegistry(cfg.modes, cfg.igmm) if cfg.modes is not None else None
        self.modes = ModeManager(self.registry) if self.registry is not None else None
        gcfg = cfg.gains
        gcfg.effector_mass = mass
        self.gains = gcfg
        self.trial = -1

    # ---- trial bracket ---------------------------------------------------

    def add_contact(self, estimate: ContactEstimate, plan_speed: float) -> int:
        self.store.estimates.append(estimate)
        idx = len(self.store.estimates) - 1
        if estimate.transition_type == IMPACT:
            v_a = min(self.cfg.approach_speed, plan_speed)
            self.store.impact_models[idx] = ImpactModel(v_a, self.cfg.beta, plan_speed,
                                                        use_fit=self.cfg.use_impact_fit)
        return idx

    def start_trial(self, plan: MotionPlan, t0: float = 0.0):
        self.trial += 1
        self.plan = plan
        self.exec = PlanExecutor(plan, self.n_wrench, t0)
        self.ctrl = AdaptiveImpedance(self.gains, self.dt)
        self.prev_feature: Optional[FeatureState] = None
        self.pred = None
        self.tick = 0
        self.forces: list[np.ndarray] = []
        self.speeds: list[float] = []
        self.contacts: list[ContactRecord] = []
        self.transitions_log: list[dict] = []
        q = self.cfg.process_std ** 2
        if q > 0:
            self.store.estimates = [kf_predict(e, q) for e in self.store.estimates]
        self.prior = [e.to_dict() for e in self.store.estimates]
        self.regions: list[_Transition] = []
        self.region_lengths: dict[int, float] = {}
        self.active: Optional[_Transition] = None
        self._done_regions: set[int] = set()
        self._flag_hold: Optional[tuple[int, float]] = None
        self._segment = -1
        self._event_offset = 0
        if self.modes is not None:
            self.modes.start_trial()
            self._event_offset = len(self.modes.events)
        self._last_mode = None if self.modes is None else self.registry.active_mode

    @property
    def done(self) -> bool:
        return self.exec.done

    def current_model(self) -> Optional[MixtureModel]:
        return self.modes.model if self.modes is not None else self.model

    # ---- regions ---------------------------------------------------------

    def _plan_regions(self):
        idx = self.exec.index
        run = self.exec.runner
        seg = self.exec.segment
        self.regions = []
        for i, est in enumerate(self.store.estimates):
            if est.plan_anchor != idx or i in self._done_regions:
                continue
            reg = region_of(est, run.path, self.cfg.transition.k_sigma, idx)
            if reg is None:
                continue
            reg.estimate_index = i
            self.region_lengths.setdefault(i, reg.length)
            v1 = seg.speed
            tg = transition_gains(est.transition_type, self.gains, self.cfg.transition,
                                  self.store.impact_models.get(i))
            v2 = v1 if tg.target_speed is None else min(tg.target_speed, v1)
            T = self.cfg.transition.blend_time
            if T is None:
                T = max(0.5 * reg.length / v1, self.cfg.transition.min_blend_time)
            s_start, T = deceleration_start(reg.s_entry, v1, v2, T, self.dt)
            self.regions.append(_Transition(reg, i, est.transition_type, s_start, T,
                                            None if tg.target_speed is None else v2, tg.kp, tg.kd))
        self.regions.sort(key=lambda r: r.s_start)

    def _region_flag(self, t: float) -> int:
        # an impact keeps its region flagged for the impact window after the contact
        if self._flag_hold is not None and t <= self._flag_hold[1]:
            return self._flag_hold[0]
        s = self.exec.runner.s
        for tr in self.regions:
            if tr.region.contains(s):
                return tr.estimate
        return -1

    def _advance_transition(self, t: float):
        run = self.exec.runner
        if self.active is None and self.cfg.anticipation:
            for tr in self.regions:
                if tr.estimate in self._done_regions:
                    continue
                if run.s >= tr.s_start and run.s <= tr.region.s_exit + 1e-9:
                    tr.blend = BlendSchedule(t, tr.window)
                    if tr.target_speed is not None:
                        run.schedule.add(t, tr.window, tr.target_speed)
                    self.active = tr
                    self.transitions_log.append({"event": "enter", "time": t, "estimate": tr.estimate,
                                                 "kind": tr.kind, "s": run.s, "window": tr.window})
                    break
        tr = self.active
        if tr is None or tr.release is not None:
            if tr is not None and tr.release.done(t):
                self._done_regions.add(tr.estimate)
                self.transitions_log.append({"event": "exit", "time": t, "estimate": tr.estimate})
                self.active = None
            return
        if tr.kind == IMPACT_LESS:
            left_segment = self.exec.index != tr.region.segment
            past = left_segment or run.s >= tr.region.s_exit
            held = tr.contact_time is None or t - tr.contact_time >= self.cfg.transition.hold_after_contact
            if past and held:
                self._release(t)

    def _release(self, t: float):
        tr = self.active
        if tr is not None and tr.release is None:
            a0 = tr.alpha(t)
            tr.release = BlendSchedule(t - (1.0 - a0) * self.cfg.transition.release_time,
                                       self.cfg.transition.release_time, rising=False)

    # ---- events ----------------------------------------------------------

    def _on_event(self, event, state):
        seg_index = self.exec.index
        speed = float(np.linalg.norm(self.prev_velocity)) if self.tick > 0 else 0.0
        if event.kind == IMPACT:
            run = self.exec.runner
            if self.exec.done or float(np.dot(event.normal[: self.dim], run.path.tangent(run.s))) > -0.3:
                return  # touching something the plan is not moving into (e.g. settling back onto a surface)
            idx = self.store.nearest(event.position, IMPACT, seg_index)
            if idx is None:
                idx = self.store.nearest(event.position, IMPACT)
            commanded = None
            if idx is not None:
                im = self.store.impact_models.get(idx)
                commanded = im.v_a if (im is not None and self.cfg.anticipation) else None
                self.store.estimates[idx] = kf_update(self.store.estimates[idx], event, self.cfg.measurement_noise)
            if idx is not None:
                self._flag_hold = (idx, event.time + self.cfg.impact_window)
            self.contacts.append(ContactRecord(-1 if idx is None else idx, IMPACT, self.tick, event.time,
                                               event.position.tolist(), event.normal.tolist(), speed, commanded))
            self.exec.on_contact(event.time, event.position)
            if self.active is not None and self.active.kind == IMPACT:
                self.active.contact_time = event.time
                self._release(event.time)
            elif self.active is None:
                # the contact came before its region was reached
                if idx is not None:
                    self._done_regions.add(idx)
            return
        idx = None
        best = self.store.nearest(event.position, IMPACT_LESS)
        if best is not None:
            est = self.store.estimates[best]
            gate = max(self.cfg.impact_less_gate, 3.0 * math.sqrt(np.linalg.eigvalsh(est.covariance).max()))
            if np.linalg.norm(est.mean - event.position) <= gate:
                idx = best
        if idx is None:
            prior = ContactEstimate(event.position.copy(), self.cfg.impact_less_prior_std ** 2 * np.eye(self.dim),
                                    IMPACT_LESS, seg_index, f"surface-change-{len(self.store.estimates)}")
            idx = self.add_contact(prior, self.exec.segment.speed)
            self._done_regions.add(idx)  # discovered now, anticipated from the next trial
        self.store.estimates[idx] = kf_update(self.store.estimates[idx], event, self.cfg.measurement_noise)
        self.contacts.append(ContactRecord(idx, IMPACT_LESS, self.tick, event.time, event.position.tolist(),
                                           event.normal.tolist(), speed, None))
        if self.active is not None and self.active.estimate == idx:
            self.active.contact_time = event.time

    # ---- the tick --------------------------------------------------------

    def step(self, state, event=None) -> np.ndarray:
        """Control wrench for measured ``state``; ``event`` is the contact reported by the last step."""
        t = state.time
        if event is not None:
            self._on_event(event, state)
        if self.exec.index != self._segment:
            self._segment = self.exec.index
            self._plan_regions()

        ref = self.exec.reference()
        force_axes = ~np.isnan(ref.force_target)
        feature = FeatureState.from_state(state, force_axes)
        effect = InteractionEffect.from_feature(feature)

        eps = None
        if self.pred is not None:
            eps = prediction_error(self.pred.effect, effect, self.gains.torque_scale)

        stiff = False
        if self.modes is not None:
            self.modes.observe(state, ref.normal_load, force_axes, self.prev_feature, feature)
            stiff = self.modes.stiff
            if self.modes.phase == "collect" or self.registry.active_mode != self._last_mode:
                self._last_mode = self.registry.active_mode
                self.pred = None
                eps = None
                self.ctrl.reset_error()

        model = self.current_model()
        if (self.cfg.model_policy == "incremental" and self.prev_feature is not None and model is not None
                and not model.frozen):
            if self.modes is not None:
                self.modes.learn(self.prev_feature, effect)
            else:
                model.update(joint_point(self.prev_feature, effect))

        # feed-forward for this tick from the prediction of the next effect
        w_pred = None
        self.pred = None
        if model is not None and not (self.modes is not None and self.modes.phase == "collect"):
            self.pred = model.predict(feature)
        if self.pred is not None:
            vref = ref.velocity
            speed = max(float(np.linalg.norm(vref)), float(np.linalg.norm(state.linear_velocity)))
            direction = vref if np.linalg.norm(vref) > 0 else state.linear_velocity
            dn = float(np.linalg.norm(direction))
            if dn > 0:
                w_pred = -direction_recovery(self.pred.effect, direction / dn, speed, self.gains.dead_band)

        if self.cfg.controller == "fixed_gain":
            kp = self.gains.kp_free if self.cfg.fixed_kp is None else np.asarray(self.cfg.fixed_kp, dtype=float)
            u_fc = self.ctrl.force(ref.force_target, state.measured_wrench,
                                   np.concatenate([state.linear_velocity, state.angular_velocity]), self.dt)
            self.ctrl.last_fc = u_fc
            u1 = fixed_gain_control(state, ref, kp * np.ones(self.n_wrench), self.gains, self.H, u_fc)
            self.ctrl.state.kp = kp * np.ones(self.n_wrench)
            self.ctrl.state.lam = 0.0
            lam_used = 0.0
            w_pred = None
        else:
            lam_used = 0.0 if stiff else self.ctrl.state.lam
            u1 = self.ctrl.output(state, ref, w_pred, self.H, force_max=stiff)
        self.ctrl.observe_error(eps)

        self._advance_transition(t)
        alpha = 0.0
        u = u1
        if self.active is not None:
            alpha = self.active.alpha(t)
            if alpha > 0.0:
                tr = self.active
                u2 = impedance_wrench(state, ref.position, ref.velocity, tr.kp, tr.kd, None, self.H,
                                      force_axes, self.ctrl.last_fc)
                u = blend(u1, u2, alpha, 1.0)

        dx_motion = np.where(force_axes[: self.dim], 0.0, ref.position - state.position)
        self.diag = {
            "lambda": lam_used,
            "kp": self.ctrl.state.kp[: self.dim].copy(),
            "epsilon": -1.0 if eps is None else eps,
            "ff": 0.0 if w_pred is None else float(np.linalg.norm(w_pred)),
            "mode": -1 if self.modes is None or self.registry.active_mode is None else self.registry.active_mode,
            "stiff": int(stiff),
            "alpha": alpha,
            "region": self._region_flag(t),
            "segment": self.exec.index,
            "ref_position": ref.position.copy(),
            "ref_velocity": ref.velocity.copy(),
            "force_axes": int(sum(1 << i for i, f in enumerate(force_axes) if f)),
            "tracking_error": float(np.linalg.norm(dx_motion)),
            "normal_load": ref.normal_load,
        }
        self.prev_feature = feature
        self.prev_velocity = state.linear_velocity.copy()
        self.forces.append(state.force.copy())
        self.exec.advance(self.dt)
        self.tick += 1
        return u

    # ---- after the trial -------------------------------------------------

    def finish_trial(self) -> dict:
        """Fold the trial's impacts into the approach-speed models; return the trial summary."""
        window = max(int(round(self.cfg.impact_window / self.dt)), 1)
        baseline = max(int(round(self.cfg.impact_baseline / self.dt)), 1)
        forces = np.array(self.forces) if self.forces else np.zeros((0, self.dim))
        impacts = []
        seen = set()
        for c in self.contacts:
            if c.kind != IMPACT or c.estimate in seen:
                continue
            seen.add(c.estimate)
            into = -forces @ np.asarray(c.normal)
            f_m = impact_force(into, c.tick, window, baseline)
            entry = {"estimate": c.estimate, "tick": c.tick, "F_m": f_m, "approach_speed": c.approach_speed,
                     "commanded_speed": c.commanded_speed}
            im = self.store.impact_models.get(c.estimate)
            if im is not None and self.cfg.anticipation:
                entry["v_a_used"] = im.v_a
                self.store.impact_models[c.estimate] = update_approach_velocity(
                    im, self.cfg.desired_impact_force, f_m)
                entry["v_a_next"] = self.store.impact_models[c.estimate].v_a
            impacts.append(entry)
        return {
            "trial": self.trial,
            "impact_window_ticks": window,
            "impact_baseline_ticks": baseline,
            "switch_window_ticks": max(int(round(self.cfg.switch_window / self.dt)), 1),
            "contacts": [c.__dict__ for c in self.contacts],
            "impacts": impacts,
            "prior": self.prior,
            "posterior": [e.to_dict() for e in self.store.estimates],
            "region_lengths": {str(k): v for k, v in sorted(self.region_lengths.items())},
            "transitions": self.transitions_log,
            "mode_events": [] if self.modes is None else [e.__dict__.copy() for e in self.modes.events[self._event_offset:]],
        }
