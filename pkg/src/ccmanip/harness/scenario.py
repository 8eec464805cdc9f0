"""Declarative scenario files (YAML) and their conversion into runtime objects."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from ..agent import AgentConfig
from ..anticipation import ContactEstimate
from ..controller import GainConfig
from ..forward_model import IGMMConfig
from ..modes import ModeConfig
from ..plan import ArcPath, LinePath, MotionPlan, PlanSegment
from ..sim import EnvironmentSpec, FrictionRegion, Porridge, SimConfig, Spring, Wall
from ..transition import TransitionConfig

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def _nan_list(values) -> Optional[np.ndarray]:
    if values is None:
        return None
    return np.array([math.nan if v is None else float(v) for v in values])


def build_environment(d: dict) -> EnvironmentSpec:
    d = dict(d)
    porridge = d.pop("porridge", None)
    springs = d.pop("springs", [])
    regions = d.pop("friction_regions", [])
    walls = d.pop("walls", [])
    return EnvironmentSpec(
        springs=[Spring(**s) for s in springs],
        porridge=None if porridge is None else Porridge(**porridge),
        friction_regions=[FrictionRegion(**r) for r in regions],
        walls=[Wall(**w) for w in walls],
        **d,
    )


def _path(d: dict):
    kind = d.get("type", "line")
    if kind == "line":
        return LinePath(d["start"], d["end"])
    if kind == "arc":
        return ArcPath(d["center"], float(d["radius"]), float(d["start_angle"]), float(d["sweep"]),
                       tuple(d.get("axes", (0, 1))))
    raise ValueError(f"unknown path type {kind!r}")


def build_plan(d: dict) -> MotionPlan:
    segments = []
    for _ in range(int(d.get("repeat", 1))):
        for s in d["segments"]:
            segments.append(PlanSegment(
                path=_path(s),
                speed=float(s["speed"]),
                force_target=_nan_list(s.get("force_target")),
                normal_load=float(s.get("normal_load", 0.0)),
                until_contact=bool(s.get("until_contact", False)),
                start_from_rest=bool(s.get("start_from_rest", False)),
                ramp_time=float(s.get("ramp_time", 0.5)),
                name=s.get("name", ""),
            ))
    return MotionPlan(segments, d.get("name", ""))


def plan_to_dict(plan: MotionPlan) -> dict:
    """Inverse of ``build_plan`` (used to export re-timed or reversed plans)."""
    segs = []
    for s in plan.segments:
        p = s.path
        if isinstance(p, LinePath):
            pd = {"type": "line", "start": p.start.tolist(), "end": p.end.tolist()}
        else:
            pd = {"type": "arc", "center": p.center.tolist(), "radius": p.radius, "start_angle": p.start_angle,
                  "sweep": p.sweep, "axes": list(p.axes)}
        pd.update({"speed": s.speed, "normal_load": s.normal_load, "until_contact": s.until_contact,
                   "start_from_rest": s.start_from_rest, "ramp_time": s.ramp_time, "name": s.name})
        if s.force_target is not None:
            pd["force_target"] = [None if math.isnan(v) else float(v) for v in s.force_target]
        segs.append(pd)
    return {"name": plan.name, "segments": segs}


@dataclass
class ContactPrior:
    estimate: ContactEstimate
    truth: Optional[np.ndarray]


@dataclass
class Scenario:
    name: str
    environment: EnvironmentSpec
    plan: MotionPlan
    sim: SimConfig
    agent: AgentConfig
    trials: int = 1
    seed: int = 0
    contacts: list[ContactPrior] = field(default_factory=list)
    persist_models: bool = True
    persist_estimates: bool = True
    reverse_trials: list[int] = field(default_factory=list)
    pretrain: Optional[dict] = None
    settle_ticks: int = 0
    checks: list[dict] = field(default_factory=list)
    raw: dict = field(default_factory=dict)
    source: Optional[Path] = None

    def plan_for(self, trial: int) -> MotionPlan:
        return self.plan.reversed() if trial in self.reverse_trials else self.plan


def _deep_update(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def scenario_from_dict(d: dict, overrides: Optional[dict] = None, source=None) -> Scenario:
    if overrides:
        d = _deep_update(d, overrides)
    env = build_environment(d["environment"])
    plan = build_plan(d["plan"])
    sim = SimConfig(**d.get("sim", {}))
    g = dict(d["gains"])
    gains = GainConfig(**g)
    igmm = IGMMConfig(**d.get("igmm", {}))
    modes = d.get("modes")
    ant = dict(d.get("anticipation", {}))
    contacts_raw = ant.pop("contacts", [])
    agent = AgentConfig(
        gains=gains,
        igmm=igmm,
        modes=None if modes is None else ModeConfig(**modes),
        transition=TransitionConfig(**d.get("transition", {})),
        controller=d.get("controller", "avic"),
        model_policy=d.get("model_policy", "incremental"),
        fixed_kp=None if d.get("fixed_kp") is None else np.asarray(d["fixed_kp"], dtype=float),
        **ant,
    )
    contacts = []
    for c in contacts_raw:
        std = np.asarray(c["std"], dtype=float) * np.ones(env.dim)
        est = ContactEstimate(np.asarray(c["mean"], dtype=float), np.diag(std ** 2), c.get("type", "impact"),
                              int(c.get("segment", 0)), c.get("name", ""))
        truth = c.get("truth")
        contacts.append(ContactPrior(est, None if truth is None else np.asarray(truth, dtype=float)))
    persist = d.get("persist", {})
    return Scenario(
        name=d.get("name", "scenario"),
        environment=env,
        plan=plan,
        sim=sim,
        agent=agent,
        trials=int(d.get("trials", 1)),
        seed=int(d.get("seed", sim.rng_seed)),
        contacts=contacts,
        persist_models=bool(persist.get("models", True)),
        persist_estimates=bool(persist.get("estimates", True)),
        reverse_trials=list(d.get("reverse_trials", [])),
        pretrain=d.get("pretrain"),
        settle_ticks=int(d.get("settle_ticks", 0)),
        checks=list(d.get("checks", [])),
        raw=d,
        source=None if source is None else Path(source),
    )


def resolve(path_or_name) -> Path:
    """A scenario path, or the name of a bundled scenario."""
    p = Path(path_or_name)
    if p.exists():
        return p
    bundled = SCENARIO_DIR / (p.name if p.suffix else p.name + ".yaml")
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"no scenario at {path_or_name!s}")


def load_scenario(path_or_name, overrides: Optional[dict] = None) -> Scenario:
    path = resolve(path_or_name)
    with open(path) as fh:
        d = yaml.safe_load(fh)
    return scenario_from_dict(d, overrides, source=path)


def bundled_scenarios() -> list[str]:
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))
