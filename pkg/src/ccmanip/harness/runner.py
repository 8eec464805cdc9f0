"""Trial execution: simulator + agent, one CSV row per tick."""

from __future__ import annotations

import copy
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..agent import Agent
from ..controller import ControllerFault
from ..forward_model import MixtureModel, fit_batch
from ..sim import RobotState, SimulationDiverged, Simulator
from .metrics import TrialReport, compute_report
from .scenario import Scenario, build_environment

log = logging.getLogger(__name__)


def _fmt(x) -> str:
    return repr(float(x))


def columns(dim: int) -> list[str]:
    ax = "xyz"[:dim]
    n_wrench = 3 if dim == 2 else 6
    wr = [f"f{a}" for a in ax] + (["tz"] if dim == 2 else ["tx", "ty", "tz"])
    cols = ["tick", "time"]
    cols += [f"p{a}" for a in ax] + [f"v{a}" for a in ax] + wr + [f"u{i}" for i in range(n_wrench)]
    cols += [f"ref_p{a}" for a in ax] + [f"ref_v{a}" for a in ax]
    cols += ["lambda"] + [f"kp_{a}" for a in ax]
    cols += ["epsilon", "ff", "mode", "stiff", "alpha", "region", "segment", "force_axes", "normal_load",
             "tracking_error"]
    return cols


@dataclass
class TrialLog:
    dim: int
    rows: list[list[str]] = field(default_factory=list)

    def add(self, state: RobotState, u: np.ndarray, diag: dict, tick: int):
        r = [str(tick), _fmt(state.time)]
        r += [_fmt(v) for v in state.position]
        r += [_fmt(v) for v in state.linear_velocity]
        r += [_fmt(v) for v in state.measured_wrench]
        r += [_fmt(v) for v in u]
        r += [_fmt(v) for v in diag["ref_position"]]
        r += [_fmt(v) for v in diag["ref_velocity"]]
        r += [_fmt(diag["lambda"])] + [_fmt(v) for v in diag["kp"]]
        r += [_fmt(diag["epsilon"]), _fmt(diag["ff"]), str(diag["mode"]), str(diag["stiff"]),
              _fmt(diag["alpha"]), str(diag["region"]), str(diag["segment"]), str(diag["force_axes"]),
              _fmt(diag["normal_load"]), _fmt(diag["tracking_error"])]
        self.rows.append(r)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(columns(self.dim)) + "\n")
        for r in self.rows:
            buf.write(",".join(r) + "\n")
        return buf.getvalue()


@dataclass
class TrialResult:
    report: TrialReport
    csv: str
    summary: dict


def run_trial(agent: Agent, scenario: Scenario, trial: int, env=None, sim_cfg=None, plan=None) -> TrialResult:
    env = env or scenario.environment
    sim_cfg = copy.copy(sim_cfg or scenario.sim)
    sim_cfg.rng_seed = scenario.seed + trial
    plan = plan or scenario.plan_for(trial)
    sim = Simulator(env, sim_cfg, RobotState.at_rest(plan.start))
    agent.start_trial(plan)
    trial_log = TrialLog(env.dim)
    state = sim.observe()
    event = None
    failure = None
    wall0 = time.perf_counter()
    extra = scenario.settle_ticks
    try:
        for tick in range(sim_cfg.trial_length):
            u = agent.step(state, event)
            trial_log.add(state, u, agent.diag, tick)
            load = agent.diag["normal_load"] if env.dim == 2 else None
            state, event = sim.step(u, load)
            if agent.done:
                extra -= 1
                if extra < 0:
                    break
    except (SimulationDiverged, ControllerFault, np.linalg.LinAlgError) as exc:
        failure = f"{type(exc).__name__}: {exc}"
        log.warning("trial %d of %s failed: %s", trial, scenario.name, failure)
    summary = agent.finish_trial()
    summary["failed"] = failure
    summary["completed"] = agent.done
    summary["truth"] = [None if c.truth is None else c.truth.tolist() for c in scenario.contacts]
    csv_text = trial_log.to_csv()
    report = compute_report(csv_text, summary, sim_cfg.timestep, extrapolation_time=_extrapolation_time(env, sim_cfg))
    report.runtime = time.perf_counter() - wall0
    return TrialResult(report, csv_text, summary)


def _extrapolation_time(env, sim_cfg) -> Optional[float]:
    p = env.porridge
    if p is None or p.viscosity_rate <= 0:
        return None
    threshold = 80.0
    if p.viscosity_start >= threshold:
        return 0.0
    return (threshold - p.viscosity_start) / p.viscosity_rate * sim_cfg.timestep


def make_agent(scenario: Scenario) -> Agent:
    env = scenario.environment
    agent = Agent(copy.deepcopy(scenario.agent), env.dim, env.effector_mass, env.gravity, scenario.sim.timestep)
    for c in scenario.contacts:
        seg = scenario.plan.segments[c.estimate.plan_anchor]
        agent.add_contact(copy.deepcopy(c.estimate), seg.speed)
    return agent


def collect_points(result: TrialResult, dim: int) -> np.ndarray:
    """Joint [S_{t-1}, D_t] points re-derived from a trial log (for batch fitting)."""
    from .metrics import read_csv
    data = read_csv(result.csv)
    v = np.stack([data[f"v{a}"] for a in "xyz"[:dim]], axis=1)
    f = np.stack([data[f"f{a}"] for a in "xyz"[:dim]], axis=1)
    mask = data["force_axes"].astype(int)
    for i in range(dim):
        f[(mask >> i) & 1 == 1, i] = 0.0
    tcols = ["tz"] if dim == 2 else ["tx", "ty", "tz"]
    tq = np.stack([data[c] for c in tcols], axis=1)
    S = np.column_stack([np.linalg.norm(v, axis=1), np.zeros(len(v)), np.linalg.norm(f, axis=1),
                         np.linalg.norm(tq, axis=1)])
    return np.column_stack([S[:-1], S[1:, 2:]])


def pretrain(agent: Agent, scenario: Scenario) -> Optional[TrialResult]:
    """Run the training environment once, then install the model the policy asks for."""
    if scenario.pretrain is None:
        return None
    env = build_environment({**scenario.raw["environment"], **scenario.pretrain.get("environment", {})})
    sim_cfg = copy.copy(scenario.sim)
    sim_cfg.trial_length = int(scenario.pretrain.get("trial_length", sim_cfg.trial_length))
    policy = agent.cfg.model_policy
    agent.cfg.model_policy = "incremental"
    result = run_trial(agent, scenario, -1, env=env, sim_cfg=sim_cfg)
    agent.cfg.model_policy = policy
    agent.trial = -1
    if policy == "frozen_pretrained":
        points = collect_points(result, env.dim)
        n = int(scenario.pretrain.get("n_components", 5))
        agent.model = fit_batch(points, n, agent.cfg.igmm)
    return result


def run_scenario(scenario: Scenario, out_dir=None, on_trial=None) -> list[TrialReport]:
    """Run every trial of ``scenario``; failed trials are reported, not raised."""
    agent = make_agent(scenario)
    pretrain(agent, scenario)
    reports = []
    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for k in range(scenario.trials):
        if k > 0 and not scenario.persist_models:
            fresh = make_agent(scenario)
            fresh.store = agent.store if scenario.persist_estimates else fresh.store
            fresh.trial = agent.trial
            agent = fresh
        elif k > 0 and not scenario.persist_estimates:
            agent.store = make_agent(scenario).store
        result = run_trial(agent, scenario, k)
        reports.append(result.report)
        if out is not None:
            write_trial(out, k, result)
        if on_trial is not None:
            on_trial(k, result)
    if out is not None:
        from .report import save_reports
        save_reports(reports, out / "reports.json")
    return reports


def write_trial(out: Path, k: int, result: TrialResult):
    (out / f"trial_{k:02d}.csv").write_text(result.csv)
    with open(out / f"trial_{k:02d}.json", "w") as fh:
        json.dump(result.summary, fh, indent=1, sort_keys=True, default=float)
    with open(out / f"trial_{k:02d}_modes.jsonl", "w") as fh:
        for ev in result.summary.get("mode_events", []):
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
