"""Trial metrics, computed from the tick log and the trial's event summary only.

The one exception is ``estimate_errors``, which compares contact beliefs
with ground-truth contact positions from the scenario file and is therefore
labelled oracle-assisted.
"""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..anticipation import impact_force


def read_csv(text: str) -> dict[str, np.ndarray]:
    header, _, body = text.partition("\n")
    names = header.strip().split(",")
    if not body.strip():
        return {n: np.zeros(0) for n in names}
    arr = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    return {n: arr[:, i] for i, n in enumerate(names)}


@dataclass
class TrialReport:
    trial: int
    failed: Optional[str] = None
    completed: bool = True
    n_ticks: int = 0
    duration: float = 0.0
    rms_tracking_error: float = 0.0
    max_acceleration: float = 0.0
    max_jerk: float = 0.0
    max_acceleration_in_region: dict = field(default_factory=dict)
    max_acceleration_at_switch: dict = field(default_factory=dict)
    peak_impact_force: dict = field(default_factory=dict)
    time_in_transition: float = 0.0
    mean_kp: float = 0.0
    mean_lambda: float = 0.0
    prediction_rmse: float = math.nan
    prediction_rmse_extrapolated: float = math.nan
    mode_events: list = field(default_factory=list)
    n_modes: int = 0
    region_lengths: dict = field(default_factory=dict)
    approach_speeds: dict = field(default_factory=dict)
    estimate_errors: dict = field(default_factory=dict)    # oracle-assisted
    covariance_traces: dict = field(default_factory=dict)
    runtime: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialReport":
        return cls(**d)


def _acc(data: dict, dim: int, dt: float) -> np.ndarray:
    v = np.stack([data[f"v{a}"] for a in "xyz"[:dim]], axis=1)
    if len(v) < 2:
        return np.zeros((0, dim))
    return np.diff(v, axis=0) / dt


def compute_report(csv_text: str, summary: dict, dt: float, extrapolation_time: Optional[float] = None
                   ) -> TrialReport:
    data = read_csv(csv_text)
    dim = 3 if "pz" in data else 2
    n = len(data["tick"])
    rep = TrialReport(trial=int(summary.get("trial", 0)), failed=summary.get("failed"),
                      completed=bool(summary.get("completed", True)), n_ticks=n)
    if n == 0:
        return rep
    rep.duration = float(data["time"][-1] - data["time"][0])
    rep.rms_tracking_error = float(np.sqrt(np.mean(data["tracking_error"] ** 2)))
    acc = _acc(data, dim, dt)
    amag = np.linalg.norm(acc, axis=1)
    if amag.size:
        rep.max_acceleration = float(amag.max())
        if amag.size > 1:
            rep.max_jerk = float(np.linalg.norm(np.diff(acc, axis=0), axis=1).max() / dt)
    region = data["region"].astype(int)
    for idx in sorted(set(region[region >= 0].tolist())):
        mask = region[:-1] == idx
        if mask.any():
            rep.max_acceleration_in_region[str(idx)] = float(amag[mask].max())
    after = int(summary.get("switch_window_ticks", 1))
    before = max(after // 10, 1)
    for c in summary.get("contacts", []):
        if c["kind"] != "impact_less" or str(c["estimate"]) in rep.max_acceleration_at_switch or amag.size == 0:
            continue
        k = int(c["tick"])
        lo, hi = max(k - before, 0), min(k + after, amag.size)
        if hi > lo:
            rep.max_acceleration_at_switch[str(c["estimate"])] = float(amag[lo:hi].max())
    rep.time_in_transition = float(np.count_nonzero(data["alpha"] > 0.0) * dt)
    kp = np.stack([data[f"kp_{a}"] for a in "xyz"[:dim]], axis=1)
    rep.mean_kp = float(kp.mean())
    rep.mean_lambda = float(data["lambda"].mean())

    eps = data["epsilon"]
    valid = eps >= 0.0
    if valid.any():
        rep.prediction_rmse = float(np.sqrt(np.mean(eps[valid] ** 2)))
    if extrapolation_time is not None:
        late = valid & (data["time"] >= extrapolation_time)
        if late.any():
            rep.prediction_rmse_extrapolated = float(np.sqrt(np.mean(eps[late] ** 2)))

    forces = np.stack([data[f"f{a}"] for a in "xyz"[:dim]], axis=1)
    window = int(summary.get("impact_window_ticks", 1))
    baseline = int(summary.get("impact_baseline_ticks", 1))
    seen = set()
    for c in summary.get("contacts", []):
        if c["kind"] != "impact" or c["estimate"] in seen:
            continue
        seen.add(c["estimate"])
        into = -forces @ np.asarray(c["normal"])
        rep.peak_impact_force[str(c["estimate"])] = impact_force(into, int(c["tick"]), window, baseline)

    rep.mode_events = list(summary.get("mode_events", []))
    rep.n_modes = len({e["mode"] for e in rep.mode_events})
    rep.region_lengths = dict(summary.get("region_lengths", {}))
    for imp in summary.get("impacts", []):
        rep.approach_speeds[str(imp["estimate"])] = {k: imp.get(k) for k in ("approach_speed", "v_a_used", "v_a_next")}

    truth = summary.get("truth", [])
    prior, post = summary.get("prior", []), summary.get("posterior", [])
    for i, t in enumerate(truth):
        if t is None or i >= len(post):
            continue
        t = np.asarray(t)
        rep.estimate_errors[str(i)] = {
            "prior": float(np.linalg.norm(np.asarray(prior[i]["mean"]) - t)) if i < len(prior) else math.nan,
            "posterior": float(np.linalg.norm(np.asarray(post[i]["mean"]) - t)),
        }
    for i, e in enumerate(post):
        rep.covariance_traces[str(i)] = {
            "prior": float(np.trace(np.asarray(prior[i]["covariance"]))) if i < len(prior) else math.nan,
            "posterior": float(np.trace(np.asarray(e["covariance"]))),
        }
    return rep
