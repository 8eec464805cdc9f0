"""Contact anticipation: Gaussian beliefs over contact positions and impact-speed learning.

Contacts are with stationary objects, so the filter's process model is the
identity and a prediction only inflates the covariance by Q.  A detected
contact supplies a direct (identity) measurement of the contact position.
The k-sigma ellipsoid of a belief, cut by the planned path, is the region
in which a transition-phase controller is engaged.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .plan import ArcPath, LinePath

log = logging.getLogger(__name__)

IMPACT = "impact"
IMPACT_LESS = "impact_less"


def _check_spd(P: np.ndarray, what: str):
    if P.ndim != 2 or P.shape[0] != P.shape[1] or not np.allclose(P, P.T, atol=1e-12 * max(1.0, np.abs(P).max())):
        raise ValueError(f"{what} must be a symmetric square matrix")
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise ValueError(f"{what} must be positive definite") from None


@dataclass
class ContactEstimate:
    mean: np.ndarray
    covariance: np.ndarray
    transition_type: str = IMPACT
    plan_anchor: int = 0
    name: str = ""

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.covariance, dtype=float)
        if cov.ndim == 0 or cov.size == 1:
            cov = float(cov.reshape(-1)[0]) * np.eye(self.mean.size)
        elif cov.ndim == 1:
            cov = np.diag(cov)
        self.covariance = cov
        _check_spd(cov, "contact covariance")
        if self.transition_type not in (IMPACT, IMPACT_LESS):
            raise ValueError("transition_type must be 'impact' or 'impact_less'")

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))

    def std_along(self, direction) -> float:
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        return math.sqrt(float(d @ self.covariance @ d))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "covariance": self.covariance.tolist(),
                "transition_type": self.transition_type, "plan_anchor": self.plan_anchor, "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "ContactEstimate":
        return cls(np.array(d["mean"]), np.array(d["covariance"]), d["transition_type"],
                   int(d["plan_anchor"]), d.get("name", ""))


def kf_predict(estimate: ContactEstimate, Q=0.0) -> ContactEstimate:
    """Time update for a stationary contact: mean kept, covariance inflated by Q."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 0:
        Q = float(Q) * np.eye(estimate.mean.size)
    return replace(estimate, mean=estimate.mean.copy(), covariance=estimate.covariance + Q)


def kf_update(estimate: ContactEstimate, observed, measurement_noise) -> ContactEstimate:
    """Measurement update with the contact position observed directly.

    Args:
        estimate: prior belief.
        observed: measured contact position, or any object with a
            ``position`` attribute (a contact observation).
        measurement_noise: R_m as a scalar variance, per-axis variances or
            a full matrix.
    """
    z = np.asarray(getattr(observed, "position", observed), dtype=float).reshape(-1)
    n = estimate.mean.size
    if z.size != n:
        raise ValueError("observation and estimate dimensions differ")
    R = np.asarray(measurement_noise, dtype=float)
    if R.ndim == 0:
        R = float(R) * np.eye(n)
    elif R.ndim == 1:
        R = np.diag(R)
    _check_spd(R, "measurement noise")
    P = estimate.covariance
    S = P + R
    K = np.linalg.solve(S.T, P.T).T  # P S^-1
    mean = estimate.mean + K @ (z - estimate.mean)
    I_K = np.eye(n) - K
    cov = I_K @ P @ I_K.T + K @ R @ K.T  # Joseph form keeps it symmetric PSD
    cov = 0.5 * (cov + cov.T)
    return replace(estimate, mean=mean, covariance=cov)


@dataclass
class TransitionRegion:
    """Stretch of one plan segment inside the k-sigma ellipsoid of a contact belief."""

    segment: int
    s_entry: float
    s_exit: float
    entry: np.ndarray   # p_c
    exit: np.ndarray
    s_mean: float       # arc length of the point closest (Mahalanobis) to the mean
    transition_type: str
    estimate_index: int = -1

    @property
    def length(self) -> float:
        return self.s_exit - self.s_entry

    def contains(self, s: float) -> bool:
        return self.s_entry <= s <= self.s_exit


def _line_interval(path: LinePath, mean: np.ndarray, P_inv: np.ndarray, k: float):
    t = path.tangent(0.0)
    a = path.start - mean
    A = float(t @ P_inv @ t)
    B = float(t @ P_inv @ a)
    C = float(a @ P_inv @ a)
    s_min = -B / A
    disc = B * B - A * (C - k * k)
    if disc < 0:
        return None
    r = math.sqrt(disc) / A
    return s_min - r, s_min + r, s_min


def _sampled_interval(path, mean: np.ndarray, P_inv: np.ndarray, k: float, resolution: float):
    n = max(int(math.ceil(path.length / resolution)), 1)
    s = np.linspace(0.0, path.length, n + 1)
    pts = np.array([path.point(x) for x in s]) - mean
    d2 = np.einsum("ij,jk,ik->i", pts, P_inv, pts)
    inside = np.nonzero(d2 <= k * k)[0]
    if inside.size == 0:
        return None
    return float(s[inside[0]]), float(s[inside[-1]]), float(s[int(np.argmin(d2))])


def region_of(estimate: ContactEstimate, path, k_sigma: float = 2.0, segment: int = 0,
              clip: bool = True, resolution: float = 1e-4) -> Optional[TransitionRegion]:
    """Part of ``path`` inside the k-sigma ellipsoid of ``estimate``.

    Lines are cut analytically; arcs are sampled at ``resolution``.  With
    ``clip`` the region is limited to the path's own extent.  Returns None
    (and logs) when the path misses the ellipsoid.
    """
    if k_sigma < 0:
        raise ValueError("k_sigma must be non-negative")
    P_inv = np.linalg.inv(estimate.covariance)
    if isinstance(path, LinePath):
        if path.length == 0.0:
            return None
        hit = _line_interval(path, estimate.mean, P_inv, k_sigma)
    else:
        hit = _sampled_interval(path, estimate.mean, P_inv, k_sigma, resolution)
    if hit is None:
        log.info("plan segment %d never enters the %.1f-sigma region of %s", segment, k_sigma,
                 estimate.name or "contact")
        return None
    s0, s1, sm = hit
    if clip:
        s0, s1 = max(s0, 0.0), min(s1, path.length)
        if s1 < s0:
            log.info("region of %s lies outside segment %d", estimate.name or "contact", segment)
            return None
    return TransitionRegion(segment, s0, s1, path.point(s0), path.point(s1), sm, estimate.transition_type)


@dataclass
class ImpactModel:
    """Approach speed for one contact and the (speed, peak force) history behind it."""

    v_a: float
    beta: float
    plan_speed: float
    v_min: float = 1e-3
    use_fit: bool = True
    speeds: list = field(default_factory=list)
    forces: list = field(default_factory=list)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0 < self.v_a <= self.plan_speed:
            raise ValueError("approach speed must lie in (0, plan speed]")

    def fit(self, min_span: float = 1e-3) -> Optional[tuple[float, float]]:
        """Least-squares (slope, intercept) of peak force against speed, once two speeds span a range."""
        if len(self.speeds) < 2:
            return None
        v = np.asarray(self.speeds)
        if v.max() - v.min() < min_span:
            return None
        slope, intercept = np.polyfit(v, np.asarray(self.forces), 1)
        return float(slope), float(intercept)

    def to_dict(self) -> dict:
        return {"v_a": self.v_a, "beta": self.beta, "plan_speed": self.plan_speed, "v_min": self.v_min,
                "use_fit": self.use_fit, "speeds": list(self.speeds), "forces": list(self.forces)}

    @classmethod
    def from_dict(cls, d: dict) -> "ImpactModel":
        return cls(**d)


def update_approach_velocity(model: ImpactModel, F_d: float, F_m: float) -> ImpactModel:
    """dv_a = beta (F_d - F_m), or the fitted speed for F_d once the fit exists."""
    if F_d <= 0:
        raise ValueError("desired impact force must be positive")
    speeds = model.speeds + [model.v_a]
    forces = model.forces + [float(F_m)]
    out = replace(model, speeds=speeds, forces=forces)
    v = model.v_a + model.beta * (F_d - F_m)
    if model.use_fit:
        fit = out.fit()
        if fit is not None and fit[0] > 0:
            v = (F_d - fit[1]) / fit[0]
    out.v_a = float(min(max(v, model.v_min), model.plan_speed))
    return out


def impact_force(force_along: Sequence[float], contact_index: int, window: int, baseline: int = 20) -> float:
    """Peak force after contact minus the mean force just before it.

    Args:
        force_along: per-tick force component pushing into the contact.
        contact_index: tick at which the contact was registered.
        window: ticks after contact searched for the peak.
        baseline: ticks before contact averaged as the friction baseline.
    """
    f = np.asarray(force_along, dtype=float)
    pre = f[max(contact_index - baseline, 0):contact_index]
    base = float(pre.mean()) if pre.size else 0.0
    post = f[contact_index:contact_index + window]
    if post.size == 0:
        return 0.0
    return float(post.max()) - base


@dataclass
class AnticipationStore:
    """Everything carried between trials: contact beliefs and impact models."""

    estimates: list[ContactEstimate] = field(default_factory=list)
    impact_models: dict = field(default_factory=dict)  # estimate index -> ImpactModel

    def nearest(self, position, kind: Optional[str] = None, anchor: Optional[int] = None) -> Optional[int]:
        best, best_d = None, math.inf
        for i, e in enumerate(self.estimates):
            if kind is not None and e.transition_type != kind:
                continue
            if anchor is not None and e.plan_anchor != anchor:
                continue
            d = float(np.linalg.norm(e.mean - np.asarray(position)))
            if d < best_d:
                best, best_d = i, d
        return best

    def to_dict(self) -> dict:
        return {"estimates": [e.to_dict() for e in self.estimates],
                "impact_models": {str(k): m.to_dict() for k, m in self.impact_models.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "AnticipationStore":
        return cls([ContactEstimate.from_dict(e) for e in d["estimates"]],
                   {int(k): ImpactModel.from_dict(m) for k, m in d["impact_models"].items()})

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "AnticipationStore":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
