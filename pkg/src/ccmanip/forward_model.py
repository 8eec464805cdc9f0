"""Incremental Gaussian mixture forward model with mixture-regression prediction.

Points live in a 6D space: four magnitudes describing the previous tick
(linear speed, angular speed, force, torque) followed by the force and
torque magnitudes measured one tick later.  Conditioning the joint mixture
on the first block gives a one-step prediction of the second.

The online learner follows the incremental GMM family: a point that is
unlikely under every component (normalised likelihood below
``novelty_threshold``) seeds a new component; otherwise all components are
moved towards it with responsibility-weighted single-pass EM statistics.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

N_STATE = 4
N_EFFECT = 2
N_DIM = N_STATE + N_EFFECT
FORMAT_NAME = "ccmanip.mixture"
FORMAT_VERSION = 1

_LOG_2PI = math.log(2.0 * math.pi)


class FrozenModelError(RuntimeError):
    """Raised when a pre-trained (frozen) model is asked to learn."""


@dataclass(frozen=True)
class FeatureState:
    lin_speed: float
    ang_speed: float
    force_mag: float
    torque_mag: float

    def __post_init__(self):
        if min(self.lin_speed, self.ang_speed, self.force_mag, self.torque_mag) < 0:
            raise ValueError("feature magnitudes must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.lin_speed, self.ang_speed, self.force_mag, self.torque_mag])

    @classmethod
    def from_state(cls, state, force_axes: Optional[np.ndarray] = None) -> "FeatureState":
        """Magnitudes from a RobotState, ignoring force-controlled wrench axes."""
        w = state.measured_wrench
        if force_axes is not None:
            w = np.where(force_axes, 0.0, w)
        d = state.dim
        return cls(
            float(np.linalg.norm(state.linear_velocity)),
            float(np.linalg.norm(state.angular_velocity)),
            float(np.linalg.norm(w[:d])),
            float(np.linalg.norm(w[d:])),
        )


@dataclass(frozen=True)
class InteractionEffect:
    force_mag: float
    torque_mag: float

    def __post_init__(self):
        if self.force_mag < 0 or self.torque_mag < 0:
            raise ValueError("effect magnitudes must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.force_mag, self.torque_mag])

    @classmethod
    def from_feature(cls, s: FeatureState) -> "InteractionEffect":
        return cls(s.force_mag, s.torque_mag)


def joint_point(prev: FeatureState, effect: InteractionEffect) -> np.ndarray:
    return np.concatenate([prev.as_array(), effect.as_array()])


@dataclass
class IGMMConfig:
    # exp(-d^2/2) below this under every component spawns; 1e-6 is d^2 ~ 27.6
    novelty_threshold: float = 1e-6
    initial_covariance_scale: float = 2.0
    max_components: int = 16
    # characteristic spread of each of the six dimensions
    feature_scale: Sequence[float] = (0.05, 0.05, 0.5, 0.05, 0.5, 0.05)
    min_std_fraction: float = 1e-2
    # cap on each component's accumulated count; a finite cap keeps a
    # learning-rate floor of 1/memory so components follow drifting data
    memory: float = math.inf

    def __post_init__(self):
        self.feature_scale = tuple(float(x) for x in self.feature_scale)
        if len(self.feature_scale) != N_DIM or min(self.feature_scale) <= 0:
            raise ValueError("feature_scale needs six positive entries")
        if not 0 < self.novelty_threshold < 1:
            raise ValueError("novelty_threshold must lie in (0, 1)")
        if self.initial_covariance_scale <= 0 or self.min_std_fraction <= 0:
            raise ValueError("covariance scales must be positive")
        if self.max_components < 1:
            raise ValueError("max_components must be at least 1")
        if not self.memory >= 1:
            raise ValueError("memory must be at least 1")

    @property
    def initial_covariance(self) -> np.ndarray:
        return np.diag((self.initial_covariance_scale * np.asarray(self.feature_scale)) ** 2)

    @property
    def variance_floor(self) -> np.ndarray:
        return (self.min_std_fraction * np.asarray(self.feature_scale)) ** 2


@dataclass
class Prediction:
    mean: np.ndarray        # conditional mean of (force_mag, torque_mag)
    covariance: np.ndarray  # mixed conditional covariance
    responsibilities: np.ndarray

    @property
    def effect(self) -> InteractionEffect:
        m = np.maximum(self.mean, 0.0)
        return InteractionEffect(float(m[0]), float(m[1]))


def _log_gauss(x: np.ndarray, means: np.ndarray, chols: np.ndarray) -> np.ndarray:
    """log N(x | mean_k, L_k L_k^T) for every component k."""
    diff = x[None, :] - means
    z = np.linalg.solve(chols, diff[:, :, None])[:, :, 0]
    maha = np.einsum("ki,ki->k", z, z)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
    return -0.5 * (maha + logdet + x.size * _LOG_2PI)


def _logsumexp(a: np.ndarray) -> float:
    m = float(np.max(a))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(a - m))))


class MixtureModel:
    """Gaussian mixture over [S_{t-1}, D_t] points.

    Attributes:
        weights: mixing proportions, shape (K,).
        means: component means, shape (K, 6).
        covariances: component covariances, shape (K, 6, 6).
        counts: accumulated responsibility per component (the EM
            sufficient statistic that sets the learning rate).
        n_observations: number of points seen.
        frozen: a frozen model refuses further updates.
    """

    def __init__(self, config: Optional[IGMMConfig] = None):
        self.config = config or IGMMConfig()
        self.weights = np.zeros(0)
        self.means = np.zeros((0, N_DIM))
        self.covariances = np.zeros((0, N_DIM, N_DIM))
        self.counts = np.zeros(0)
        self.n_observations = 0
        self.frozen = False
        self.fit_info: dict = {}
        self._chol: Optional[np.ndarray] = None

    # ---- bookkeeping -----------------------------------------------------

    @property
    def n_components(self) -> int:
        return self.weights.size

    def __len__(self) -> int:
        return self.n_components

    def copy(self) -> "MixtureModel":
        out = MixtureModel(self.config)
        out.weights = self.weights.copy()
        out.means = self.means.copy()
        out.covariances = self.covariances.copy()
        out.counts = self.counts.copy()
        out.n_observations = self.n_observations
        out.frozen = self.frozen
        out.fit_info = dict(self.fit_info)
        return out

    def frozen_copy(self) -> "MixtureModel":
        out = self.copy()
        out.frozen = True
        return out

    def _cholesky(self) -> np.ndarray:
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.covariances)
        return self._chol

    def _invalidate(self):
        self._chol = None

    def _floor(self, cov: np.ndarray) -> np.ndarray:
        cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
        floor = self.config.variance_floor
        diag = np.diagonal(cov, axis1=-2, axis2=-1)
        bump = np.maximum(floor - diag, 0.0)
        return cov + bump[..., None] * np.eye(N_DIM)

    # ---- likelihoods -----------------------------------------------------

    def component_log_densities(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return _log_gauss(x, self.means, self._cholesky())

    def log_likelihood(self, x) -> float:
        if self.n_components == 0:
            return -math.inf
        return _logsumexp(self.component_log_densities(x) + np.log(self.weights))

    def normalized_likelihoods(self, x) -> np.ndarray:
        """exp(-d^2/2) per component, i.e. density relative to the component's peak."""
        x = np.asarray(x, dtype=float)
        diff = x[None, :] - self.means
        z = np.linalg.solve(self._cholesky(), diff[:, :, None])[:, :, 0]
        return np.exp(-0.5 * np.einsum("ki,ki->k", z, z))

    # ---- learning --------------------------------------------------------

    def update(self, point) -> "MixtureModel":
        """Absorb one [S_{t-1}, D_t] point in place and return the model."""
        if self.frozen:
            raise FrozenModelError("pre-trained model does not accept updates")
        x = np.asarray(point, dtype=float).reshape(-1)
        if x.size != N_DIM or not np.all(np.isfinite(x)) or np.any(x < 0):
            raise ValueError("points must be finite, non-negative 6-vectors")
        self.n_observations += 1
        if self.n_components == 0 or np.all(self.normalized_likelihoods(x) < self.config.novelty_threshold):
            self._spawn(x)
            return self

        log_post = self.component_log_densities(x) + np.log(self.weights)
        post = np.exp(log_post - _logsumexp(log_post))
        self.counts = np.minimum(self.counts + post, self.config.memory)
        for j in np.flatnonzero(post > 1e-12):
            w = post[j] / self.counts[j]
            e = x - self.means[j]
            self.means[j] = self.means[j] + w * e
            # exact weighted-moment recursion; stays PSD for any w in [0, 1]
            self.covariances[j] = (1.0 - w) * (self.covariances[j] + w * np.outer(e, e))
        self.covariances = self._floor(self.covariances)
        self.weights = self.counts / self.counts.sum()
        self._invalidate()
        return self

    def _spawn(self, x: np.ndarray):
        if self.n_components >= self.config.max_components:
            self._merge_closest()
        self.means = np.vstack([self.means, x[None, :]])
        self.covariances = np.concatenate([self.covariances, self.config.initial_covariance[None]], axis=0)
        self.counts = np.append(self.counts, 1.0)
        self.weights = self.counts / self.counts.sum()
        self._invalidate()

    def _merge_closest(self):
        scale = np.asarray(self.config.feature_scale)
        z = self.means / scale
        d = np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=-1)
        d[np.diag_indices_from(d)] = np.inf
        i, j = np.unravel_index(int(np.argmin(d)), d.shape)
        i, j = min(i, j), max(i, j)
        ci, cj = self.counts[i], self.counts[j]
        c = ci + cj
        mu = (ci * self.means[i] + cj * self.means[j]) / c
        di, dj = self.means[i] - mu, self.means[j] - mu
        cov = (ci * (self.covariances[i] + np.outer(di, di)) + cj * (self.covariances[j] + np.outer(dj, dj))) / c
        self.means[i], self.covariances[i], self.counts[i] = mu, self._floor(cov), c
        keep = np.arange(self.n_components) != j
        self.means, self.covariances, self.counts = self.means[keep], self.covariances[keep], self.counts[keep]
        self.weights = self.counts / self.counts.sum()
        self._invalidate()

    # ---- regression ------------------------------------------------------

    def predict(self, s) -> Optional[Prediction]:
        """Conditional distribution of the next effect given the state features.

        Returns None for an empty model; callers treat that as a maximal
        prediction error.
        """
        if self.n_components == 0:
            return None
        s = s.as_array() if isinstance(s, FeatureState) else np.asarray(s, dtype=float)
        return gmr(self.weights, self.means, self.covariances, s)

    # ---- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "config": {
                "novelty_threshold": self.config.novelty_threshold,
                "initial_covariance_scale": self.config.initial_covariance_scale,
                "max_components": self.config.max_components,
                "feature_scale": list(self.config.feature_scale),
                "min_std_fraction": self.config.min_std_fraction,
                "memory": None if math.isinf(self.config.memory) else self.config.memory,
            },
            "frozen": self.frozen,
            "n_observations": self.n_observations,
            "weights": self.weights.tolist(),
            "counts": self.counts.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureModel":
        if data.get("format") != FORMAT_NAME:
            raise ValueError("not a serialized mixture model")
        if data.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported mixture format version {data.get('version')}")
        cfg = dict(data["config"])
        if cfg.get("memory", 0) is None:
            cfg.pop("memory")
        model = cls(IGMMConfig(**cfg))
        model.frozen = bool(data["frozen"])
        model.n_observations = int(data["n_observations"])
        model.weights = np.array(data["weights"], dtype=float).reshape(-1)
        model.counts = np.array(data["counts"], dtype=float).reshape(-1)
        model.means = np.array(data["means"], dtype=float).reshape(-1, N_DIM)
        model.covariances = np.array(data["covariances"], dtype=float).reshape(-1, N_DIM, N_DIM)
        return model

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MixtureModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def gmr(weights: np.ndarray, means: np.ndarray, covariances: np.ndarray, s: np.ndarray,
        n_in: int = N_STATE) -> Prediction:
    """Gaussian mixture regression of the trailing block on the leading ``n_in`` dims."""
    s = np.asarray(s, dtype=float).reshape(-1)
    mu_s, mu_d = means[:, :n_in], means[:, n_in:]
    cov_ss = covariances[:, :n_in, :n_in]
    cov_ds = covariances[:, n_in:, :n_in]
    cov_dd = covariances[:, n_in:, n_in:]

    chol_ss = np.linalg.cholesky(cov_ss)
    log_h = _log_gauss(s, mu_s, chol_ss) + np.log(weights)
    h = np.exp(log_h - _logsumexp(log_h))

    diff = (s[None, :] - mu_s)[:, :, None]
    gain = np.swapaxes(np.linalg.solve(cov_ss, np.swapaxes(cov_ds, 1, 2)), 1, 2)  # cov_ds cov_ss^-1
    cond_mean = mu_d + (gain @ diff)[:, :, 0]
    cond_cov = cov_dd - gain @ np.swapaxes(cov_ds, 1, 2)

    mean = h @ cond_mean
    second = np.einsum("k,kij->ij", h, cond_cov + cond_mean[:, :, None] * cond_mean[:, None, :])
    cov = second - np.outer(mean, mean)
    return Prediction(mean, 0.5 * (cov + cov.T), h)


def prediction_error(predicted: InteractionEffect, measured: InteractionEffect, torque_scale: float = 1.0) -> float:
    """Euclidean distance over (force, scaled torque) magnitudes."""
    df = predicted.force_mag - measured.force_mag
    dt = torque_scale * (predicted.torque_mag - measured.torque_mag)
    return math.hypot(df, dt)


def direction_recovery(effect: InteractionEffect, motion_direction, speed: float = math.inf,
                       dead_band: float = 1e-3, angular_direction=None) -> np.ndarray:
    """Wrench of the predicted magnitudes opposing the direction of motion.

    Returns the environment's resistive wrench (force first, then torque).
    Below ``dead_band`` speed the direction is meaningless and the result is
    zero.
    """
    d = np.asarray(motion_direction, dtype=float).reshape(-1)
    n_rot = 1 if d.size == 2 else 3
    out = np.zeros(d.size + n_rot)
    if speed < dead_band:
        return out
    norm = float(np.linalg.norm(d))
    if norm == 0.0:
        return out
    if abs(norm - 1.0) > 1e-6:
        raise ValueError("motion direction must be a unit vector")
    out[: d.size] = -effect.force_mag * d
    if angular_direction is not None:
        a = np.asarray(angular_direction, dtype=float).reshape(-1)
        an = float(np.linalg.norm(a))
        if an > 0:
            out[d.size:] = -effect.torque_mag * a / an
    return out


def fit_batch(points: Iterable, n_components: int = 5, config: Optional[IGMMConfig] = None,
              reg_covar: float = 1e-6, max_iter: int = 200, seed: int = 0) -> MixtureModel:
    """Batch EM fit returning a frozen model (the pre-trained baseline).

    Fitting happens in coordinates divided by ``config.feature_scale`` so the
    covariance jitter is uniform relative to each dimension's scale.
    """
    from sklearn.exceptions import ConvergenceWarning
    from sklearn.mixture import GaussianMixture

    config = config or IGMMConfig()
    X = np.asarray(list(points) if not isinstance(points, np.ndarray) else points, dtype=float)
    X = X.reshape(-1, N_DIM)
    if X.shape[0] < 1:
        raise ValueError("fit_batch needs at least one point")
    scale = np.asarray(config.feature_scale)
    Z = X / scale
    n_unique = np.unique(Z, axis=0).shape[0]
    k = max(1, min(n_components, n_unique))

    model = MixtureModel(config)
    if X.shape[0] == 1 or n_unique == 1:
        model.weights = np.ones(1)
        model.means = X[:1].copy()
        model.covariances = model._floor(np.diag(reg_covar * scale ** 2)[None])
        model.counts = np.array([float(X.shape[0])])
        model.fit_info = {"converged": True, "n_iter": 0, "lower_bound": math.nan}
    else:
        gm = GaussianMixture(n_components=k, covariance_type="full", reg_covar=reg_covar,
                             max_iter=max_iter, random_state=seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            gm.fit(Z)
        model.weights = gm.weights_.copy()
        model.means = gm.means_ * scale
        model.covariances = model._floor(gm.covariances_ * np.outer(scale, scale)[None])
        model.counts = gm.weights_ * X.shape[0]
        model.fit_info = {"converged": bool(gm.converged_), "n_iter": int(gm.n_iter_),
                          "lower_bound": float(gm.lower_bound_)}
        if not gm.converged_:
            warnings.warn("batch EM did not converge; keeping the last iterate", RuntimeWarning)
    model.n_observations = X.shape[0]
    model.frozen = True
    return model
