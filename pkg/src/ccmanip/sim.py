"""Deterministic task-space simulator of a point end-effector.

The plant is a single rigid point mass (optionally with a rotational
inertia) moving in 2D or 3D.  Environment effects are composed from four
ingredients: springs pulling towards anchors, a viscous medium whose
viscosity ramps over time ("porridge"), regions of Coulomb friction, and
penalty (spring-damper) walls.

Integration is semi-implicit Euler.  Dissipative terms (viscous drag, wall
contact, Coulomb friction) are treated implicitly along their own
direction so the step is stable for any timestep and a wall can never
inject energy.  The wrench a wrist force-torque sensor would report is
recovered from the momentum change, so it is exactly the negated sum of
environment forces applied during the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class SimulationDiverged(RuntimeError):
    """Raised when the effector speed leaves the configured envelope."""


def _vec(x, dim=None) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if dim is not None and arr.size != dim:
        raise ValueError(f"expected a {dim}-vector, got {arr.size} entries")
    return arr


def wrench_size(dim: int) -> int:
    """Number of wrench components for a 2D (fx, fy, tz) or 3D effector."""
    return 3 if dim == 2 else 6


def identity_orientation(dim: int) -> np.ndarray:
    # 2D: planar angle; 3D: quaternion in (x, y, z, w) order.
    return np.zeros(1) if dim == 2 else np.array([0.0, 0.0, 0.0, 1.0])


@dataclass
class RobotState:
    """End-effector pose, twist and sensed wrench at one control tick."""

    time: float
    position: np.ndarray
    orientation: np.ndarray
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray
    measured_wrench: np.ndarray

    @property
    def dim(self) -> int:
        return self.position.size

    @property
    def force(self) -> np.ndarray:
        return self.measured_wrench[: self.dim]

    @property
    def torque(self) -> np.ndarray:
        return self.measured_wrench[self.dim:]

    @classmethod
    def at_rest(cls, position, time: float = 0.0) -> "RobotState":
        position = _vec(position)
        dim = position.size
        if dim not in (2, 3):
            raise ValueError("only 2D and 3D effectors are supported")
        n_rot = 1 if dim == 2 else 3
        return cls(
            time=float(time),
            position=position.copy(),
            orientation=identity_orientation(dim),
            linear_velocity=np.zeros(dim),
            angular_velocity=np.zeros(n_rot),
            measured_wrench=np.zeros(wrench_size(dim)),
        )

    def copy(self) -> "RobotState":
        return RobotState(
            time=self.time,
            position=self.position.copy(),
            orientation=self.orientation.copy(),
            linear_velocity=self.linear_velocity.copy(),
            angular_velocity=self.angular_velocity.copy(),
            measured_wrench=self.measured_wrench.copy(),
        )

    def is_finite(self) -> bool:
        return all(
            np.all(np.isfinite(a))
            for a in (self.position, self.orientation, self.linear_velocity,
                      self.angular_velocity, self.measured_wrench)
        )


# --------------------------------------------------------------------------
# Environment description
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Spring:
    anchor: np.ndarray
    rest_length: float
    stiffness: float

    def __post_init__(self):
        object.__setattr__(self, "anchor", _vec(self.anchor))
        if self.rest_length < 0 or self.stiffness < 0:
            raise ValueError("spring rest length and stiffness must be non-negative")


@dataclass(frozen=True)
class Porridge:
    """Viscous medium; viscosity grows by ``viscosity_rate`` every step."""

    viscosity_start: float
    viscosity_rate: float = 0.0
    viscosity_max: float = math.inf

    def __post_init__(self):
        if self.viscosity_start < 0 or self.viscosity_rate < 0 or self.viscosity_max < 0:
            raise ValueError("viscosities must be non-negative")

    def viscosity(self, tick: int) -> float:
        return min(self.viscosity_start + self.viscosity_rate * tick, self.viscosity_max)


@dataclass(frozen=True)
class FrictionRegion:
    """Axis-aligned box of Coulomb friction.

    ``entry_width``/``exit_width`` spread the change of friction over a band
    outside the box, on the side the effector is approaching from or leaving
    towards.  A non-zero ``exit_width`` mimics the trailing part of a sliding
    object still resting on this surface after its reference point has left.
    If ``wall`` is set, the normal load comes from that wall's contact force
    and only velocity tangential to the wall is resisted.
    """

    lower: np.ndarray
    upper: np.ndarray
    mu: float
    entry_width: float = 0.0
    exit_width: float = 0.0
    wall: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "lower", _vec(self.lower))
        object.__setattr__(self, "upper", _vec(self.upper))
        if self.lower.size != self.upper.size or np.any(self.upper < self.lower):
            raise ValueError("region bounds must satisfy lower <= upper")
        if self.mu < 0 or self.entry_width < 0 or self.exit_width < 0:
            raise ValueError("friction coefficient and blend widths must be non-negative")

    def contains(self, p: np.ndarray) -> bool:
        return bool(np.all(p >= self.lower) and np.all(p < self.upper))

    def outside_distance(self, p: np.ndarray) -> tuple[float, np.ndarray]:
        """Distance from ``p`` to the box and the outward direction (zero inside)."""
        below = np.minimum(p - self.lower, 0.0)
        above = np.maximum(p - self.upper, 0.0)
        offset = below + above
        d = float(np.linalg.norm(offset))
        return d, (offset / d if d > 0 else offset)

    def coverage(self, p: np.ndarray, v: np.ndarray) -> float:
        if self.contains(p):
            return 1.0
        d, outward = self.outside_distance(p)
        if not np.all(np.isfinite(outward)) or d == 0.0:
            return 0.0
        leaving = float(np.dot(v, outward)) > 0.0
        width = self.exit_width if leaving else self.entry_width
        if width <= 0.0 or d >= width:
            return 0.0
        return 1.0 - d / width


@dataclass(frozen=True)
class Wall:
    """Half-space boundary ``normal . x >= offset`` with penalty contact."""

    normal: np.ndarray
    offset: float
    contact_stiffness: float
    contact_damping: float = 0.0
    mu: float = 0.0
    name: str = ""

    def __post_init__(self):
        n = _vec(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ValueError("wall normals must be unit vectors")
        object.__setattr__(self, "normal", n)
        if self.contact_stiffness < 0 or self.contact_damping < 0 or self.mu < 0:
            raise ValueError("wall stiffness, damping and friction must be non-negative")

    def penetration(self, p: np.ndarray) -> float:
        return self.offset - float(np.dot(self.normal, p))


@dataclass
class EnvironmentSpec:
    springs: list[Spring] = field(default_factory=list)
    porridge: Optional[Porridge] = None
    friction_regions: list[FrictionRegion] = field(default_factory=list)
    walls: list[Wall] = field(default_factory=list)
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    effector_mass: float = 1.0
    effector_inertia: float = 0.01
    # Outside every region, friction uses this coefficient.
    base_mu: float = 0.0
    # Normal load for planar sliding when the caller supplies none.
    normal_load: float = 0.0
    # Speed below which Coulomb friction is treated as viscous.
    friction_regularization: float = 1e-4

    def __post_init__(self):
        self.gravity = _vec(self.gravity)
        if self.effector_mass <= 0 or self.effector_inertia <= 0:
            raise ValueError("effector mass and inertia must be positive")
        if self.base_mu < 0 or self.normal_load < 0:
            raise ValueError("base friction and normal load must be non-negative")
        for i, a in enumerate(self.friction_regions):
            if a.wall is not None and not 0 <= a.wall < len(self.walls):
                raise ValueError(f"friction region {i} refers to a missing wall")
            for b in self.friction_regions[i + 1:]:
                if np.all(a.lower < b.upper) and np.all(b.lower < a.upper):
                    raise ValueError("friction regions must not overlap")

    @property
    def dim(self) -> int:
        return self.gravity.size


@dataclass
class SimConfig:
    timestep: float = 0.002
    trial_length: int = 10_000
    wrench_noise: float = 0.0
    pose_noise: float = 0.0
    rng_seed: int = 0
    max_speed: float = 10.0

    def __post_init__(self):
        if self.timestep <= 0:
            raise ValueError("timestep must be positive")
        if self.trial_length < 1:
            raise ValueError("trial_length must be at least one step")
        if self.wrench_noise < 0 or self.pose_noise < 0:
            raise ValueError("noise levels must be non-negative")


@dataclass(frozen=True)
class ContactObservation:
    position: np.ndarray
    normal: np.ndarray
    peak_force: float
    kind: str  # "impact" or "impact_less"
    source: str = ""
    time: float = 0.0


# --------------------------------------------------------------------------
# Forces
# --------------------------------------------------------------------------


def _tick(time: float, timestep: float) -> int:
    return int(round(time / timestep))


def friction_coefficient(spec: EnvironmentSpec, position, velocity, wall: Optional[int] = None) -> float:
    """Effective friction coefficient at ``position`` for regions bound to ``wall``."""
    p = _vec(position)
    v = _vec(velocity)
    here = None
    for region in spec.friction_regions:
        if region.wall == wall and region.contains(p):
            here = region
            break
    mu = here.mu if here is not None else (spec.base_mu if wall is None else spec.walls[wall].mu)
    for region in spec.friction_regions:
        if region is here or region.wall != wall:
            continue
        c = region.coverage(p, v)
        if c > 0.0:
            mu += c * (region.mu - mu)
    return mu


def _tangential(v: np.ndarray, normal: Optional[np.ndarray]) -> np.ndarray:
    if normal is None:
        return v
    return v - np.dot(v, normal) * normal


def _kinetic_friction(v_t: np.ndarray, limit: float, eps: float) -> np.ndarray:
    speed = float(np.linalg.norm(v_t))
    if limit <= 0.0 or speed == 0.0:
        return np.zeros_like(v_t)
    return -limit * v_t / max(speed, eps)


def environment_force(spec: EnvironmentSpec, state: RobotState, normal_force: Optional[float] = None,
                      timestep: float = 1.0) -> np.ndarray:
    """Reaction wrench the environment applies to the effector in ``state``.

    Args:
        spec: environment description.
        state: current effector state.
        normal_force: normal load R for planar friction regions; falls back to
            ``spec.normal_load``.  Wall-bound regions use the wall's own
            contact force instead.
        timestep: step length, needed to index the viscosity ramp.
    """
    if normal_force is not None and normal_force < 0:
        raise ValueError("normal force must be non-negative")
    p, v = state.position, state.linear_velocity
    dim = p.size
    force = np.zeros(dim)

    for s in spec.springs:
        delta = p - s.anchor
        dist = float(np.linalg.norm(delta))
        if dist > 0.0:
            force -= s.stiffness * (dist - s.rest_length) * delta / dist

    if spec.porridge is not None:
        force -= spec.porridge.viscosity(_tick(state.time, timestep)) * v

    wall_normal_forces = []
    for w in spec.walls:
        pen = w.penetration(p)
        fn = 0.0
        if pen > 0.0:
            fn = max(w.contact_stiffness * pen - w.contact_damping * float(np.dot(v, w.normal)), 0.0)
            force += fn * w.normal
        wall_normal_forces.append(fn)

    eps = spec.friction_regularization
    load = spec.normal_load if normal_force is None else normal_force
    mu = friction_coefficient(spec, p, v)
    force += _kinetic_friction(v, mu * load, eps)
    for i, w in enumerate(spec.walls):
        if wall_normal_forces[i] > 0.0:
            mu_w = friction_coefficient(spec, p, v, wall=i)
            force += _kinetic_friction(_tangential(v, w.normal), mu_w * wall_normal_forces[i], eps)

    return np.concatenate([force, np.zeros(wrench_size(dim) - dim)])


# --------------------------------------------------------------------------
# Integration
# --------------------------------------------------------------------------


def _implicit_coulomb(v: np.ndarray, normal: Optional[np.ndarray], limit: float, m: float, dt: float) -> np.ndarray:
    """Apply Coulomb friction of magnitude ``limit`` to the tangential velocity."""
    if limit <= 0.0:
        return v
    v_t = _tangential(v, normal)
    speed = float(np.linalg.norm(v_t))
    impulse = limit * dt / m
    if speed <= impulse:
        return v - v_t  # sticks within this step
    return v - impulse * v_t / speed


def _quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def _integrate_orientation(q: np.ndarray, omega: np.ndarray, dt: float) -> np.ndarray:
    if q.size == 1:
        return q + dt * omega
    angle = float(np.linalg.norm(omega)) * dt
    if angle == 0.0:
        return q.copy()
    axis = omega / np.linalg.norm(omega)
    dq = np.concatenate([axis * math.sin(angle / 2), [math.cos(angle / 2)]])
    out = _quat_multiply(dq, q)
    return out / np.linalg.norm(out)


def step(spec: EnvironmentSpec, config: SimConfig, state: RobotState, applied_force,
         normal_force: Optional[float] = None, rng: Optional[np.random.Generator] = None) -> RobotState:
    """Advance the true state by one timestep under ``applied_force``.

    The returned state carries exact kinematics; only its ``measured_wrench``
    is corrupted by ``config.wrench_noise`` (when ``rng`` is given).
    """
    dim = state.dim
    u = _vec(applied_force, wrench_size(dim))
    if not np.all(np.isfinite(u)):
        raise ValueError("applied force must be finite")
    if normal_force is not None and normal_force < 0:
        raise ValueError("normal force must be non-negative")
    dt, m = config.timestep, spec.effector_mass
    p, v = state.position, state.linear_velocity
    f_applied, tau_applied = u[:dim], u[dim:]

    # explicit part: applied, gravity, springs
    f_explicit = f_applied + m * spec.gravity
    for s in spec.springs:
        delta = p - s.anchor
        dist = float(np.linalg.norm(delta))
        if dist > 0.0:
            f_explicit = f_explicit - s.stiffness * (dist - s.rest_length) * delta / dist
    v_new = v + dt * f_explicit / m

    if spec.porridge is not None:
        c = spec.porridge.viscosity(_tick(state.time, dt))
        v_new = v_new / (1.0 + c * dt / m)

    # walls: linearly implicit spring-damper along each normal
    wall_loads = []
    for w in spec.walls:
        n = w.normal
        pen = w.penetration(p)
        vn = float(np.dot(v_new, n))
        fn = 0.0
        if pen - dt * vn > 0.0:  # in contact at the end of the step
            k, d = w.contact_stiffness, w.contact_damping
            vn_c = (vn + dt * k * pen / m) / (1.0 + dt * (k * dt + d) / m)
            fn = k * (pen - dt * vn_c) - d * vn_c
            if fn > 0.0:
                v_new = v_new + (vn_c - vn) * n
            else:
                fn = 0.0
        wall_loads.append(fn)

    load = spec.normal_load if normal_force is None else normal_force
    mu = friction_coefficient(spec, p, v)
    if mu * load > 0.0:
        v_new = _implicit_coulomb(v_new, None, mu * load, m, dt)
    for i, w in enumerate(spec.walls):
        if wall_loads[i] > 0.0:
            mu_w = friction_coefficient(spec, p, v, wall=i)
            v_new = _implicit_coulomb(v_new, w.normal, mu_w * wall_loads[i], m, dt)

    speed = float(np.linalg.norm(v_new))
    if not math.isfinite(speed) or speed > config.max_speed:
        raise SimulationDiverged(
            f"effector speed {speed:.3g} m/s exceeds bound {config.max_speed} m/s at t={state.time + dt:.4f}s"
        )

    p_new = p + dt * v_new
    omega_new = state.angular_velocity + dt * tau_applied / spec.effector_inertia
    q_new = _integrate_orientation(state.orientation, omega_new, dt)

    f_env = m * (v_new - v) / dt - f_applied - m * spec.gravity
    sensed = -np.concatenate([f_env, np.zeros(tau_applied.size)])
    if rng is not None and config.wrench_noise > 0.0:
        sensed = sensed + rng.normal(0.0, config.wrench_noise, sensed.size)

    return RobotState(
        time=state.time + dt,
        position=p_new,
        orientation=q_new,
        linear_velocity=v_new,
        angular_velocity=omega_new,
        measured_wrench=sensed,
    )


def region_index(spec: EnvironmentSpec, position) -> Optional[int]:
    p = _vec(position)
    for i, r in enumerate(spec.friction_regions):
        if r.contains(p):
            return i
    return None


def _boundary_crossing(spec: EnvironmentSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # bisect the segment a->b for the point where region membership flips
    ra = region_index(spec, a)
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if region_index(spec, a + mid * (b - a)) == ra:
            lo = mid
        else:
            hi = mid
    return a + hi * (b - a)


def contact_event(spec: EnvironmentSpec, state_prev: RobotState, state_next: RobotState
                  ) -> Optional[ContactObservation]:
    """Report a newly made wall contact or a crossing between friction regions."""
    p0, p1 = state_prev.position, state_next.position
    for i, w in enumerate(spec.walls):
        if w.penetration(p0) <= 0.0 < w.penetration(p1):
            return ContactObservation(
                position=p1.copy(),
                normal=w.normal.copy(),
                peak_force=abs(float(np.dot(state_next.force, w.normal))),
                kind="impact",
                source=w.name or f"wall{i}",
                time=state_next.time,
            )
    r0, r1 = region_index(spec, p0), region_index(spec, p1)
    if r0 != r1:
        crossing = _boundary_crossing(spec, p0, p1)
        travel = p1 - p0
        normal = travel / np.linalg.norm(travel)
        names = [spec.friction_regions[r].name or f"region{r}" if r is not None else "none" for r in (r0, r1)]
        return ContactObservation(
            position=crossing,
            normal=normal,
            peak_force=float(np.linalg.norm(state_next.force)),
            kind="impact_less",
            source=f"{names[0]}->{names[1]}",
            time=state_next.time,
        )
    return None


def mechanical_energy(spec: EnvironmentSpec, state: RobotState) -> float:
    """Kinetic plus spring and gravitational potential energy (walls excluded)."""
    m = spec.effector_mass
    e = 0.5 * m * float(np.dot(state.linear_velocity, state.linear_velocity))
    e += 0.5 * spec.effector_inertia * float(np.dot(state.angular_velocity, state.angular_velocity))
    e -= m * float(np.dot(spec.gravity, state.position))
    for s in spec.springs:
        ext = float(np.linalg.norm(state.position - s.anchor)) - s.rest_length
        e += 0.5 * s.stiffness * ext * ext
    return e


class Simulator:
    """Stateful wrapper: owns the true state, the RNG and the event stream."""

    def __init__(self, spec: EnvironmentSpec, config: SimConfig, initial: RobotState):
        if initial.dim != spec.dim:
            raise ValueError("initial state and environment dimensions differ")
        self.spec = spec
        self.config = config
        self.rng = np.random.default_rng(config.rng_seed)
        self.true_state = initial.copy()
        self.tick = 0

    def observe(self, state: Optional[RobotState] = None) -> RobotState:
        s = (state or self.true_state).copy()
        if self.config.pose_noise > 0.0:
            s.position = s.position + self.rng.normal(0.0, self.config.pose_noise, s.dim)
        return s

    def step(self, applied_force, normal_force: Optional[float] = None
             ) -> tuple[RobotState, Optional[ContactObservation]]:
        prev = self.true_state
        nxt = step(self.spec, self.config, prev, applied_force, normal_force, self.rng)
        self.true_state = nxt
        self.tick += 1
        event = contact_event(self.spec, prev, nxt)
        measured = self.observe(nxt)
        if event is not None and self.config.pose_noise > 0.0:
            # the robot only knows where it is through the noisy pose estimate
            event = replace(event, position=event.position + (measured.position - nxt.position))
        return measured, event


def make_states(positions: Sequence, velocities: Sequence, time: float = 0.0) -> list[RobotState]:
    """Convenience for tests: states at the given positions and velocities."""
    out = []
    for p, v in zip(positions, velocities):
        s = RobotState.at_rest(p, time)
        s.linear_velocity = _vec(v)
        out.append(s)
    return out
