"""State and trajectory primitives for planar multi-agent motion.

Internally each agent is a planar double integrator: position and velocity
evolve exactly under piecewise-constant acceleration over a step, which keeps
the dynamics linear in both state and control. Dataset files use a different
per-agent layout (position, scalar speed, heading); the conversion helpers at
the bottom of this module translate between the two. Heading is undefined at
rest, so a stationary agent is written with heading 0 by convention.

All types are frozen value objects and all functions are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError

STATE_DIM = 4  # per-agent (px, py, vx, vy)
CONTROL_DIM = 2  # per-agent (ax, ay)
DEFAULT_DT = 0.1
DEFAULT_U_MAX = 3.0


def _check_finite(obj: str, **fields: float) -> None:
    for name, value in fields.items():
        if not math.isfinite(value):
            raise ValidationError(f"{obj}.{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class AgentState:
    """Planar position (m) and velocity (m/s) of a single agent."""

    px: float
    py: float
    vx: float
    vy: float

    def __post_init__(self):
        _check_finite("AgentState", px=self.px, py=self.py, vx=self.vx, vy=self.vy)

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    @property
    def heading(self) -> float:
        """Direction of travel in (-pi, pi]; 0 at rest by convention."""
        if self.vx == 0.0 and self.vy == 0.0:
            return 0.0
        h = math.atan2(self.vy, self.vx)
        return h if h > -math.pi else math.pi

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.vx, self.vy], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "AgentState":
        px, py, vx, vy = (float(v) for v in arr)
        return cls(px, py, vx, vy)


@dataclass(frozen=True)
class ControlInput:
    """Planar acceleration command (m/s^2)."""

    ax: float
    ay: float

    def __post_init__(self):
        _check_finite("ControlInput", ax=self.ax, ay=self.ay)

    @property
    def magnitude(self) -> float:
        return math.hypot(self.ax, self.ay)

    def as_array(self) -> np.ndarray:
        return np.array([self.ax, self.ay], dtype=float)


@dataclass(frozen=True)
class JointState:
    """Stacked states of k agents; agent order is fixed for a scenario."""

    agents: tuple[AgentState, ...]

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if len(self.agents) < 1:
            raise ValidationError("JointState requires at least one agent")

    @property
    def k(self) -> int:
        return len(self.agents)

    def as_array(self) -> np.ndarray:
        """Flat (4k,) Cartesian layout: (px, py, vx, vy) per agent."""
        return np.concatenate([a.as_array() for a in self.agents])

    @classmethod
    def from_array(cls, arr) -> "JointState":
        arr = np.asarray(arr, dtype=float).ravel()
        if arr.size % STATE_DIM != 0 or arr.size == 0:
            raise ValidationError(f"joint state length must be a positive multiple of 4, got {arr.size}")
        return cls(tuple(AgentState.from_array(arr[4 * i : 4 * i + 4]) for i in range(arr.size // 4)))


def clamp_control(u: np.ndarray, u_max: float = DEFAULT_U_MAX) -> np.ndarray:
    """Scale control vectors so that ||u|| <= u_max; shape (..., 2) preserved."""
    u = np.asarray(u, dtype=float)
    norm = np.linalg.norm(u, axis=-1, keepdims=True)
    scale = np.where(norm > u_max, u_max / np.maximum(norm, 1e-300), 1.0)
    return u * scale


def propagate(state: AgentState, control: ControlInput, dt: float) -> AgentState:
    """One exact double-integrator step of length dt."""
    if not (isinstance(dt, (int, float)) and math.isfinite(dt) and dt > 0):
        raise ValidationError(f"dt must be a positive finite number, got {dt!r}")
    return AgentState(
        px=state.px + state.vx * dt + 0.5 * control.ax * dt * dt,
        py=state.py + state.vy * dt + 0.5 * control.ay * dt * dt,
        vx=state.vx + control.ax * dt,
        vy=state.vy + control.ay * dt,
    )


def propagate_joint(states: np.ndarray, controls: np.ndarray, dt: float) -> np.ndarray:
    """Vectorized step: states (..., 4k), controls (..., k, 2) -> (..., 4k)."""
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    k = states.shape[-1] // STATE_DIM
    s = states.reshape(states.shape[:-1] + (k, STATE_DIM))
    p, v = s[..., :2], s[..., 2:]
    p_next = p + v * dt + 0.5 * controls * dt * dt
    v_next = v + controls * dt
    return np.concatenate([p_next, v_next], axis=-1).reshape(states.shape)


@dataclass(frozen=True)
class Trajectory:
    """Joint states (T+1, 4k) plus per-agent controls (T, k, 2) at step dt.

    Solver-generated trajectories satisfy states[t+1] == propagate(states[t],
    controls[t]); ingested data need not (controls there are reconstructed
    estimates). Arrays are frozen after construction.
    """

    states: np.ndarray
    controls: np.ndarray
    dt: float

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        controls = np.array(self.controls, dtype=float)
        if states.ndim != 2 or states.shape[1] % STATE_DIM != 0 or states.shape[1] == 0:
            raise ValidationError(f"states must be (T+1, 4k), got {states.shape}")
        k = states.shape[1] // STATE_DIM
        if controls.ndim != 3 or controls.shape[1:] != (k, CONTROL_DIM):
            raise ValidationError(f"controls must be (T, {k}, 2), got {controls.shape}")
        if controls.shape[0] != states.shape[0] - 1:
            raise ValidationError(
                f"lengths inconsistent: {states.shape[0]} states vs {controls.shape[0]} controls"
            )
        if states.shape[0] < 2:
            raise ValidationError("a trajectory needs at least one step")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f"dt must be positive, got {self.dt!r}")
        if not np.all(np.isfinite(states)):
            raise ValidationError("states contain non-finite values")
        if not np.all(np.isfinite(controls)):
            raise ValidationError("controls contain non-finite values")
        states.setflags(write=False)
        controls.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    @property
    def k(self) -> int:
        return self.controls.shape[1]

    def joint_state(self, t: int) -> JointState:
        return JointState.from_array(self.states[t])

    def positions(self, agent: int) -> np.ndarray:
        """(T+1, 2) position track of one agent."""
        self._check_agent(agent)
        return self.states[:, 4 * agent : 4 * agent + 2]

    def velocities(self, agent: int) -> np.ndarray:
        self._check_agent(agent)
        return self.states[:, 4 * agent + 2 : 4 * agent + 4]

    def agent_controls(self, agent: int) -> np.ndarray:
        self._check_agent(agent)
        return self.controls[:, agent, :]

    def propagation_residual(self) -> float:
        """Max deviation between recorded states and a replay of the controls."""
        replay = propagate_joint(self.states[:-1], self.controls, self.dt)
        return float(np.max(np.abs(replay - self.states[1:])))

    def _check_agent(self, agent: int) -> None:
        if not 0 <= agent < self.k:
            raise ValidationError(f"agent index {agent} out of range for k={self.k}")


@dataclass(frozen=True)
class ScenarioSpec:
    """Initial joint state, per-agent goals and horizon of one interaction."""

    k: int
    x0: JointState
    goals: np.ndarray | None  # (k, 2); None means "infer from demonstrations"
    horizon: int
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if self.k < 1 or self.x0.k != self.k:
            raise ValidationError(f"k={self.k} inconsistent with x0 holding {self.x0.k} agents")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f"dt must be positive, got {self.dt!r}")
        if self.goals is not None:
            goals = np.array(self.goals, dtype=float)
            if goals.shape != (self.k, 2):
                raise ValidationError(f"goals must be ({self.k}, 2), got {goals.shape}")
            if not np.all(np.isfinite(goals)):
                raise ValidationError("goals contain non-finite values")
            goals.setflags(write=False)
            object.__setattr__(self, "goals", goals)

    def with_goals(self, goals: np.ndarray) -> "ScenarioSpec":
        return ScenarioSpec(self.k, self.x0, goals, self.horizon, self.dt)

    def with_x0(self, x0: JointState) -> "ScenarioSpec":
        return ScenarioSpec(self.k, x0, self.goals, self.horizon, self.dt)


def rollout_openloop(spec: ScenarioSpec, controls: np.ndarray) -> Trajectory:
    """Integrate a fixed (T, k, 2) control tape from spec.x0."""
    controls = np.asarray(controls, dtype=float)
    if controls.shape != (spec.horizon, spec.k, CONTROL_DIM):
        raise ValidationError(
            f"controls must be ({spec.horizon}, {spec.k}, 2), got {controls.shape}"
        )
    states = np.empty((spec.horizon + 1, STATE_DIM * spec.k))
    states[0] = spec.x0.as_array()
    for t in range(spec.horizon):
        states[t + 1] = propagate_joint(states[t], controls[t], spec.dt)
    return Trajectory(states, controls, spec.dt)


def constant_velocity_rollout(spec: ScenarioSpec) -> Trajectory:
    """Zero-control rollout; the nominal around which costs are expanded."""
    return rollout_openloop(spec, np.zeros((spec.horizon, spec.k, CONTROL_DIM)))


# --- dataset-layout conversions -------------------------------------------
#
# Dataset rows store (px, py, speed, heading) per agent, heading in (-pi, pi].


def to_dataset_array(states: np.ndarray) -> np.ndarray:
    """Cartesian (..., 4k) -> dataset layout (..., 4k)."""
    states = np.asarray(states, dtype=float)
    k = states.shape[-1] // STATE_DIM
    s = states.reshape(states.shape[:-1] + (k, STATE_DIM))
    vx, vy = s[..., 2], s[..., 3]
    speed = np.hypot(vx, vy)
    heading = np.where(speed > 0.0, np.arctan2(vy, vx), 0.0)
    heading = np.where(heading <= -np.pi, np.pi, heading)
    out = np.stack([s[..., 0], s[..., 1], speed, heading], axis=-1)
    return out.reshape(states.shape)


def from_dataset_array(rows: np.ndarray) -> np.ndarray:
    """Dataset layout (..., 4k) -> Cartesian (..., 4k)."""
    rows = np.asarray(rows, dtype=float)
    if rows.shape[-1] % STATE_DIM != 0 or rows.shape[-1] == 0:
        raise FormatError(f"row length must be a positive multiple of 4, got {rows.shape[-1]}")
    k = rows.shape[-1] // STATE_DIM
    r = rows.reshape(rows.shape[:-1] + (k, STATE_DIM))
    speed, heading = r[..., 2], r[..., 3]
    if np.any(speed < 0):
        raise FormatError("dataset rows contain negative speed")
    vx = speed * np.cos(heading)
    vy = speed * np.sin(heading)
    # exact rest: a zero speed must not leak heading rounding into velocity
    vx = np.where(speed == 0.0, 0.0, vx)
    vy = np.where(speed == 0.0, 0.0, vy)
    out = np.stack([r[..., 0], r[..., 1], vx, vy], axis=-1)
    return out.reshape(rows.shape)


def to_dataset_row(x: JointState) -> np.ndarray:
    """Joint state -> flat (4k,) dataset row."""
    return to_dataset_array(x.as_array())


def from_dataset_row(row) -> JointState:
    """Flat (4k,) dataset row -> joint state."""
    row = np.asarray(row, dtype=float).ravel()
    return JointState.from_array(from_dataset_array(row))
