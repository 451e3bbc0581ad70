"""Trajectory feature basis and the weighted cost it induces.

Three features per agent, each averaged along the trajectory: squared distance
to the goal, a Gaussian crowding kernel summed over the other agents, and
squared control effort. State features average over all T+1 states, control
effort over the T controls. An agent's cost is the dot product of its weight
vector with this feature vector; `StageCostModel` re-expresses the same cost
as a sum of per-step terms so the game solver can expand it stage by stage.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .trajectory import STATE_DIM, ScenarioSpec, Trajectory

FEATURE_NAMES = ("goal_dist", "proximity", "effort")
NUM_FEATURES = 3
DEFAULT_SIGMA = 1.5


@dataclass(frozen=True)
class ProximityConfig:
    """Width (m) of the Gaussian crowding kernel exp(-d^2 / sigma^2)."""

    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError(f"sigma must be positive, got {self.sigma!r}")


@dataclass(frozen=True)
class FeatureVector:
    """Per-agent feature averages; all components are nonnegative."""

    goal_dist: float  # m^2
    proximity: float  # dimensionless
    effort: float  # (m/s^2)^2

    def __post_init__(self):
        arr = (self.goal_dist, self.proximity, self.effort)
        if not all(np.isfinite(v) for v in arr):
            raise ValidationError(f"feature vector has non-finite entries: {arr}")
        if any(v < 0 for v in arr):
            raise ValidationError(f"feature vector has negative entries: {arr}")

    def as_array(self) -> np.ndarray:
        return np.array([self.goal_dist, self.proximity, self.effort], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "FeatureVector":
        g, p, e = (float(v) for v in arr)
        return cls(g, p, e)


@dataclass(frozen=True)
class CostParams:
    """Weight vector over the feature basis; kept nonnegative by projection."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.shape != (NUM_FEATURES,):
            raise ValidationError(f"weights must have length {NUM_FEATURES}, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValidationError("weights contain non-finite values")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def ones(cls) -> "CostParams":
        return cls(np.ones(NUM_FEATURES))

    def project_nonneg(self) -> "CostParams":
        return CostParams(np.maximum(self.weights, 0.0))


def pairwise_proximity(positions: np.ndarray, agent: int, sigma: float) -> np.ndarray:
    """Sum over j != agent of exp(-||p_agent - p_j||^2 / sigma^2).

    positions: (..., k, 2); returns (...,). Zero for k == 1.
    """
    positions = np.asarray(positions, dtype=float)
    k = positions.shape[-2]
    if k == 1:
        return np.zeros(positions.shape[:-2])
    own = positions[..., agent : agent + 1, :]
    d2 = np.sum((positions - own) ** 2, axis=-1)  # (..., k), zero at j == agent
    kernel = np.exp(-d2 / (sigma * sigma))
    return np.sum(kernel, axis=-1) - 1.0  # remove the self term exp(0)


def _positions_by_agent(states: np.ndarray) -> np.ndarray:
    """(T+1, 4k) -> (T+1, k, 2)."""
    k = states.shape[-1] // STATE_DIM
    return states.reshape(states.shape[0], k, STATE_DIM)[..., :2]


def compute_features(
    traj: Trajectory, agent: int, goal, cfg: ProximityConfig = ProximityConfig()
) -> FeatureVector:
    """Feature averages of one agent along a trajectory."""
    if not 0 <= agent < traj.k:
        raise ValidationError(f"agent index {agent} out of range for k={traj.k}")
    goal = np.asarray(goal, dtype=float).ravel()
    if goal.shape != (2,):
        raise ValidationError(f"goal must be a 2-vector, got shape {goal.shape}")
    pos = _positions_by_agent(traj.states)  # (T+1, k, 2)
    goal_dist = float(np.mean(np.sum((pos[:, agent] - goal) ** 2, axis=-1)))
    proximity = float(np.mean(pairwise_proximity(pos, agent, cfg.sigma)))
    effort = float(np.mean(np.sum(traj.agent_controls(agent) ** 2, axis=-1)))
    return FeatureVector(goal_dist, proximity, effort)


def cost(theta: CostParams, phi: FeatureVector) -> float:
    """Weighted cost theta . phi; linear in both arguments."""
    return float(theta.weights @ phi.as_array())


def expected_features(
    rollouts: Sequence[Trajectory] | Iterable[Trajectory],
    agent: int,
    goal,
    cfg: ProximityConfig = ProximityConfig(),
) -> FeatureVector:
    """Arithmetic mean of compute_features over a nonempty trajectory set."""
    rollouts = list(rollouts)
    if not rollouts:
        raise ValidationError("expected_features requires at least one rollout")
    acc = np.zeros(NUM_FEATURES)
    for traj in rollouts:
        acc += compute_features(traj, agent, goal, cfg).as_array()
    return FeatureVector.from_array(acc / len(rollouts))


@dataclass(frozen=True)
class StageCostModel:
    """One agent's running cost as per-step terms over (joint state, own control).

    Summing state_cost over all T+1 states and control terms over the T steps
    reproduces cost(theta, compute_features(...)) exactly: state terms carry a
    1/(T+1) factor and the effort term a 1/T factor. The control dependence is
    exactly quadratic with no state-control coupling, which the quadratic
    expansion exploits.
    """

    theta: CostParams
    agent: int
    goal: np.ndarray  # (2,)
    k: int
    horizon: int
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        goal = np.array(self.goal, dtype=float).ravel()
        if goal.shape != (2,):
            raise ValidationError(f"goal must be a 2-vector, got shape {goal.shape}")
        goal.setflags(write=False)
        object.__setattr__(self, "goal", goal)
        if not 0 <= self.agent < self.k:
            raise ValidationError(f"agent index {self.agent} out of range for k={self.k}")
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")

    @property
    def control_weight(self) -> float:
        """Coefficient w of the per-step effort term w * ||u||^2."""
        return float(self.theta.weights[2]) / self.horizon

    def state_cost(self, x: np.ndarray) -> np.ndarray:
        """Per-step state term; x has shape (..., 4k), result (...,)."""
        x = np.asarray(x, dtype=float)
        pos = x.reshape(x.shape[:-1] + (self.k, STATE_DIM))[..., :2]
        own = pos[..., self.agent, :]
        g = np.sum((own - self.goal) ** 2, axis=-1)
        p = pairwise_proximity(pos, self.agent, self.sigma)
        w = self.theta.weights
        return (w[0] * g + w[1] * p) / (self.horizon + 1)

    def terminal_cost(self, x: np.ndarray) -> np.ndarray:
        return self.state_cost(x)

    def __call__(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.state_cost(x) + self.control_weight * np.sum(u * u, axis=-1)


def stage_cost_models(
    thetas: Sequence[CostParams],
    spec: ScenarioSpec,
    cfg: ProximityConfig = ProximityConfig(),
) -> list[StageCostModel]:
    """One StageCostModel per agent for a scenario with known goals."""
    if spec.goals is None:
        raise ValidationError("scenario has no goals; infer them before building costs")
    if len(thetas) != spec.k:
        raise ValidationError(f"need {spec.k} weight vectors, got {len(thetas)}")
    return [
        StageCostModel(theta=thetas[i], agent=i, goal=spec.goals[i], k=spec.k,
                       horizon=spec.horizon, sigma=cfg.sigma)
        for i in range(spec.k)
    ]


def trajectory_cost(model: StageCostModel, traj: Trajectory) -> float:
    """Total cost of a trajectory under a stage model (equals theta . features)."""
    state_terms = model.state_cost(traj.states)
    u = traj.agent_controls(model.agent)
    return float(np.sum(state_terms) + model.control_weight * np.sum(u * u))
