"""Feature-matching inverse reinforcement learning over game rollouts.

The multi-agent variant runs block coordinate descent: agents are visited in
a fixed round-robin order, and each visit re-solves the game at the current
weights, samples rollouts, measures that agent's feature-expectation gap
against the demonstrations, and moves only that agent's weights along the
gap. The single-agent variant shares one weight vector across all agents and
aggregates their gaps before each update.

Weights multiply cost features, so matching requires moving *with* the gap:
if the policy accrues more of a feature than the experts do, that feature
must become more expensive. Updates are projected onto the nonnegative
orthant to keep every agent's control cost convex.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .features import (
    CostParams,
    FeatureVector,
    ProximityConfig,
    StageCostModel,
    expected_features,
)
from .game import (
    PolicySequence,
    SolverConfig,
    sample_rollouts,
    solve_lq_game,
)
from .quadratic import DEFAULT_FD_STEP, expand_model_along, linearize_dynamics
from .rng import derive_seed
from .trajectory import (
    DEFAULT_U_MAX,
    ScenarioSpec,
    Trajectory,
    constant_velocity_rollout,
)

SHARED_AGENT = -1  # trace marker for updates of a shared weight vector


@dataclass(frozen=True)
class TrainingConfig:
    """Learning-rate, budget and sampling knobs of the training loop."""

    beta: float = 3e-4
    max_iters: int = 500
    tol: float = 1e-3
    M: int = 32
    seed: int = 0
    fd_step: float = DEFAULT_FD_STEP
    u_max: float = DEFAULT_U_MAX
    solver: SolverConfig = field(default_factory=SolverConfig)
    proximity: ProximityConfig = field(default_factory=ProximityConfig)

    def __post_init__(self):
        if not self.beta > 0:
            raise ValidationError(f"beta must be positive, got {self.beta!r}")
        if self.M < 1:
            raise ValidationError(f"M must be >= 1, got {self.M}")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    """One coordinate update: which agent moved, from where to where, and why."""

    sweep: int
    agent: int  # SHARED_AGENT for single-agent (shared theta) updates
    theta_before: np.ndarray
    theta_after: np.ndarray
    gap: np.ndarray
    gap_norm: float
    conditioned_stages: int

    def as_dict(self) -> dict:
        return {
            "sweep": self.sweep,
            "agent": self.agent,
            "theta_before": [float(v) for v in self.theta_before],
            "theta_after": [float(v) for v in self.theta_after],
            "gap": [float(v) for v in self.gap],
            "gap_norm": float(self.gap_norm),
            "conditioned_stages": self.conditioned_stages,
        }


@dataclass
class TrainingTrace:
    """Full update history plus the final convergence status."""

    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    sweeps: int = 0

    def gap_norms(self) -> np.ndarray:
        return np.array([r.gap_norm for r in self.records])

    def sweep_max_gap(self, sweep: int) -> float:
        norms = [r.gap_norm for r in self.records if r.sweep == sweep]
        return max(norms) if norms else float("inf")

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.as_dict(), sort_keys=True) + "\n")
            fh.write(
                json.dumps(
                    {"converged": self.converged, "sweeps": self.sweeps},
                    sort_keys=True,
                )
                + "\n"
            )


def _apply_update(theta: CostParams, gap: np.ndarray, beta: float) -> CostParams:
    return CostParams(theta.weights + beta * gap).project_nonneg()


def update_theta(
    theta: CostParams,
    phi_policy: FeatureVector,
    phi_expert: FeatureVector,
    beta: float,
) -> CostParams:
    """One projected feature-matching step on a cost weight vector.

    Features the policy over-accrues relative to the experts get a larger
    weight (they must cost more), and vice versa; the result is clipped to
    the nonnegative orthant.
    """
    return _apply_update(theta, phi_policy.as_array() - phi_expert.as_array(), beta)


def infer_goals(dataset: Sequence[Trajectory]) -> np.ndarray:
    """Per-agent goal estimate: mean final demonstrated position."""
    if not dataset:
        raise ValidationError("cannot infer goals from an empty dataset")
    finals = np.stack([traj.states[-1] for traj in dataset])  # (N, 4k)
    k = finals.shape[1] // 4
    return np.stack([finals[:, 4 * i : 4 * i + 2].mean(axis=0) for i in range(k)])


def _check_dataset(dataset: Sequence[Trajectory], spec: ScenarioSpec) -> None:
    if not dataset:
        raise ValidationError("demonstration dataset is empty")
    for traj in dataset:
        if traj.k != spec.k or traj.horizon != spec.horizon:
            raise ValidationError(
                f"demonstration with k={traj.k}, T={traj.horizon} does not match "
                f"scenario k={spec.k}, T={spec.horizon}"
            )
        if abs(traj.dt - spec.dt) > 1e-12:
            raise ValidationError(f"demonstration dt={traj.dt} != scenario dt={spec.dt}")


def _demo_features(
    dataset: Sequence[Trajectory], goals: np.ndarray, cfg: TrainingConfig
) -> list[np.ndarray]:
    return [
        expected_features(dataset, i, goals[i], cfg.proximity).as_array()
        for i in range(goals.shape[0])
    ]


def _rollout_features(
    rollouts: Sequence[Trajectory], agent: int, goal, cfg: TrainingConfig
) -> np.ndarray:
    return expected_features(rollouts, agent, goal, cfg.proximity).as_array()


def feature_gap(
    dataset: Sequence[Trajectory],
    policies: PolicySequence,
    spec: ScenarioSpec,
    agent: int,
    cfg: TrainingConfig,
    seed: int | None = None,
) -> tuple[np.ndarray, float]:
    """Policy-minus-demonstration feature expectations and their norm."""
    _check_dataset(dataset, spec)
    goals = spec.goals if spec.goals is not None else infer_goals(dataset)
    rollouts = sample_rollouts(
        policies, spec, cfg.M, cfg.seed if seed is None else seed, cfg.u_max
    )
    gap = (
        _rollout_features(rollouts, agent, goals[agent], cfg)
        - expected_features(dataset, agent, goals[agent], cfg.proximity).as_array()
    )
    return gap, float(np.linalg.norm(gap))


class _GameState:
    """Cached expansions and solver plumbing shared by both training loops."""

    def __init__(self, spec: ScenarioSpec, goals: np.ndarray, cfg: TrainingConfig):
        self.spec = spec
        self.goals = goals
        self.cfg = cfg
        self.nominal = constant_velocity_rollout(spec)
        self.dyn = linearize_dynamics(spec.k, spec.dt)
        self.expansions: list = [None] * spec.k

    def set_theta(self, agent: int, theta: CostParams) -> None:
        model = StageCostModel(
            theta=theta,
            agent=agent,
            goal=self.goals[agent],
            k=self.spec.k,
            horizon=self.spec.horizon,
            sigma=self.cfg.proximity.sigma,
        )
        self.expansions[agent] = expand_model_along(model, self.nominal, self.cfg.fd_step)

    def solve(self) -> PolicySequence:
        return solve_lq_game(
            self.dyn,
            [e[0] for e in self.expansions],
            self.cfg.solver,
            terminal=[e[1] for e in self.expansions],
            nominal=self.nominal,
        )


def multi_agent_irl(
    dataset: Sequence[Trajectory],
    spec: ScenarioSpec,
    cfg: TrainingConfig = TrainingConfig(),
) -> tuple[list[CostParams], TrainingTrace]:
    """Block coordinate descent over per-agent weight vectors.

    Deterministic given (dataset, cfg): each (sweep, agent) visit rolls out
    with a seed derived from (cfg.seed, sweep, agent). Non-convergence within
    cfg.max_iters sweeps is reported via trace.converged, not an error.
    """
    _check_dataset(dataset, spec)
    goals = spec.goals if spec.goals is not None else infer_goals(dataset)
    demo_phi = _demo_features(dataset, goals, cfg)

    thetas = [CostParams.ones() for _ in range(spec.k)]
    state = _GameState(spec, goals, cfg)
    for i in range(spec.k):
        state.set_theta(i, thetas[i])

    trace = TrainingTrace()
    for sweep in range(cfg.max_iters):
        for i in range(spec.k):
            policies = state.solve()
            rollouts = sample_rollouts(
                policies, spec, cfg.M, derive_seed(cfg.seed, sweep, i), cfg.u_max
            )
            gap = _rollout_features(rollouts, i, goals[i], cfg) - demo_phi[i]
            theta_new = _apply_update(thetas[i], gap, cfg.beta)
            trace.records.append(
                IterationRecord(
                    sweep=sweep,
                    agent=i,
                    theta_before=thetas[i].weights.copy(),
                    theta_after=theta_new.weights.copy(),
                    gap=gap,
                    gap_norm=float(np.linalg.norm(gap)),
                    conditioned_stages=policies.diagnostics.conditioned_stages,
                )
            )
            thetas[i] = theta_new
            state.set_theta(i, theta_new)
        trace.sweeps = sweep + 1
        if trace.sweep_max_gap(sweep) < cfg.tol:
            trace.converged = True
            break
    return thetas, trace


def single_agent_maxent_irl(
    dataset: Sequence[Trajectory],
    spec: ScenarioSpec,
    cfg: TrainingConfig = TrainingConfig(),
) -> tuple[CostParams, TrainingTrace]:
    """Shared-weight variant: one theta builds every agent's cost.

    Per sweep the game is solved once, one rollout set is drawn, each agent's
    gap is measured and the mean gap drives a single shared update.
    """
    _check_dataset(dataset, spec)
    goals = spec.goals if spec.goals is not None else infer_goals(dataset)
    demo_phi = _demo_features(dataset, goals, cfg)

    theta = CostParams.ones()
    state = _GameState(spec, goals, cfg)
    for i in range(spec.k):
        state.set_theta(i, theta)

    trace = TrainingTrace()
    for sweep in range(cfg.max_iters):
        policies = state.solve()
        rollouts = sample_rollouts(
            policies, spec, cfg.M, derive_seed(cfg.seed, sweep, 0), cfg.u_max
        )
        gaps = [
            _rollout_features(rollouts, i, goals[i], cfg) - demo_phi[i]
            for i in range(spec.k)
        ]
        agg = np.mean(gaps, axis=0)
        theta_new = _apply_update(theta, agg, cfg.beta)
        trace.records.append(
            IterationRecord(
                sweep=sweep,
                agent=SHARED_AGENT,
                theta_before=theta.weights.copy(),
                theta_after=theta_new.weights.copy(),
                gap=agg,
                gap_norm=float(np.linalg.norm(agg)),
                conditioned_stages=policies.diagnostics.conditioned_stages,
            )
        )
        theta = theta_new
        for i in range(spec.k):
            state.set_theta(i, theta)
        trace.sweeps = sweep + 1
        if trace.sweep_max_gap(sweep) < cfg.tol:
            trace.converged = True
            break
    return theta, trace
