"""Solving the entropy-regularized LQ game and watching the covariance repair.

Two pedestrians pass head-on. Their costs are expanded to quadratics along
the constant-velocity nominal and the coupled backward recursion returns
time-varying Gaussian feedback policies. With a heavy crowding weight and a
tiny effort weight the control curvature degenerates mid-encounter, so the
policy covariance is floored by the minimal diagonal shift; the diagnostics
record exactly where and by how much rationality was traded for tractability.
"""
import numpy as np

from crowdirl import (
    AgentState,
    CostParams,
    JointState,
    ScenarioSpec,
    SolverConfig,
    build_policies,
    mean_rollout,
    sample_rollouts,
)

spec = ScenarioSpec(
    k=2,
    x0=JointState((AgentState(-1.5, 0.0, 1.0, 0.0), AgentState(1.5, 0.05, -1.0, 0.0))),
    goals=np.array([[1.5, 0.0], [-1.5, 0.05]]),
    horizon=30,
    dt=0.1,
)

print("== well-behaved weights: no repair needed ==")
tame = CostParams(np.array([1.0, 0.5, 0.2]))
policies = build_policies([tame, tame], spec, SolverConfig(entropy_temp=1e-3))
print(f"conditioned stages: {policies.diagnostics.conditioned_stages}"
      f" / {policies.diagnostics.horizon * policies.diagnostics.k}")
stage = policies.stages[0][0]
print(f"agent 0, t=0 gain row 0: {np.round(stage.K[0], 3)}")
print(f"agent 0, t=0 covariance diag: {np.round(np.diag(stage.Sigma), 6)}")

print("\n== crowded + near-zero effort cost: curvature degenerates ==")
edgy = CostParams(np.array([0.5, 8.0, 0.01]))
policies = build_policies([edgy, edgy], spec, SolverConfig(entropy_temp=1.0))
diag = policies.diagnostics
print(f"conditioned stages: {diag.conditioned_stages} / {diag.horizon * diag.k}")
worst = max(diag.events, key=lambda e: e[2])
print(f"largest shift: {worst[2]:.3g} at t={worst[0]}, agent {worst[1]}")

print("\n== rollouts stay usable either way ==")
mean = mean_rollout(policies, spec)
closest = np.min(np.linalg.norm(mean.positions(0) - mean.positions(1), axis=1))
print(f"mean-rollout closest approach: {closest:.3f} m")
draws = sample_rollouts(policies, spec, M=5, seed=42)
spread = np.std([r.positions(0)[-1] for r in draws], axis=0)
print(f"final-position spread over 5 sampled rollouts: {np.round(spread, 3)} m")
again = sample_rollouts(policies, spec, M=5, seed=42)
identical = all(np.array_equal(a.states, b.states) for a, b in zip(draws, again))
print(f"same seed reproduces the sample set bit-for-bit: {identical}")
