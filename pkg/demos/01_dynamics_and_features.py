"""States, exact stepping, dataset layout, and the trajectory feature basis.

Walk through the core value types: propagate an agent under acceleration,
convert between the solver's Cartesian states and dataset rows (position,
speed, heading), and compute the three trajectory features for a small scene.
"""
import numpy as np

from crowdirl import (
    AgentState,
    ControlInput,
    JointState,
    ProximityConfig,
    ScenarioSpec,
    compute_features,
    cost,
    CostParams,
    from_dataset_row,
    propagate,
    rollout_openloop,
    to_dataset_row,
)

print("== exact double-integrator stepping ==")
state = AgentState(px=0.0, py=0.0, vx=1.0, vy=0.0)
push = ControlInput(ax=2.0, ay=0.0)
after = propagate(state, push, dt=0.5)
print(f"start {state}")
print(f"after 0.5 s under {push}: {after}")
print(f"(hand check: px = 0 + 1*0.5 + 0.5*2*0.25 = {0 + 0.5 + 0.25})")

print("\n== dataset row layout: (px, py, speed, heading) per agent ==")
joint = JointState((AgentState(0.0, 0.0, 0.0, 1.0), AgentState(3.0, 1.0, -1.0, 0.0)))
row = to_dataset_row(joint)
print(f"row: {np.round(row, 4)}")
back = from_dataset_row(row)
print(f"round trip error: {np.max(np.abs(back.as_array() - joint.as_array())):.2e}")

print("\n== trajectory features ==")
# two walkers heading toward each other for two seconds
spec = ScenarioSpec(
    k=2,
    x0=JointState((AgentState(-2.0, 0.0, 1.0, 0.0), AgentState(2.0, 0.3, -1.0, 0.0))),
    goals=np.array([[2.0, 0.0], [-2.0, 0.3]]),
    horizon=20,
    dt=0.1,
)
traj = rollout_openloop(spec, np.zeros((spec.horizon, spec.k, 2)))
for i in range(spec.k):
    phi = compute_features(traj, i, spec.goals[i], ProximityConfig(sigma=1.5))
    print(
        f"agent {i}: goal_dist {phi.goal_dist:7.3f} m^2 | "
        f"proximity {phi.proximity:6.4f} | effort {phi.effort:.4f}"
    )
theta = CostParams(np.array([1.0, 0.5, 0.2]))
phi0 = compute_features(traj, 0, spec.goals[0])
print(f"weighted cost for agent 0 at theta {theta.weights}: {cost(theta, phi0):.3f}")
