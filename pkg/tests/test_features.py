import math

import numpy as np
import pytest

from crowdirl.errors import ValidationError
from crowdirl.features import (
    CostParams,
    FeatureVector,
    ProximityConfig,
    compute_features,
    cost,
    expected_features,
    stage_cost_models,
    trajectory_cost,
)
from crowdirl.trajectory import (
    AgentState,
    JointState,
    ScenarioSpec,
    Trajectory,
    constant_velocity_rollout,
    rollout_openloop,
)


def _static_traj(positions, T=1, dt=0.1) -> Trajectory:
    """k agents sitting still at the given positions for T steps."""
    k = len(positions)
    state = np.zeros(4 * k)
    for i, (x, y) in enumerate(positions):
        state[4 * i], state[4 * i + 1] = x, y
    states = np.tile(state, (T + 1, 1))
    return Trajectory(states=states, controls=np.zeros((T, k, 2)), dt=dt)


def test_features_vanish_on_goal_without_neighbors():
    traj = _static_traj([(2.0, 3.0)])
    phi = compute_features(traj, 0, goal=(2.0, 3.0))
    assert phi.as_array().tolist() == [0.0, 0.0, 0.0]


def test_features_single_kernel_evaluation():
    traj = _static_traj([(0.0, 0.0), (1.0, 0.0)])
    phi = compute_features(traj, 0, goal=(0.0, 0.0), cfg=ProximityConfig(sigma=1.0))
    assert phi.goal_dist == 0.0
    assert abs(phi.proximity - math.exp(-1.0)) < 1e-12
    assert phi.effort == 0.0


def test_features_squared_goal_distance():
    traj = _static_traj([(2.0, 0.0)])
    phi = compute_features(traj, 0, goal=(0.0, 0.0))
    assert abs(phi.goal_dist - 4.0) < 1e-12


def test_features_control_averaging_excludes_terminal():
    # one step with ||u||^2 = 4, then check effort = 4 / T with T = 2
    spec = ScenarioSpec(
        k=1, x0=JointState((AgentState(0, 0, 0, 0),)), goals=None, horizon=2, dt=0.1
    )
    controls = np.zeros((2, 1, 2))
    controls[0, 0] = [2.0, 0.0]
    traj = rollout_openloop(spec, controls)
    phi = compute_features(traj, 0, goal=(0.0, 0.0))
    assert abs(phi.effort - 2.0) < 1e-12


def test_features_index_out_of_range():
    with pytest.raises(ValidationError):
        compute_features(_static_traj([(0, 0)]), 1, goal=(0, 0))


def test_cost_examples():
    assert cost(CostParams(np.array([1.0, 1, 1])), FeatureVector(0, 0, 0)) == 0.0
    assert cost(CostParams(np.array([2.0, 0, 0])), FeatureVector(4, 9, 9)) == 8.0
    assert cost(CostParams(np.array([1.0, 2, 3])), FeatureVector(1, 1, 1)) == 6.0


def test_expected_features_mean_behavior():
    t_still = _static_traj([(1.0, 0.0)])
    spec = ScenarioSpec(
        k=1, x0=JointState((AgentState(1, 0, 0, 0),)), goals=None, horizon=1, dt=0.1
    )
    t_push = rollout_openloop(spec, np.full((1, 1, 2), [np.sqrt(2.0), 0.0][0]))
    one = expected_features([t_still], 0, (0, 0))
    assert one.as_array().tolist() == compute_features(t_still, 0, (0, 0)).as_array().tolist()
    # duplication leaves the mean unchanged
    dup = expected_features([t_still, t_still], 0, (0, 0))
    assert np.allclose(dup.as_array(), one.as_array())
    # effort averages: 0 and 2 -> 1
    t2 = rollout_openloop(spec, np.array([[[np.sqrt(2.0), 0.0]]]))
    mixed = expected_features([t_still, t2], 0, (0, 0))
    assert abs(mixed.effort - 1.0) < 1e-12


def test_expected_features_rejects_empty():
    with pytest.raises(ValidationError):
        expected_features([], 0, (0, 0))


def test_permutation_equivariance_in_neighbors():
    rng = np.random.default_rng(5)
    pos = rng.uniform(-3, 3, size=(4, 2))
    traj_a = _static_traj([tuple(p) for p in pos])
    perm = [0, 3, 1, 2]  # keep agent 0, permute the others
    traj_b = _static_traj([tuple(pos[j]) for j in perm])
    fa = compute_features(traj_a, 0, (0, 0))
    fb = compute_features(traj_b, 0, (0, 0))
    assert np.allclose(fa.as_array(), fb.as_array(), atol=1e-12)


def test_proximity_monotone_in_pairwise_distance():
    base = compute_features(_static_traj([(0, 0), (1.0, 0.0)]), 0, (0, 0)).proximity
    farther = compute_features(_static_traj([(0, 0), (1.3, 0.0)]), 0, (0, 0)).proximity
    assert farther < base


def test_feature_vector_validation():
    with pytest.raises(ValidationError):
        FeatureVector(-0.1, 0, 0)
    with pytest.raises(ValidationError):
        FeatureVector(float("nan"), 0, 0)


def test_theta_projection():
    th = CostParams(np.array([-0.5, 0.2, 0.0])).project_nonneg()
    assert th.weights.tolist() == [0.0, 0.2, 0.0]


def test_stage_cost_model_reproduces_weighted_features(intersection_spec, theta_star):
    rng = np.random.default_rng(17)
    models = stage_cost_models(theta_star, intersection_spec)
    traj = rollout_openloop(
        intersection_spec, rng.uniform(-1, 1, (intersection_spec.horizon, 3, 2))
    )
    for i, model in enumerate(models):
        phi = compute_features(traj, i, intersection_spec.goals[i])
        direct = cost(theta_star[i], phi)
        staged = trajectory_cost(model, traj)
        assert abs(direct - staged) < 1e-10


def test_stage_cost_model_control_weight(intersection_spec, theta_star):
    model = stage_cost_models(theta_star, intersection_spec)[0]
    assert abs(model.control_weight - 0.2 / intersection_spec.horizon) < 1e-15


def test_stage_cost_models_require_goals(intersection_spec, theta_star):
    with pytest.raises(ValidationError):
        stage_cost_models(theta_star, intersection_spec.with_goals(None))


def test_stage_cost_batched_evaluation(intersection_spec, theta_star):
    model = stage_cost_models(theta_star, intersection_spec)[1]
    nominal = constant_velocity_rollout(intersection_spec)
    batch = np.tile(nominal.states[0], (7, 1))
    u = np.zeros((7, 2))
    vals = model(batch, u)
    assert vals.shape == (7,)
    assert np.allclose(vals, vals[0])
