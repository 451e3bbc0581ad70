import math

import numpy as np
import pytest

from crowdirl.errors import FormatError, ValidationError
from crowdirl.trajectory import (
    AgentState,
    ControlInput,
    JointState,
    ScenarioSpec,
    Trajectory,
    clamp_control,
    constant_velocity_rollout,
    from_dataset_array,
    from_dataset_row,
    propagate,
    propagate_joint,
    rollout_openloop,
    to_dataset_array,
    to_dataset_row,
)


def test_propagate_zero_acceleration_unit_velocity():
    out = propagate(AgentState(0, 0, 1, 0), ControlInput(0, 0), dt=1.0)
    assert out == AgentState(1, 0, 1, 0)


def test_propagate_fixed_point_at_rest():
    out = propagate(AgentState(0, 0, 0, 0), ControlInput(0, 0), dt=0.1)
    assert out == AgentState(0, 0, 0, 0)


def test_propagate_hand_arithmetic():
    # p' = 0 + 1*0.5 + 0.5*2*0.25 = 0.75, v' = 1 + 2*0.5 = 2
    out = propagate(AgentState(0, 0, 1, 0), ControlInput(2, 0), dt=0.5)
    assert out == AgentState(0.75, 0.0, 2.0, 0.0)


def test_propagate_rejects_nonfinite_named_field():
    with pytest.raises(ValidationError, match="vx"):
        AgentState(0, 0, float("nan"), 0)
    with pytest.raises(ValidationError, match="ay"):
        ControlInput(0, float("inf"))
    with pytest.raises(ValidationError, match="dt"):
        propagate(AgentState(0, 0, 0, 0), ControlInput(0, 0), dt=0.0)


def test_propagate_is_affine_in_state_and_control():
    rng = np.random.default_rng(42)
    dt = 0.17
    for _ in range(50):
        s1, s2 = rng.standard_normal(4), rng.standard_normal(4)
        u1, u2 = rng.standard_normal(2), rng.standard_normal(2)
        a = rng.uniform(-2, 2)
        b = 1.0 - a
        mixed = propagate(
            AgentState.from_array(a * s1 + b * s2),
            ControlInput(*(a * u1 + b * u2)),
            dt,
        ).as_array()
        parts = a * propagate(AgentState.from_array(s1), ControlInput(*u1), dt).as_array() + (
            b * propagate(AgentState.from_array(s2), ControlInput(*u2), dt).as_array()
        )
        assert np.allclose(mixed, parts, atol=1e-12)


def test_propagate_joint_matches_scalar_propagate():
    rng = np.random.default_rng(3)
    states = rng.standard_normal((5, 8))
    controls = rng.standard_normal((5, 2, 2))
    out = propagate_joint(states, controls, 0.2)
    for r in range(5):
        for i in range(2):
            ref = propagate(
                AgentState.from_array(states[r, 4 * i : 4 * i + 4]),
                ControlInput(*controls[r, i]),
                0.2,
            ).as_array()
            assert np.allclose(out[r, 4 * i : 4 * i + 4], ref, atol=1e-14)


# --- dataset layout -----------------------------------------------------------


def test_to_dataset_row_axis_aligned():
    row = to_dataset_row(JointState((AgentState(1, 2, 3, 0),)))
    assert np.allclose(row, [1, 2, 3, 0])


def test_to_dataset_row_quarter_turn():
    row = to_dataset_row(JointState((AgentState(0, 0, 0, 1),)))
    assert np.allclose(row, [0, 0, 1, math.pi / 2])


def test_to_dataset_row_rest_convention():
    row = to_dataset_row(JointState((AgentState(5, 5, 0, 0),)))
    assert np.allclose(row, [5, 5, 0, 0])


def test_from_dataset_row_inverse_cases():
    st = from_dataset_row([1, 2, 3, 0]).agents[0]
    assert (st.px, st.py, st.vx, st.vy) == (1, 2, 3, 0)
    st = from_dataset_row([0, 0, 1, math.pi / 2]).agents[0]
    assert abs(st.vx) < 1e-12 and abs(st.vy - 1) < 1e-12
    st = from_dataset_row([0, 0, 0, 2.7]).agents[0]
    assert (st.vx, st.vy) == (0.0, 0.0)


def test_from_dataset_row_rejects_bad_rows():
    with pytest.raises(FormatError):
        from_dataset_row([1, 2, 3])
    with pytest.raises(FormatError):
        from_dataset_row([0, 0, -1.0, 0])


def test_dataset_roundtrip_moving_states():
    rng = np.random.default_rng(11)
    for _ in range(100):
        state = rng.standard_normal(8)
        state[[2, 3, 6, 7]] += np.sign(state[[2, 3, 6, 7]]) * 0.1  # keep speeds > 0
        row = to_dataset_array(state)
        back = from_dataset_array(row)
        assert np.allclose(back, state, atol=1e-12)
        # row-side round trip too
        assert np.allclose(to_dataset_array(back), row, atol=1e-12)


def test_heading_range_is_half_open():
    # velocity pointing exactly along -x: atan2 gives pi, never -pi
    row = to_dataset_array(np.array([0.0, 0.0, -1.0, 0.0]))
    assert row[3] == math.pi
    row = to_dataset_array(np.array([0.0, 0.0, -1.0, -0.0]))
    assert row[3] == math.pi


# --- trajectories ----------------------------------------------------------------


def test_rollout_openloop_static():
    spec = ScenarioSpec(
        k=1, x0=JointState((AgentState(1, 1, 0, 0),)), goals=None, horizon=1, dt=0.5
    )
    traj = rollout_openloop(spec, np.zeros((1, 1, 2)))
    assert np.array_equal(traj.states[0], traj.states[1])


def test_rollout_openloop_constant_push():
    spec = ScenarioSpec(
        k=1, x0=JointState((AgentState(0, 0, 0, 0),)), goals=None, horizon=2, dt=1.0
    )
    controls = np.tile(np.array([1.0, 0.0]), (2, 1, 1))
    traj = rollout_openloop(spec, controls)
    assert np.allclose(traj.positions(0)[:, 0], [0.0, 0.5, 2.0])


def test_rollout_openloop_rejects_length_mismatch():
    spec = ScenarioSpec(
        k=1, x0=JointState((AgentState(0, 0, 0, 0),)), goals=None, horizon=3, dt=1.0
    )
    with pytest.raises(ValidationError):
        rollout_openloop(spec, np.zeros((2, 1, 2)))


def test_trajectory_replay_consistency():
    rng = np.random.default_rng(8)
    spec = ScenarioSpec(
        k=2,
        x0=JointState((AgentState(0, 0, 1, 0), AgentState(3, 1, -1, 0))),
        goals=None,
        horizon=20,
        dt=0.1,
    )
    traj = rollout_openloop(spec, rng.standard_normal((20, 2, 2)))
    assert traj.propagation_residual() < 1e-9


def test_trajectory_shape_validation():
    with pytest.raises(ValidationError):
        Trajectory(states=np.zeros((3, 4)), controls=np.zeros((1, 1, 2)), dt=0.1)
    with pytest.raises(ValidationError):
        Trajectory(states=np.zeros((3, 4)), controls=np.zeros((2, 1, 2)), dt=-1.0)


def test_trajectory_arrays_frozen():
    traj = constant_velocity_rollout(
        ScenarioSpec(k=1, x0=JointState((AgentState(0, 0, 1, 0),)), goals=None, horizon=2, dt=0.1)
    )
    with pytest.raises(ValueError):
        traj.states[0, 0] = 99.0


def test_clamp_control_scales_norm():
    u = np.array([4.0, 3.0])  # norm 5
    clamped = clamp_control(u, u_max=3.0)
    assert abs(np.linalg.norm(clamped) - 3.0) < 1e-12
    assert np.allclose(clamped / np.linalg.norm(clamped), u / 5.0)
    small = np.array([0.3, -0.1])
    assert np.array_equal(clamp_control(small, 3.0), small)
