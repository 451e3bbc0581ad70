import json

import numpy as np
import pytest

from crowdirl.errors import FormatError, ValidationError
from crowdirl.features import CostParams
from crowdirl.game import SolverConfig
from crowdirl.pipeline import (
    PreprocessConfig,
    Track,
    assemble_joint,
    combinatorial_scenarios,
    filter_tracks,
    parse_frames,
    read_demonstrations,
    synth_generate,
    tracks_from_frames,
    travel_direction,
    write_demonstrations,
)
from crowdirl.trajectory import AgentState, JointState, ScenarioSpec


def _frame_line(t, objects):
    objs = [
        {
            "id": oid, "x": x, "y": y, "w": 0.6, "l": 0.6,
            "angle": ang, "class": "pedestrian", "speed": v, "acc": 0.95,
        }
        for (oid, x, y, v, ang) in objects
    ]
    return json.dumps({"t": t, "objects": objs})


def _walk_frames(oid="p1", n=30, dt=0.1, vx=1.0, x0=0.0, y0=0.0):
    return [
        _frame_line(j * dt, [(oid, x0 + vx * j * dt, y0, abs(vx), 0.0)])
        for j in range(n)
    ]


class TestParseFrames:
    def test_empty_stream(self):
        assert parse_frames([]) == []

    def test_single_frame_schema_echo(self):
        frames = parse_frames([_frame_line(0.5, [("a", 1.0, 2.0, 1.3, 0.2)])])
        assert len(frames) == 1
        obj = frames[0].objects[0]
        assert (obj.object_id, obj.x, obj.y) == ("a", 1.0, 2.0)
        assert (obj.width, obj.length, obj.angle) == (0.6, 0.6, 0.2)
        assert (obj.agent_class, obj.speed, obj.accuracy) == ("pedestrian", 1.3, 0.95)

    def test_out_of_order_timestamps_name_both_frames(self):
        lines = [_frame_line(1.0, []), _frame_line(0.5, [])]
        with pytest.raises(FormatError, match=r"0\.5.*1\.0"):
            parse_frames(lines)

    def test_unknown_keys_listed(self):
        bad = json.dumps({"t": 0.0, "objects": [], "extra": 1})
        with pytest.raises(FormatError, match="extra"):
            parse_frames([bad])
        obj = {
            "id": "a", "x": 0, "y": 0, "w": 1, "l": 1, "angle": 0,
            "class": "pedestrian", "speed": 0, "acc": 1, "bogus": 2,
        }
        with pytest.raises(FormatError, match="bogus"):
            parse_frames([json.dumps({"t": 0.0, "objects": [obj]})])

    def test_malformed_json_carries_line_number(self):
        with pytest.raises(FormatError, match="line 2"):
            parse_frames([_frame_line(0.0, []), "{not json"])

    def test_rejects_unknown_class_and_bad_ranges(self):
        with pytest.raises(FormatError):
            parse_frames([_frame_line(0.0, [("a", 0, 0, -1.0, 0)])])  # speed < 0


class TestTracks:
    def test_two_frames_one_track(self):
        tracks = tracks_from_frames(parse_frames(_walk_frames(n=2)))
        assert set(tracks) == {"p1"}
        assert len(tracks["p1"]) == 2

    def test_single_appearance_single_point(self):
        tracks = tracks_from_frames(parse_frames(_walk_frames(n=1)))
        assert len(tracks["p1"]) == 1

    def test_gap_splits_track(self):
        lines = [
            _frame_line(0.0, [("p", 0.0, 0.0, 1.0, 0.0)]),
            _frame_line(0.1, [("p", 0.1, 0.0, 1.0, 0.0)]),
            _frame_line(1.1, [("p", 1.1, 0.0, 1.0, 0.0)]),  # 1.0 s gap > 5 * 0.1
            _frame_line(1.2, [("p", 1.2, 0.0, 1.0, 0.0)]),
        ]
        tracks = tracks_from_frames(parse_frames(lines))
        assert set(tracks) == {"p#0", "p#1"}

    def test_resampling_onto_uniform_grid(self):
        lines = [
            _frame_line(0.0, [("p", 0.0, 0.0, 1.0, 0.0)]),
            _frame_line(0.25, [("p", 0.25, 0.0, 1.0, 0.0)]),
        ]
        track = tracks_from_frames(parse_frames(lines))["p"]
        assert len(track) == 3  # 0.0, 0.1, 0.2
        assert np.allclose(track.states[:, 0], [0.0, 0.1, 0.2], atol=1e-12)

    def test_velocity_from_speed_and_angle(self):
        lines = [_frame_line(0.0, [("p", 0.0, 0.0, 2.0, np.pi / 2)])]
        track = tracks_from_frames(parse_frames(lines))["p"]
        assert np.allclose(track.states[0, 2:], [0.0, 2.0], atol=1e-12)


def _track(name, xs, ys, v=1.2, dt=0.1):
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    vx = np.gradient(xs, dt) if len(xs) > 1 else np.zeros_like(xs)
    vy = np.gradient(ys, dt) if len(ys) > 1 else np.zeros_like(ys)
    return Track(track_id=name, t0=0.0, dt=dt, states=np.stack([xs, ys, vx, vy], axis=1))


class TestFilterTracks:
    def test_standstill_dropped(self):
        cfg = PreprocessConfig()
        still = _track("still", np.full(20, 1.0), np.zeros(20))
        assert filter_tracks({"still": still}, cfg) == {}

    def test_out_of_range_points_trimmed(self):
        cfg = PreprocessConfig()
        xs = np.linspace(10.0, 25.0, 31)  # crosses x = +20
        walk = _track("w", xs, np.zeros_like(xs))
        out = filter_tracks({"w": walk}, cfg)
        assert np.all(out["w"].states[:, 0] <= 20.0)
        assert len(out["w"]) == int(np.sum(xs <= 20.0))

    def test_short_survivor_dropped(self):
        cfg = PreprocessConfig(min_track_len=10)
        xs = np.linspace(0, 0.5, 5)
        assert filter_tracks({"s": _track("s", xs, np.zeros_like(xs))}, cfg) == {}

    def test_idempotent(self):
        cfg = PreprocessConfig()
        xs = np.linspace(-25, 25, 101)
        tracks = {"a": _track("a", xs, np.zeros_like(xs))}
        once = filter_tracks(tracks, cfg)
        twice = filter_tracks(once, cfg)
        assert set(once) == set(twice)
        for name in once:
            assert np.array_equal(once[name].states, twice[name].states)
            assert once[name].t0 == twice[name].t0


def test_travel_direction_labels():
    n = 12
    line = np.linspace(0, 3, n)
    flat = np.zeros(n)
    assert travel_direction(_track("e", line, flat)) == "E"
    assert travel_direction(_track("w", -line, flat)) == "W"
    assert travel_direction(_track("n", flat, line)) == "N"
    assert travel_direction(_track("s", flat, -line)) == "S"


class TestAssembleJoint:
    def test_shape_single_track(self):
        arr = assemble_joint([_track("a", [0.0, 0.1, 0.2], [0.0, 0.0, 0.0])], T=2)
        assert arr.shape == (2, 4)

    def test_shape_three_tracks(self):
        n = 40
        line = np.linspace(0, 4, n)
        tracks = [
            _track("a", line, np.zeros(n)),
            _track("b", np.zeros(n), line),
            _track("c", -line, np.zeros(n)),
        ]
        assert assemble_joint(tracks, T=30).shape == (30, 12)

    def test_insufficient_overlap_names_shortest(self):
        long = _track("long", np.linspace(0, 2, 20), np.zeros(20))
        short = _track("shorty", np.linspace(0, 0.4, 5), np.zeros(5))
        with pytest.raises(ValidationError, match="shorty"):
            assemble_joint([long, short], T=10)


class TestCombinatorialScenarios:
    def _groups(self, n, length=40):
        line = np.linspace(0, 4, length)
        flat = np.zeros(length)
        mk = lambda d, j: _track(f"{d}{j}", *{
            "E": (line, flat), "W": (-line, flat), "N": (flat, line), "S": (flat, -line),
        }[d])
        return {d: [mk(d, j) for j in range(n)] for d in "EWNS"}

    def test_paper_scale_catalog(self):
        catalog = combinatorial_scenarios(
            self._groups(5), ["W-E-S", "W-E-N", "S-N-W", "S-N-E"], T=30
        )
        assert catalog.size == 500
        assert catalog.count_by_category() == {
            "W-E-S": 125, "W-E-N": 125, "S-N-W": 125, "S-N-E": 125,
        }

    def test_single_track_groups(self):
        catalog = combinatorial_scenarios(self._groups(1), ["W-E-S"], T=30)
        assert catalog.size == 1

    def test_cube_law(self):
        catalog = combinatorial_scenarios(self._groups(2), ["S-N-W"], T=30)
        assert catalog.size == 8

    def test_missing_direction_group(self):
        groups = self._groups(2)
        del groups["S"]
        with pytest.raises(ValidationError, match="S"):
            combinatorial_scenarios(groups, ["W-E-S"], T=30)


class TestSynthGenerate:
    def test_seed_reproducibility(self, intersection_spec, theta_star):
        cfg = SolverConfig(entropy_temp=1e-3)
        a = synth_generate(theta_star, intersection_spec, 3, seed=5, solver_cfg=cfg)
        b = synth_generate(theta_star, intersection_spec, 3, seed=5, solver_cfg=cfg)
        for x, y in zip(a, b):
            assert np.array_equal(x.states, y.states)

    def test_vanishing_temperature_collapses_demos(self, intersection_spec, theta_star):
        cfg = SolverConfig(entropy_temp=1e-300, eps_psd=1e-30)
        demos = synth_generate(theta_star, intersection_spec, 3, seed=5, solver_cfg=cfg)
        for d in demos[1:]:
            assert np.max(np.abs(d.states - demos[0].states)) < 1e-9

    def test_proximity_weight_increases_separation(self):
        spec = ScenarioSpec(
            k=2,
            x0=JointState((AgentState(-3, 0, 1.2, 0), AgentState(3, 0.15, -1.2, 0))),
            goals=np.array([[3.0, 0.0], [-3.0, 0.15]]),
            horizon=50,
            dt=0.1,
        )
        cfg = SolverConfig(entropy_temp=1e-4)

        def mean_min_dist(w):
            th = CostParams(np.array([1.0, w, 0.2]))
            demos = synth_generate([th, th], spec, 5, seed=77, solver_cfg=cfg)
            return np.mean(
                [np.min(np.linalg.norm(t.positions(0) - t.positions(1), axis=1)) for t in demos]
            )

        assert mean_min_dist(1.5) > mean_min_dist(0.0)


class TestInterchange:
    def test_roundtrip_lossless(self, tmp_path, intersection_spec, theta_star):
        demos = synth_generate(
            theta_star, intersection_spec, 4, seed=1, solver_cfg=SolverConfig(entropy_temp=1e-3)
        )
        path = tmp_path / "demos.traj"
        write_demonstrations(path, demos, intersection_spec.goals, {"note": "test"})
        back, header = read_demonstrations(path)
        assert header["count"] == 4 and header["k"] == 3
        assert np.allclose(header["goals"], intersection_spec.goals)
        for orig, rt in zip(demos, back):
            assert np.max(np.abs(orig.states - rt.states)) < 1e-9
            assert np.max(np.abs(orig.controls - rt.controls)) < 1e-6
        # writing the same trajectories again is byte-identical
        path2 = tmp_path / "demos2.traj"
        write_demonstrations(path2, demos, intersection_spec.goals, {"note": "test"})
        assert path.read_bytes() == path2.read_bytes()

    def test_unknown_header_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.traj"
        header = {"k": 1, "T": 2, "dt": 0.1, "goals": None, "count": 0,
                  "provenance": {}, "surprise": 1}
        path.write_text(json.dumps(header) + "\n")
        with pytest.raises(FormatError, match="surprise"):
            read_demonstrations(path)

    def test_wrong_row_count_rejected(self, tmp_path):
        path = tmp_path / "short.traj"
        header = {"k": 1, "T": 3, "dt": 0.1, "goals": None, "count": 1, "provenance": {}}
        path.write_text(json.dumps(header) + "\n" + "0,0,0,0\n")
        with pytest.raises(FormatError, match="expected 3"):
            read_demonstrations(path)

    def test_header_only_file(self, tmp_path, intersection_spec):
        path = tmp_path / "empty.traj"
        write_demonstrations(path, [], intersection_spec.goals, {}, spec=intersection_spec)
        trajs, header = read_demonstrations(path)
        assert trajs == [] and header["count"] == 0
