import math

import numpy as np
import pytest

from crowdirl.errors import ValidationError
from crowdirl.features import CostParams
from crowdirl.game import SolverConfig
from crowdirl.metrics import (
    CdfSeries,
    EntropyReport,
    MetricReport,
    PredictorContext,
    ade,
    efe,
    emit_report,
    evaluate_method,
    fde,
    make_predictor,
    parse_report_csv,
    rank_methods,
    render_cdf_svg,
    render_overlay_svg,
    rmse,
    rmse_cdf,
    score_predictions,
    split_dataset,
    trajectory_entropy,
)
from crowdirl.pipeline import synth_generate
from crowdirl.trajectory import Trajectory

QUIET = SolverConfig(entropy_temp=1e-3)


class TestDisplacementMetrics:
    def test_identical_sequences(self):
        p = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert ade(p, p) == 0.0 and fde(p, p) == 0.0 and efe(p, p) == 0.0

    def test_345_offset(self):
        gt = np.zeros((4, 2))
        pred = gt + [3.0, 4.0]
        assert ade(pred, gt) == 5.0
        assert fde(pred, gt) == 5.0

    def test_mean_of_varying_errors(self):
        gt = np.zeros((2, 2))
        pred = np.array([[0.0, 0.0], [2.0, 0.0]])
        assert ade(pred, gt) == 1.0

    def test_fde_independent_of_ade(self):
        gt = np.zeros((3, 2))
        pred = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]])
        assert fde(pred, gt) == 2.0
        assert ade(pred, gt) == 1.0

    def test_bounds_and_final_element(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            gt = rng.standard_normal((7, 2))
            pred = rng.standard_normal((7, 2))
            errs = np.linalg.norm(pred - gt, axis=1)
            assert ade(pred, gt) <= errs.max() + 1e-15
            assert fde(pred, gt) == errs[-1]
            assert rmse(pred, gt) >= ade(pred, gt) - 1e-15

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            ade(np.zeros((2, 2)), np.zeros((3, 2)))


class TestRmseCdf:
    def test_all_zero_errors(self):
        series = rmse_cdf([0.0, 0.0], [0.5])
        assert series.fractions.tolist() == [1.0]

    def test_counting(self):
        series = rmse_cdf([1.0, 3.0], [2.0])
        assert series.fractions.tolist() == [0.5]

    def test_thresholds_below_min(self):
        series = rmse_cdf([1.0, 3.0], [0.5])
        assert series.fractions.tolist() == [0.0]

    def test_monotone_and_permutation_invariant(self):
        errs = [0.3, 1.2, 0.7, 2.5, 0.1]
        ths = np.linspace(0, 3, 13)
        a = rmse_cdf(errs, ths)
        b = rmse_cdf(errs[::-1], ths)
        assert np.all(np.diff(a.fractions) >= 0)
        assert np.array_equal(a.fractions, b.fractions)

    def test_validation(self):
        with pytest.raises(ValidationError):
            CdfSeries(thresholds=np.array([1.0, 0.5]), fractions=np.array([0.0, 1.0]))


def _heading_traj(headings, dt=0.1) -> Trajectory:
    """One agent whose T+1 states carry exactly the given unit-speed headings."""
    n = len(headings)
    states = np.zeros((n, 4))
    for t, h in enumerate(headings):
        states[t, 2] = math.cos(h)
        states[t, 3] = math.sin(h)
    return Trajectory(states, np.zeros((n - 1, 1, 2)), dt)


class TestTrajectoryEntropy:
    def test_identical_headings_zero_bits(self):
        rep = trajectory_entropy([_heading_traj([0.4] * 9)], bins=8)
        assert rep.bits == 0.0

    def test_two_opposite_sectors_one_bit(self):
        # equal mass in two bins: exactly 1 bit
        rep = trajectory_entropy([_heading_traj([0.0, np.pi] * 5)], bins=8)
        assert abs(rep.bits - 1.0) < 1e-12

    def test_uniform_eight_bins_three_bits(self):
        width = 2 * np.pi / 8
        centers = [-np.pi + (j + 0.5) * width for j in range(8)]
        rep = trajectory_entropy([_heading_traj(centers * 3)], bins=8)
        assert rep.bits == 3.0

    def test_rotation_by_bin_width_invariant(self):
        rng = np.random.default_rng(6)
        headings = rng.uniform(-np.pi, np.pi, 200)
        width = 2 * np.pi / 8
        rotated = ((headings + width + np.pi) % (2 * np.pi)) - np.pi
        a = trajectory_entropy([_heading_traj(list(headings))], bins=8)
        b = trajectory_entropy([_heading_traj(list(rotated))], bins=8)
        assert abs(a.bits - b.bits) < 1e-9

    def test_bound(self):
        rng = np.random.default_rng(7)
        headings = list(rng.uniform(-np.pi, np.pi, 500))
        rep = trajectory_entropy([_heading_traj(headings)], bins=8)
        assert 0.0 <= rep.bits <= 3.0
        with pytest.raises(ValidationError):
            EntropyReport(bits=3.5, bins=8)

    def test_empty_dataset(self):
        with pytest.raises(ValidationError):
            trajectory_entropy([], bins=8)


class TestReports:
    def _demo_and_pred(self, intersection_spec, theta_star):
        demos = synth_generate(theta_star, intersection_spec, 3, seed=0, solver_cfg=QUIET)
        perfect = [
            np.stack([d.positions(i) for i in range(3)], axis=1) for d in demos
        ]
        return demos, perfect

    def test_perfect_predictions_zero_errors(self, intersection_spec, theta_star):
        demos, perfect = self._demo_and_pred(intersection_spec, theta_star)
        rep = score_predictions("oracle", "scene", demos, perfect)
        assert rep.ade == 0.0 and rep.fde == 0.0
        assert np.all(rep.rmse_per_traj == 0.0)

    def test_csv_roundtrip(self, tmp_path, intersection_spec, theta_star):
        demos, perfect = self._demo_and_pred(intersection_spec, theta_star)
        rep = score_predictions("oracle", "scene", demos, perfect)
        path = tmp_path / "report.csv"
        emit_report([rep], "csv", path)
        rows = parse_report_csv(path)
        assert len(rows) == 4  # 3 agents + aggregate
        assert rows[-1]["agent"] == "all"
        assert rows[-1]["ade_m"] == rep.ade

    def test_empty_report_emits_header(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_report([], "csv", path)
        assert parse_report_csv(path) == []

    def test_emission_is_deterministic(self, tmp_path, intersection_spec, theta_star):
        demos, perfect = self._demo_and_pred(intersection_spec, theta_star)
        rep = score_predictions("oracle", "scene", demos, perfect)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        emit_report([rep], "jsonl", p1)
        emit_report([rep], "jsonl", p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_ranking_sorts_by_ade_then_fde(self):
        mk = lambda m, a, f: MetricReport(
            method=m, scenario="s",
            per_agent_ade=np.array([a]), per_agent_fde=np.array([f]),
            per_agent_efe=np.array([a]), rmse_per_traj=np.array([a]),
        )
        ranked = rank_methods([mk("slow", 2.0, 1.0), mk("tie_b", 1.0, 2.0),
                               mk("tie_a", 1.0, 1.0), mk("fast", 0.5, 3.0)])
        assert [r.method for r in ranked] == ["fast", "tie_a", "tie_b", "slow"]

    def test_svg_outputs_are_stable_and_wellformed(self, tmp_path, intersection_spec, theta_star):
        demos, perfect = self._demo_and_pred(intersection_spec, theta_star)
        rep = score_predictions("oracle", "scene", demos, perfect)
        svg1 = render_cdf_svg({"oracle": rmse_cdf([0.1, 0.2], np.linspace(0, 1, 5))})
        svg2 = render_cdf_svg({"oracle": rmse_cdf([0.1, 0.2], np.linspace(0, 1, 5))})
        assert svg1 == svg2
        assert svg1.startswith("<svg") and svg1.rstrip().endswith("</svg>")
        overlay = render_overlay_svg(demos, perfect)
        assert overlay.count("stroke-dasharray") == 3 * len(perfect)
        emit_report([rep], "svg", tmp_path / "cdf.svg")
        assert (tmp_path / "cdf.svg").read_text().startswith("<svg")


class TestPredictors:
    def test_cv_exact_on_constant_velocity_demo(self, intersection_spec):
        # zero-cost agents keep their initial velocity; cv predicts exactly
        thetas = [CostParams(np.array([0.0, 0.0, 1.0]))] * 3
        demos = synth_generate(
            thetas, intersection_spec, 2, seed=1,
            solver_cfg=SolverConfig(entropy_temp=1e-300, eps_psd=1e-30),
        )
        ctx = PredictorContext(spec=intersection_spec, train_demos=demos)
        rep = evaluate_method("cv", "scene", demos, ctx)
        assert rep.ade < 1e-9

    def test_irl_predictor_requires_thetas(self, intersection_spec, theta_star):
        demos = synth_generate(theta_star, intersection_spec, 2, seed=1, solver_cfg=QUIET)
        ctx = PredictorContext(spec=intersection_spec, train_demos=demos)
        with pytest.raises(ValidationError):
            make_predictor("mairl", ctx)

    def test_unknown_method(self, intersection_spec, theta_star):
        demos = synth_generate(theta_star, intersection_spec, 2, seed=1, solver_cfg=QUIET)
        ctx = PredictorContext(spec=intersection_spec, train_demos=demos)
        with pytest.raises(ValidationError):
            make_predictor("transformer", ctx)

    def test_mairl_predictor_close_at_true_weights(self, intersection_spec, theta_star):
        demos = synth_generate(theta_star, intersection_spec, 6, seed=1, solver_cfg=QUIET)
        ctx = PredictorContext(
            spec=intersection_spec, train_demos=demos, thetas=theta_star, solver=QUIET
        )
        rep = evaluate_method("mairl", "scene", demos, ctx)
        assert rep.ade < 0.1  # only residual policy noise separates them

    def test_best_of_n_improves_or_matches(self, intersection_spec, theta_star):
        demos = synth_generate(theta_star, intersection_spec, 4, seed=2, solver_cfg=QUIET)
        base = PredictorContext(
            spec=intersection_spec, train_demos=demos, thetas=theta_star, solver=QUIET
        )
        best5 = PredictorContext(
            spec=intersection_spec, train_demos=demos, thetas=theta_star, solver=QUIET,
            best_of=5, seed=3,
        )
        r1 = evaluate_method("mairl", "s", demos, base)
        r5 = evaluate_method("mairl", "s", demos, best5)
        assert r5.ade <= r1.ade + 0.02


def test_split_dataset_is_seeded_partition(intersection_spec, theta_star):
    demos = synth_generate(theta_star, intersection_spec, 10, seed=4, solver_cfg=QUIET)
    train, val = split_dataset(demos, 0.6, seed=8)
    assert len(train) == 6 and len(val) == 4
    ids = {id(t) for t in train} | {id(v) for v in val}
    assert len(ids) == 10
    train2, val2 = split_dataset(demos, 0.6, seed=8)
    assert [id(t) for t in train] == [id(t) for t in train2]
