"""Displacement metrics, report generation and the scoring protocol.

Metric math (ADE, FDE, per-trajectory RMSE, CDF curves, heading entropy) is
kept exact and branch-free; the scoring protocol turns a method name plus
training data into per-demonstration position predictions and aggregates the
errors into reports. Reports serialize to CSV, JSONL or deterministic SVG
(fixed canvas and palette so outputs are byte-stable for a given input).

EFE is reported as full-horizon ADE on tracker-derived inputs; that reading
is an interpretation of this artifact and is labeled as such in emitted
reports.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import (
    EnergyParams,
    GmmModel,
    ebm_minimizer,
    ebm_train,
    gmm_conditional_mean,
    gmm_fit,
)
from .errors import FormatError, ValidationError
from .features import CostParams, ProximityConfig
from .game import SolverConfig, build_policies, mean_rollout, sample_rollouts
from .quadratic import DEFAULT_FD_STEP
from .rng import substream
from .trajectory import (
    DEFAULT_U_MAX,
    ScenarioSpec,
    Trajectory,
    clamp_control,
    propagate_joint,
)

EFE_NOTE = "efe_m is full-horizon ADE on tracker-derived inputs (artifact interpretation)"
BASELINE_NAMES = ("cv", "gmm", "ebm", "mairl", "sairl")


# --- metric math -------------------------------------------------------------


def _check_paired(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[0] < 1 or pred.shape[1] != 2:
        raise ValidationError(
            f"prediction and ground truth must be equal (n, 2) arrays, got {pred.shape} vs {gt.shape}"
        )
    return pred, gt


def ade(pred, gt) -> float:
    """Mean Euclidean displacement over aligned steps."""
    pred, gt = _check_paired(pred, gt)
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def fde(pred, gt) -> float:
    """Euclidean displacement at the final step only."""
    pred, gt = _check_paired(pred, gt)
    return float(np.linalg.norm(pred[-1] - gt[-1]))


def efe(pred, gt) -> float:
    """Full-horizon forecasting error; see module docstring for the reading."""
    return ade(pred, gt)


def rmse(pred, gt) -> float:
    """Root-mean-square displacement over aligned steps."""
    pred, gt = _check_paired(pred, gt)
    return float(np.sqrt(np.mean(np.sum((pred - gt) ** 2, axis=1))))


@dataclass(frozen=True)
class CdfSeries:
    """Fraction of trajectories at or below each ascending error threshold."""

    thresholds: np.ndarray
    fractions: np.ndarray

    def __post_init__(self):
        th = np.array(self.thresholds, dtype=float)
        fr = np.array(self.fractions, dtype=float)
        if th.shape != fr.shape or th.ndim != 1:
            raise ValidationError("thresholds and fractions must be equal 1-d arrays")
        if np.any(np.diff(th) < 0) or np.any(np.diff(fr) < -1e-12):
            raise ValidationError("thresholds and fractions must be nondecreasing")
        if np.any((fr < 0) | (fr > 1)):
            raise ValidationError("fractions must lie in [0, 1]")
        th.setflags(write=False)
        fr.setflags(write=False)
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "fractions", fr)


def rmse_cdf(errors: Sequence[float], thresholds: Sequence[float]) -> CdfSeries:
    """Counting CDF: fraction of errors <= each threshold."""
    errors = np.asarray(errors, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    if errors.size == 0:
        raise ValidationError("rmse_cdf needs at least one error value")
    fractions = np.array([np.mean(errors <= t) for t in thresholds])
    return CdfSeries(thresholds=thresholds, fractions=fractions)


@dataclass(frozen=True)
class EntropyReport:
    bits: float
    bins: int

    def __post_init__(self):
        if not 0.0 <= self.bits <= math.log2(self.bins) + 1e-12:
            raise ValidationError(
                f"entropy {self.bits} outside [0, log2({self.bins})]"
            )


def trajectory_entropy(dataset: Sequence[Trajectory], bins: int = 8) -> EntropyReport:
    """Shannon entropy (bits) of per-step headings pooled across the dataset.

    Headings fall into `bins` equal circular sectors of (-pi, pi]; the number
    is only comparable across datasets binned identically.
    """
    if not dataset:
        raise ValidationError("trajectory_entropy needs a nonempty dataset")
    if bins < 2:
        raise ValidationError("bins must be >= 2")
    headings = []
    for traj in dataset:
        for i in range(traj.k):
            v = traj.velocities(i)
            speed = np.linalg.norm(v, axis=1)
            h = np.where(speed > 0, np.arctan2(v[:, 1], v[:, 0]), 0.0)
            headings.append(h)
    pooled = np.concatenate(headings)
    width = 2.0 * np.pi / bins
    idx = np.floor((pooled + np.pi) / width).astype(int) % bins
    counts = np.bincount(idx, minlength=bins)
    p = counts / counts.sum()
    nz = p[p > 0]
    return EntropyReport(bits=float(-np.sum(nz * np.log2(nz))), bins=bins)


# --- reports ------------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    """Aggregated errors of one method on one scenario's demonstrations."""

    method: str
    scenario: str
    per_agent_ade: np.ndarray  # (k,)
    per_agent_fde: np.ndarray
    per_agent_efe: np.ndarray
    rmse_per_traj: np.ndarray  # (n_demos,)

    def __post_init__(self):
        for name in ("per_agent_ade", "per_agent_fde", "per_agent_efe", "rmse_per_traj"):
            arr = np.array(getattr(self, name), dtype=float)
            if np.any(arr < 0):
                raise ValidationError(f"{name} contains negative values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def ade(self) -> float:
        return float(np.mean(self.per_agent_ade))

    @property
    def fde(self) -> float:
        return float(np.mean(self.per_agent_fde))

    @property
    def efe(self) -> float:
        return float(np.mean(self.per_agent_efe))

    @property
    def k(self) -> int:
        return self.per_agent_ade.size


def score_predictions(
    method: str,
    scenario: str,
    demos: Sequence[Trajectory],
    predictions: Sequence[np.ndarray],
) -> MetricReport:
    """Aggregate displacement errors of per-demo position predictions.

    predictions[j] has shape (T+1, k, 2) and is compared stepwise against
    demonstration j; per-agent errors are averaged over demonstrations.
    """
    if not demos or len(predictions) != len(demos):
        raise ValidationError("need one prediction per demonstration")
    k = demos[0].k
    ades = np.zeros(k)
    fdes = np.zeros(k)
    rmses = []
    for demo, pred in zip(demos, predictions):
        pred = np.asarray(pred, dtype=float)
        if pred.shape != (demo.horizon + 1, k, 2):
            raise ValidationError(
                f"prediction shape {pred.shape} != ({demo.horizon + 1}, {k}, 2)"
            )
        sq = 0.0
        for i in range(k):
            gt = demo.positions(i)
            ades[i] += ade(pred[:, i], gt)
            fdes[i] += fde(pred[:, i], gt)
            sq += float(np.mean(np.sum((pred[:, i] - gt) ** 2, axis=1)))
        rmses.append(math.sqrt(sq / k))
    n = len(demos)
    return MetricReport(
        method=method,
        scenario=scenario,
        per_agent_ade=ades / n,
        per_agent_fde=fdes / n,
        per_agent_efe=ades / n,  # full-horizon reading; see module docstring
        rmse_per_traj=np.array(rmses),
    )


def rank_methods(reports: Sequence[MetricReport]) -> list[MetricReport]:
    """Sort by aggregate ADE, breaking ties by FDE, then by label."""
    return sorted(reports, key=lambda r: (r.ade, r.fde, r.method))


# --- scoring protocol ---------------------------------------------------------


@dataclass
class PredictorContext:
    """Everything a method needs to turn a demo's start state into positions."""

    spec: ScenarioSpec
    train_demos: Sequence[Trajectory]
    thetas: Sequence[CostParams] | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    proximity: ProximityConfig = field(default_factory=ProximityConfig)
    fd_step: float = DEFAULT_FD_STEP
    u_max: float = DEFAULT_U_MAX
    best_of: int = 1
    seed: int = 0
    gmm_components: int = 3
    _policy_cache: dict = field(default_factory=dict)
    _gmm: GmmModel | None = None
    _ebm: EnergyParams | None = None


def _demo_state_action_pairs(demos: Sequence[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    xs, us = [], []
    for demo in demos:
        for i in range(demo.k):
            states = np.concatenate([demo.positions(i), demo.velocities(i)], axis=1)
            xs.append(states[:-1])
            us.append(demo.agent_controls(i))
    return np.concatenate(xs), np.concatenate(us)


def _rollout_per_agent_policy(
    x0: np.ndarray, spec: ScenarioSpec, act: Callable[[np.ndarray], np.ndarray], u_max: float
) -> np.ndarray:
    """Roll a per-agent state->action map forward; returns (T+1, k, 2) positions."""
    k = spec.k
    states = np.empty((spec.horizon + 1, 4 * k))
    states[0] = x0
    for t in range(spec.horizon):
        per = states[t].reshape(k, 4)
        u = np.stack([clamp_control(act(per[i]), u_max) for i in range(k)])
        states[t + 1] = propagate_joint(states[t], u, spec.dt)
    return states.reshape(spec.horizon + 1, k, 4)[:, :, :2]


def make_predictor(method: str, ctx: PredictorContext) -> Callable[[Trajectory], np.ndarray]:
    """Per-demo position predictor for one of the named methods.

    cv extrapolates each agent's initial velocity; gmm and ebm are fitted on
    the training demonstrations and rolled out agent-by-agent; mairl/sairl
    solve the game at the supplied weights and follow the feedback mean (or
    the best of ctx.best_of sampled rollouts when best_of > 1).
    """
    spec = ctx.spec
    if method == "cv":

        def predict_cv(demo: Trajectory) -> np.ndarray:
            return _rollout_per_agent_policy(
                demo.states[0], spec, lambda s: np.zeros(2), ctx.u_max
            )

        return predict_cv

    if method == "gmm":
        if ctx._gmm is None:
            X, U = _demo_state_action_pairs(ctx.train_demos)
            ctx._gmm = gmm_fit(
                np.concatenate([X, U], axis=1), K=ctx.gmm_components, seed=ctx.seed
            )
        model = ctx._gmm

        def predict_gmm(demo: Trajectory) -> np.ndarray:
            return _rollout_per_agent_policy(
                demo.states[0], spec, lambda s: gmm_conditional_mean(model, s, 4), ctx.u_max
            )

        return predict_gmm

    if method == "ebm":
        if ctx._ebm is None:
            X, U = _demo_state_action_pairs(ctx.train_demos)
            ctx._ebm = ebm_train(X, U)
        params = ctx._ebm

        def predict_ebm(demo: Trajectory) -> np.ndarray:
            return _rollout_per_agent_policy(
                demo.states[0], spec, lambda s: ebm_minimizer(params, s), ctx.u_max
            )

        return predict_ebm

    if method in ("mairl", "sairl"):
        if ctx.thetas is None or len(ctx.thetas) != spec.k:
            raise ValidationError(f"method {method!r} needs {spec.k} weight vectors")

        def predict_irl(demo: Trajectory) -> np.ndarray:
            x0 = demo.states[0]
            key = x0.tobytes()
            if key not in ctx._policy_cache:
                demo_spec = spec.with_x0(demo.joint_state(0))
                ctx._policy_cache[key] = (
                    build_policies(ctx.thetas, demo_spec, ctx.solver, ctx.proximity, ctx.fd_step),
                    demo_spec,
                )
            policies, demo_spec = ctx._policy_cache[key]
            candidates = (
                [mean_rollout(policies, demo_spec, ctx.u_max)]
                if ctx.best_of <= 1
                else sample_rollouts(policies, demo_spec, ctx.best_of, ctx.seed, ctx.u_max)
            )
            best, best_err = None, np.inf
            for cand in candidates:
                err = np.mean(
                    [ade(cand.positions(i), demo.positions(i)) for i in range(spec.k)]
                )
                if err < best_err:
                    best, best_err = cand, err
            return np.stack([best.positions(i) for i in range(spec.k)], axis=1)

        return predict_irl

    raise ValidationError(f"unknown method {method!r}; choose from {BASELINE_NAMES}")


def evaluate_method(
    method: str,
    scenario: str,
    eval_demos: Sequence[Trajectory],
    ctx: PredictorContext,
) -> MetricReport:
    predictor = make_predictor(method, ctx)
    predictions = [predictor(demo) for demo in eval_demos]
    return score_predictions(method, scenario, eval_demos, predictions)


def split_dataset(
    demos: Sequence[Trajectory], train_frac: float = 0.6, seed: int = 0
) -> tuple[list[Trajectory], list[Trajectory]]:
    """Seed-shuffled train/validation split (default 60-40)."""
    if not 0 < train_frac < 1:
        raise ValidationError("train_frac must be in (0, 1)")
    order = substream(seed, 0x5317).permutation(len(demos))
    cut = int(round(train_frac * len(demos)))
    return [demos[j] for j in order[:cut]], [demos[j] for j in order[cut:]]


# --- emission -----------------------------------------------------------------


def report_rows(reports: Sequence[MetricReport]) -> list[dict]:
    """Flatten reports into per-agent rows plus an 'all' aggregate row each."""
    rows = []
    for rep in reports:
        for i in range(rep.k):
            rows.append(
                {
                    "method": rep.method,
                    "scenario": rep.scenario,
                    "agent": str(i),
                    "ade_m": float(rep.per_agent_ade[i]),
                    "fde_m": float(rep.per_agent_fde[i]),
                    "efe_m": float(rep.per_agent_efe[i]),
                }
            )
        rows.append(
            {
                "method": rep.method,
                "scenario": rep.scenario,
                "agent": "all",
                "ade_m": rep.ade,
                "fde_m": rep.fde,
                "efe_m": rep.efe,
            }
        )
    return rows


CSV_COLUMNS = ("method", "scenario", "agent", "ade_m", "fde_m", "efe_m")


def emit_report(reports: Sequence[MetricReport], fmt: str, path) -> None:
    """Serialize reports; byte-deterministic for identical inputs."""
    if fmt == "csv":
        lines = [f"# {EFE_NOTE}", ",".join(CSV_COLUMNS)]
        for row in report_rows(reports):
            lines.append(
                ",".join(
                    row[c] if isinstance(row[c], str) else repr(float(row[c]))
                    for c in CSV_COLUMNS
                )
            )
        text = "\n".join(lines) + "\n"
    elif fmt == "jsonl":
        recs = [{"note": EFE_NOTE}] + report_rows(reports)
        for rep in reports:
            recs.append(
                {
                    "method": rep.method,
                    "scenario": rep.scenario,
                    "rmse_per_traj": [float(v) for v in rep.rmse_per_traj],
                }
            )
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in recs)
    elif fmt == "svg":
        by_method = {
            rep.method: _auto_cdf(rep.rmse_per_traj, reports) for rep in reports
        }
        text = render_cdf_svg(by_method)
    else:
        raise ValidationError(f"unknown report format {fmt!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def parse_report_csv(path) -> list[dict]:
    """Read back a CSV report; inverse of emit_report(..., 'csv', ...)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    lines = [ln for ln in lines if not ln.startswith("#")]
    if not lines or tuple(lines[0].split(",")) != CSV_COLUMNS:
        raise FormatError("missing or malformed CSV header")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise FormatError(f"row has {len(parts)} fields, expected {len(CSV_COLUMNS)}")
        rows.append(
            {
                "method": parts[0],
                "scenario": parts[1],
                "agent": parts[2],
                "ade_m": float(parts[3]),
                "fde_m": float(parts[4]),
                "efe_m": float(parts[5]),
            }
        )
    return rows


def _auto_cdf(errors: np.ndarray, reports: Sequence[MetricReport]) -> CdfSeries:
    top = max(float(np.max(r.rmse_per_traj, initial=0.0)) for r in reports)
    thresholds = np.linspace(0.0, max(top, 1e-9) * 1.05, 25)
    return rmse_cdf(errors, thresholds)


# --- deterministic SVG ----------------------------------------------------------

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
SVG_W, SVG_H, SVG_MARGIN = 640, 440, 56


def _svg_head(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" '
        f'viewBox="0 0 {SVG_W} {SVG_H}">',
        f'<title>{title}</title>',
        f'<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>',
    ]


def _polyline(points: np.ndarray, color: str, dashed: bool, opacity: float = 1.0) -> str:
    pts = " ".join(f"{p[0]:.2f},{p[1]:.2f}" for p in points)
    dash = ' stroke-dasharray="6,4"' if dashed else ""
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
        f'stroke-opacity="{opacity:.2f}"{dash} points="{pts}"/>'
    )


def render_cdf_svg(series_by_method: dict[str, CdfSeries]) -> str:
    """Cumulative error curves, one per method, on a fixed canvas."""
    if not series_by_method:
        raise ValidationError("nothing to plot")
    xmax = max(float(s.thresholds[-1]) for s in series_by_method.values())
    xmax = max(xmax, 1e-9)
    inner_w = SVG_W - 2 * SVG_MARGIN
    inner_h = SVG_H - 2 * SVG_MARGIN

    def to_px(x, y):
        return (
            SVG_MARGIN + inner_w * (x / xmax),
            SVG_H - SVG_MARGIN - inner_h * y,
        )

    parts = _svg_head("trajectory error CDF")
    parts.append(
        f'<rect x="{SVG_MARGIN}" y="{SVG_MARGIN}" width="{inner_w}" height="{inner_h}" '
        'fill="none" stroke="#333333" stroke-width="1"/>'
    )
    for idx, (label, series) in enumerate(sorted(series_by_method.items())):
        color = PALETTE[idx % len(PALETTE)]
        pts = np.array([to_px(t, f) for t, f in zip(series.thresholds, series.fractions)])
        parts.append(_polyline(pts, color, dashed=False))
        parts.append(
            f'<text x="{SVG_W - SVG_MARGIN - 120}" y="{SVG_MARGIN + 16 + 14 * idx}" '
            f'font-family="monospace" font-size="12" fill="{color}">{label}</text>'
        )
    parts.append(
        f'<text x="{SVG_W // 2}" y="{SVG_H - 14}" font-family="monospace" font-size="12" '
        f'text-anchor="middle" fill="#333333">RMSE threshold (m)</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_overlay_svg(
    demos: Sequence[Trajectory], predictions: Sequence[np.ndarray]
) -> str:
    """Demonstrations as solid faded lines, predictions dashed, color per agent."""
    if not demos:
        raise ValidationError("nothing to plot")
    k = demos[0].k
    all_pts = np.concatenate(
        [np.asarray(d.states)[:, [4 * i, 4 * i + 1]] for d in demos for i in range(k)]
    )
    lo = all_pts.min(axis=0) - 0.5
    hi = all_pts.max(axis=0) + 0.5
    span = np.maximum(hi - lo, 1e-9)
    inner_w = SVG_W - 2 * SVG_MARGIN
    inner_h = SVG_H - 2 * SVG_MARGIN

    def to_px(p):
        return (
            SVG_MARGIN + inner_w * (p[0] - lo[0]) / span[0],
            SVG_H - SVG_MARGIN - inner_h * (p[1] - lo[1]) / span[1],
        )

    parts = _svg_head("demonstrations vs predictions")
    for demo in demos:
        for i in range(k):
            pts = np.array([to_px(p) for p in demo.positions(i)])
            parts.append(_polyline(pts, PALETTE[i % len(PALETTE)], dashed=False, opacity=0.35))
    for pred in predictions:
        pred = np.asarray(pred)
        for i in range(k):
            pts = np.array([to_px(p) for p in pred[:, i]])
            parts.append(_polyline(pts, PALETTE[i % len(PALETTE)], dashed=True))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
