"""Batch command-line front end.

Subcommands cover the full pipeline: `preprocess` raw tracker frames into a
scenario catalog, `synth` ground-truth demonstrations from known weights,
`train` weight vectors from demonstrations, `eval` methods against held-out
demonstrations, `plot` report curves and `compare` methods across reports.

Every run is driven by one nested config (JSON file via --config, overridden
by flags; flags win) and a single seed; outputs are byte-deterministic given
(config, seed). Exit codes: 0 success, 2 input/usage error, 3 training ended
without convergence, 4 internal invariant violation.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from .errors import CrowdIrlError, FormatError, InternalError, SolverError, ValidationError
from .features import CostParams, ProximityConfig
from .game import SolverConfig
from .irl import TrainingConfig, infer_goals, multi_agent_irl, single_agent_maxent_irl
from .metrics import (
    BASELINE_NAMES,
    PredictorContext,
    emit_report,
    evaluate_method,
    make_predictor,
    parse_report_csv,
    render_overlay_svg,
    rmse_cdf,
    render_cdf_svg,
)
from .pipeline import (
    PreprocessConfig,
    combinatorial_scenarios,
    filter_tracks,
    header_goals,
    parse_frames,
    read_demonstrations,
    synth_generate,
    synth_provenance,
    tracks_from_frames,
    travel_direction,
    write_demonstrations,
)
from .trajectory import (
    AgentState,
    JointState,
    ScenarioSpec,
    Trajectory,
    from_dataset_array,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3
EXIT_INTERNAL = 4

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "threads": 1,
    "fd_step": 1e-3,
    "u_max": 3.0,
    "solver": {
        "eps_psd": 1e-6,
        "entropy_temp": 1.0,
        "max_outer_iters": 1,
        "outer_tol": 1e-6,
    },
    "training": {"beta": 3e-4, "max_iters": 500, "tol": 1e-3, "M": 32},
    "proximity": {"sigma": 1.5},
    "preprocess": {
        "x_range": [-20.0, 20.0],
        "y_range": [-10.0, 15.0],
        "standstill_speed": 0.2,
        "min_track_len": 10,
        "resample_dt": 0.1,
        "scheme": ["W-E-S", "W-E-N", "S-N-W", "S-N-E"],
        "group_size": 5,
        "scenario_len": 30,
    },
    "eval": {"best_of": 1, "gmm_components": 3},
}

# flag destination -> config path
_FLAG_PATHS = {
    "seed": ("seed",),
    "threads": ("threads",),
    "fd_step": ("fd_step",),
    "u_max": ("u_max",),
    "eps_psd": ("solver", "eps_psd"),
    "entropy_temp": ("solver", "entropy_temp"),
    "beta": ("training", "beta"),
    "iters": ("training", "max_iters"),
    "tol": ("training", "tol"),
    "rollouts": ("training", "M"),
    "sigma": ("proximity", "sigma"),
    "best_of": ("eval", "best_of"),
}


def _config_keys(tree: dict, prefix: str = "") -> list[str]:
    out = []
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            out.extend(_config_keys(value, dotted + "."))
        else:
            out.append(f"{dotted} = {json.dumps(value)}")
    return out


def _merge_config(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        dotted = f"{path}{key}"
        if key not in base:
            raise FormatError(f"unknown config key {dotted!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise FormatError(f"config key {dotted!r} must be a section")
            out[key] = _merge_config(base[key], value, dotted + ".")
        else:
            out[key] = value
    return out


def load_config(path: str | None, flag_values: dict) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"config {path} is not valid JSON: {exc.msg}") from exc
        if not isinstance(file_cfg, dict):
            raise FormatError("config file must hold a JSON object")
        cfg = _merge_config(cfg, file_cfg)
    for dest, value in flag_values.items():
        if value is None or dest not in _FLAG_PATHS:
            continue
        node = cfg
        *parents, leaf = _FLAG_PATHS[dest]
        for p in parents:
            node = node[p]
        node[leaf] = value
    return cfg


def _solver_config(cfg: dict) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(
        eps_psd=float(s["eps_psd"]),
        entropy_temp=float(s["entropy_temp"]),
        max_outer_iters=int(s["max_outer_iters"]),
        outer_tol=float(s["outer_tol"]),
    )


def _training_config(cfg: dict) -> TrainingConfig:
    t = cfg["training"]
    return TrainingConfig(
        beta=float(t["beta"]),
        max_iters=int(t["max_iters"]),
        tol=float(t["tol"]),
        M=int(t["M"]),
        seed=int(cfg["seed"]),
        fd_step=float(cfg["fd_step"]),
        u_max=float(cfg["u_max"]),
        solver=_solver_config(cfg),
        proximity=ProximityConfig(sigma=float(cfg["proximity"]["sigma"])),
    )


def _preprocess_config(cfg: dict) -> PreprocessConfig:
    p = cfg["preprocess"]
    return PreprocessConfig(
        x_range=tuple(p["x_range"]),
        y_range=tuple(p["y_range"]),
        standstill_speed=float(p["standstill_speed"]),
        min_track_len=int(p["min_track_len"]),
        resample_dt=float(p["resample_dt"]),
    )


def _reproducible_echo(cfg: dict) -> dict:
    """Config subset recorded in outputs; excludes execution-only knobs."""
    echo = copy.deepcopy(cfg)
    echo.pop("threads", None)
    return echo


# --- scenario presets ---------------------------------------------------------


def scenario_preset(name: str) -> ScenarioSpec:
    """Built-in interaction scenes used by synth and the demos."""
    if name == "head_on_k2":
        x0 = JointState(
            (
                AgentState(-3.0, 0.0, 1.2, 0.0),
                AgentState(3.0, 0.15, -1.2, 0.0),
            )
        )
        goals = np.array([[3.0, 0.0], [-3.0, 0.15]])
        return ScenarioSpec(k=2, x0=x0, goals=goals, horizon=50, dt=0.1)
    if name == "intersection_k3":
        x0 = JointState(
            (
                AgentState(0.0, 2.2, 0.0, -1.2),  # heading south
                AgentState(1.8, 0.3, -1.2, 0.0),  # heading west
                AgentState(-1.8, -0.3, 1.2, 0.0),  # heading east
            )
        )
        goals = np.array([[0.0, -1.4], [-1.8, 0.3], [1.8, -0.3]])
        return ScenarioSpec(k=3, x0=x0, goals=goals, horizon=30, dt=0.1)
    raise ValidationError(f"unknown scenario preset {name!r}")


def parse_thetas(text: str, k: int) -> list[CostParams]:
    """Parse 'a,b,c;d,e,f;...' into k weight vectors (one repeated if single)."""
    groups = [g for g in text.split(";") if g.strip()]
    if len(groups) == 1:
        groups = groups * k
    if len(groups) != k:
        raise ValidationError(f"need 1 or {k} weight groups, got {len(groups)}")
    out = []
    for g in groups:
        vals = [float(v) for v in g.split(",")]
        out.append(CostParams(np.array(vals)))
    return out


def _spec_from_demos(demos: list[Trajectory], header: dict) -> ScenarioSpec:
    """Scenario implied by a demonstration file: mean x0, header or inferred goals."""
    k, dt = demos[0].k, demos[0].dt
    x0_mean = np.mean([d.states[0] for d in demos], axis=0)
    goals = header_goals(header)
    if goals is None:
        goals = infer_goals(demos)
    return ScenarioSpec(
        k=k,
        x0=JointState.from_array(x0_mean),
        goals=goals,
        horizon=demos[0].horizon,
        dt=dt,
    )


# --- subcommands ----------------------------------------------------------------


def cmd_preprocess(args, cfg: dict) -> int:
    pre = _preprocess_config(cfg)
    scheme = list(cfg["preprocess"]["scheme"])
    group_size = int(cfg["preprocess"]["group_size"])
    scenario_len = int(cfg["preprocess"]["scenario_len"])

    with open(args.raw, "r", encoding="utf-8") as fh:
        frames = parse_frames(fh)
    tracks = filter_tracks(tracks_from_frames(frames, pre), pre)

    groups: dict[str, list] = {}
    for name in sorted(tracks):
        groups.setdefault(travel_direction(tracks[name]), []).append(tracks[name])

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    usable = {
        d: trks[:group_size]
        for d, trks in groups.items()
        if len(trks) >= group_size
    }
    feasible = [
        cat for cat in scheme if all(d in usable for d in cat.split("-"))
    ]
    if feasible:
        catalog = combinatorial_scenarios(usable, feasible, scenario_len)
    else:
        catalog = None

    entries_meta = []
    if catalog is not None:
        for idx, entry in enumerate(catalog.entries):
            fname = f"{entry.category}_{idx:04d}.traj"
            _write_entry(out_dir / fname, entry, pre.resample_dt)
            entries_meta.append(
                {"category": entry.category, "tracks": list(entry.track_ids), "file": fname}
            )
    summary = {
        "tracks_kept": len(tracks),
        "direction_counts": {d: len(t) for d, t in sorted(groups.items())},
        "categories": catalog.count_by_category() if catalog else {},
        "total_entries": catalog.size if catalog else 0,
        "entries": entries_meta,
    }
    with open(out_dir / "catalog.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(
        f"kept {len(tracks)} tracks; catalog entries: {summary['total_entries']} "
        f"({', '.join(f'{k}={v}' for k, v in summary['categories'].items()) or 'none'})"
    )
    return EXIT_OK


def _write_entry(path: Path, entry, dt: float) -> None:
    states = from_dataset_array(entry.array)
    k = states.shape[1] // 4
    vel = states.reshape(states.shape[0], k, 4)[:, :, 2:]
    controls = (vel[1:] - vel[:-1]) / dt
    traj = Trajectory(states=states, controls=controls, dt=dt)
    write_demonstrations(path, [traj], goals=None, provenance={"category": entry.category})


def cmd_synth(args, cfg: dict) -> int:
    spec = scenario_preset(args.preset)
    if args.horizon is not None:
        spec = ScenarioSpec(spec.k, spec.x0, spec.goals, int(args.horizon), spec.dt)
    thetas = parse_thetas(args.theta, spec.k)
    seed = int(cfg["seed"])
    provenance = synth_provenance(thetas, seed)
    if args.n == 0:
        write_demonstrations(args.out, [], goals=spec.goals, provenance=provenance, spec=spec)
        print(f"wrote header-only demonstration file to {args.out}")
        return EXIT_OK
    demos = synth_generate(
        thetas,
        spec,
        args.n,
        seed,
        solver_cfg=_solver_config(cfg),
        proximity=ProximityConfig(sigma=float(cfg["proximity"]["sigma"])),
        fd_step=float(cfg["fd_step"]),
        u_max=float(cfg["u_max"]),
    )
    write_demonstrations(args.out, demos, goals=spec.goals, provenance=provenance)
    print(f"wrote {len(demos)} demonstrations ({spec.k} agents, T={spec.horizon}) to {args.out}")
    return EXIT_OK


def cmd_train(args, cfg: dict) -> int:
    demos, header = read_demonstrations(args.demos)
    if not demos:
        raise FormatError(f"{args.demos} holds no demonstrations")
    spec = _spec_from_demos(demos, header)
    tcfg = _training_config(cfg)

    if args.method == "mairl":
        thetas, trace = multi_agent_irl(demos, spec, tcfg)
        theta_lists = [[float(v) for v in th.weights] for th in thetas]
    else:
        theta, trace = single_agent_maxent_irl(demos, spec, tcfg)
        theta_lists = [[float(v) for v in theta.weights] for _ in range(spec.k)]

    payload = {
        "method": args.method,
        "k": spec.k,
        "thetas": theta_lists,
        "converged": trace.converged,
        "sweeps": trace.sweeps,
        "final_max_gap": trace.sweep_max_gap(trace.sweeps - 1),
        "config": _reproducible_echo(cfg),
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if args.trace_out:
        trace.to_jsonl(args.trace_out)
    if args.diagnostics:
        conditioned = int(sum(r.conditioned_stages for r in trace.records))
        print(
            json.dumps(
                {"conditioned_stage_visits": conditioned, "updates": len(trace.records)},
                sort_keys=True,
            )
        )
    status = "converged" if trace.converged else "did not converge"
    print(
        f"{args.method}: {status} after {trace.sweeps} sweeps "
        f"(final max gap {payload['final_max_gap']:.3e}); weights -> {args.out}"
    )
    return EXIT_OK if trace.converged else EXIT_NO_CONVERGENCE


def _load_thetas(path: str, k: int) -> list[CostParams]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    thetas = [CostParams(np.array(t, dtype=float)) for t in payload["thetas"]]
    if len(thetas) != k:
        raise FormatError(f"weight file holds {len(thetas)} agents, demos have {k}")
    return thetas


def cmd_eval(args, cfg: dict) -> int:
    demos, header = read_demonstrations(args.demos)
    if not demos:
        raise FormatError(f"{args.demos} holds no demonstrations")
    spec = _spec_from_demos(demos, header)
    if args.train_demos:
        train_demos, _ = read_demonstrations(args.train_demos)
    else:
        train_demos = demos

    method = args.baseline
    if method not in BASELINE_NAMES:
        raise ValidationError(f"unknown baseline {method!r}; choose from {BASELINE_NAMES}")
    thetas = None
    if method in ("mairl", "sairl"):
        if not args.theta:
            raise ValidationError(f"--theta FILE is required for baseline {method!r}")
        thetas = _load_thetas(args.theta, spec.k)

    ctx = PredictorContext(
        spec=spec,
        train_demos=train_demos,
        thetas=thetas,
        solver=_solver_config(cfg),
        proximity=ProximityConfig(sigma=float(cfg["proximity"]["sigma"])),
        fd_step=float(cfg["fd_step"]),
        u_max=float(cfg["u_max"]),
        best_of=int(cfg["eval"]["best_of"]),
        seed=int(cfg["seed"]),
        gmm_components=int(cfg["eval"]["gmm_components"]),
    )
    report = evaluate_method(method, args.scenario, demos, ctx)
    emit_report([report], args.format, args.out)
    print(
        f"{method} on {args.scenario}: ADE {report.ade:.4f} m, FDE {report.fde:.4f} m "
        f"-> {args.out}"
    )
    if args.overlay:
        predictor = make_predictor(method, ctx)
        svg = render_overlay_svg(demos, [predictor(d) for d in demos])
        with open(args.overlay, "w", encoding="utf-8") as fh:
            fh.write(svg)
    return EXIT_OK


def _read_report_any(path: str) -> tuple[list[dict], dict[str, list[float]]]:
    """Rows plus per-method rmse lists from a csv or jsonl report."""
    rows, rmse_lists = [], {}
    if path.endswith(".jsonl"):
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if "rmse_per_traj" in rec:
                    rmse_lists[rec["method"]] = [float(v) for v in rec["rmse_per_traj"]]
                elif "method" in rec:
                    rows.append(rec)
    else:
        rows = parse_report_csv(path)
    return rows, rmse_lists


def cmd_plot(args, cfg: dict) -> int:
    all_rmse: dict[str, list[float]] = {}
    for path in args.reports:
        _, rmse_lists = _read_report_any(path)
        all_rmse.update(rmse_lists)
    if not all_rmse:
        raise FormatError("no per-trajectory RMSE data found; plot needs jsonl reports")
    top = max(max(v) for v in all_rmse.values() if v)
    thresholds = np.linspace(0.0, max(top, 1e-9) * 1.05, 25)
    series = {m: rmse_cdf(np.array(v), thresholds) for m, v in sorted(all_rmse.items())}
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(render_cdf_svg(series))
    print(f"wrote CDF plot for {len(series)} method(s) to {args.out}")
    return EXIT_OK


def cmd_compare(args, cfg: dict) -> int:
    aggregates = []
    for path in args.reports:
        rows, _ = _read_report_any(path)
        for row in rows:
            if row.get("agent") == "all":
                aggregates.append(row)
    if not aggregates:
        raise FormatError("no aggregate rows found in the given reports")
    aggregates.sort(key=lambda r: (r["ade_m"], r["fde_m"], r["method"]))
    print(f"{'rank':<5} {'method':<10} {'scenario':<16} {'ade_m':>10} {'fde_m':>10}")
    for rank, row in enumerate(aggregates, start=1):
        print(
            f"{rank:<5} {row['method']:<10} {row['scenario']:<16} "
            f"{row['ade_m']:>10.4f} {row['fde_m']:>10.4f}"
        )
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for row in aggregates:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys and defaults:\n  " + "\n  ".join(_config_keys(DEFAULT_CONFIG))
    parser = argparse.ArgumentParser(
        prog="crowdirl",
        description=__doc__,
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--seed", type=int, help="global seed (uint64)")
    parser.add_argument("--threads", type=int, help="worker cap; outputs are identical for any value")
    parser.add_argument("--fd-step", dest="fd_step", type=float, help="finite-difference step")
    parser.add_argument("--eps-psd", dest="eps_psd", type=float, help="covariance eigenvalue floor")
    parser.add_argument("--entropy-temp", dest="entropy_temp", type=float, help="policy covariance scale")
    parser.add_argument("--beta", type=float, help="weight-update learning rate")
    parser.add_argument("--iters", type=int, help="max training sweeps")
    parser.add_argument("--tol", type=float, help="feature-gap convergence threshold")
    parser.add_argument("--rollouts", type=int, help="rollouts per feature expectation")
    parser.add_argument("--best-of", dest="best_of", type=int, help="evaluate best of N sampled rollouts")
    parser.add_argument("--u-max", dest="u_max", type=float, help="control magnitude clamp")
    parser.add_argument("--sigma", type=float, help="proximity kernel width")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="raw frame stream -> scenario catalog")
    p.add_argument("raw", help="line-delimited frame stream")
    p.add_argument("out", help="output directory")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="generate ground-truth demonstrations")
    p.add_argument("out", help="output demonstration file")
    p.add_argument("--preset", default="intersection_k3", help="scenario preset name")
    p.add_argument("--theta", default="1.0,0.5,0.2", help="weights 'a,b,c' or per-agent 'a,b,c;...'")
    p.add_argument("--n", type=int, default=20, help="number of demonstrations")
    p.add_argument("--horizon", type=int, default=None, help="override preset horizon")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="learn cost weights from demonstrations")
    p.add_argument("demos", help="demonstration file")
    p.add_argument("--method", choices=("mairl", "sairl"), default="mairl")
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--trace-out", dest="trace_out", help="write per-update trace JSONL")
    p.add_argument("--diagnostics", action="store_true", help="print solver conditioning stats")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a method against demonstrations")
    p.add_argument("demos", help="evaluation demonstration file")
    p.add_argument("--baseline", required=True, help=f"one of {', '.join(BASELINE_NAMES)}")
    p.add_argument("--theta", help="weight file (required for mairl/sairl)")
    p.add_argument("--train", dest="train_demos", help="separate training demonstrations")
    p.add_argument("--scenario", default="default", help="scenario label for reports")
    p.add_argument("--out", required=True, help="report file to write")
    p.add_argument("--format", choices=("csv", "jsonl", "svg"), default="csv")
    p.add_argument("--overlay", help="also write a trajectory overlay SVG here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render CDF curves from jsonl reports")
    p.add_argument("reports", nargs="+", help="report files")
    p.add_argument("--out", required=True, help="SVG file to write")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("compare", help="rank methods across reports")
    p.add_argument("reports", nargs="+", help="report files")
    p.add_argument("--out", help="optional JSONL ranking output")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, vars(args))
        return args.func(args, cfg)
    except (FormatError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolverError, InternalError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CrowdIrlError as exc:  # pragma: no cover - catch-all for subclasses
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
