"""Command-line pipeline: plan coverage circuits over a tunnel map, replay
the selected ones through the measurement simulator, and report combined
statistics.

Artifact layout (all inside --out):
  plan      graph.json, circuits.json, path_scores.csv, ranking.json,
            pec_series_<sel>.csv, candidates.svg, route_<sel>.svg,
            pec_series.svg
  simulate  run_<sel>_<mode>_<i>.csv, summary_<sel>_<mode>.csv,
            aggregate_<mode>.csv, truths_<sel>_<mode>.svg,
            estimate_<sel>_<mode>.svg
  report    report.json, report.txt

Every artifact is byte-deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import circuits, config, mapenv, montecarlo, planner, roadmap, svgplot
from .errors import (
    ConfigError,
    DisconnectedGraphError,
    InvalidCircuitError,
    MapFormatError,
    MissingArtifactError,
    NotEulerianError,
    SamplingExhaustedError,
    TunnelPlanError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MAP = 3
EXIT_PLANNER = 4
EXIT_SIMULATION = 5
EXIT_ARTIFACT = 6

SELECTION_COLORS = {
    "best": svgplot.BEST_COLOR,
    "worst": svgplot.WORST_COLOR,
    "second_best": svgplot.SECOND_BEST_COLOR,
    "second_worst": svgplot.SECOND_WORST_COLOR,
}

# RunStats fields that identify a run rather than measure it
_ID_FIELDS = {"circuit_index", "run_index", "mode"}


def _f(v) -> str:
    """Stable CSV number format: nine significant digits."""
    return f"{float(v):.9g}"


def _b(v) -> str:
    return "true" if v else "false"


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_json_artifact(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise MissingArtifactError(
            f"missing artifact {path.name}: run the plan stage first"
        ) from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise MissingArtifactError(f"corrupt artifact {path.name}: {exc}") from exc


def _load_artifact(loader, path: Path):
    if not path.exists():
        raise MissingArtifactError(
            f"missing artifact {path.name}: run the plan stage first"
        )
    try:
        return loader(path)
    except (TunnelPlanError, OSError, ValueError, KeyError, TypeError) as exc:
        raise MissingArtifactError(f"corrupt artifact {path.name}: {exc}") from exc


def _resolve_selection(ranking: dict, sel) -> int:
    """Map a selection name or candidate index onto a circuit index."""
    n = len(ranking["totals"])
    if isinstance(sel, bool):
        raise ConfigError(f"bad selection {sel!r}")
    if isinstance(sel, int) or (isinstance(sel, str) and sel.isdigit()):
        idx = int(sel)
        if not 0 <= idx < n:
            raise ConfigError(
                f"selection index {idx} out of range (have {n} candidates)"
            )
        return idx
    if sel in config.SELECTION_NAMES:
        idx = ranking.get(sel)
        if idx is None:
            raise ConfigError(f"selection {sel!r} undefined for {n} candidate(s)")
        return int(idx)
    raise ConfigError(f"unknown selection {sel!r}")


# ---------------------------------------------------------------------------
# plan stage


def _ranking_dict(report: planner.RankingReport, cfg, g, base_edge_count) -> dict:
    return {
        "seed": cfg.seed,
        "best": report.best,
        "worst": report.worst,
        "second_best": report.second_best,
        "second_worst": report.second_worst,
        "order": list(report.order),
        "totals": [float(t) for t in report.totals],
        "degenerate": report.degenerate,
        "graph": {
            "nodes": len(g.nodes),
            "distinct_edges": base_edge_count,
            "edge_instances": g.edge_instance_count(),
            "total_length_m": float(g.total_length()),
        },
        "config": config.config_to_dict(cfg),
    }


def _bar_highlights(report: planner.RankingReport) -> dict:
    marks = [
        (report.second_best, svgplot.SECOND_BEST_COLOR, "2nd best"),
        (report.second_worst, svgplot.SECOND_WORST_COLOR, "2nd worst"),
        (report.best, svgplot.BEST_COLOR, "best (min)"),
        (report.worst, svgplot.WORST_COLOR, "worst (max)"),
    ]
    return {idx: (color, label) for idx, color, label in marks if idx is not None}


def _selection_color(label: str, i: int) -> str:
    return SELECTION_COLORS.get(
        label, svgplot.SERIES_COLORS[i % len(svgplot.SERIES_COLORS)]
    )


def _route_svg(env, g, cand, label: str) -> str:
    edges = [
        ("", np.stack([g.nodes[e.i], g.nodes[e.j]]), "#d0d4da", 1.0, None)
        for e in g.edges
    ]
    route = g.nodes[np.asarray(cand.nodes, dtype=int)]
    paths = edges + [(f"route ({label})", route, "#4878a8", 1.8, None)]
    markers = [
        (env.rig.position, "#111111", "ugv"),
        (roadmap.deployment_point(env), svgplot.BEST_COLOR, "start"),
    ]
    return svgplot.scene_plot(
        env.bounds_min,
        env.bounds_max,
        [(b.lo, b.hi) for b in env.obstacles],
        paths,
        markers,
        title=f"coverage route: {label}",
    )


def cmd_plan(cfg: config.RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    env = mapenv.load_map(cfg.resolve_map_path())
    pts = roadmap.sample_nodes(
        env, cfg.plan.nodes, cfg.rng(config.STREAM_SAMPLING), cfg.plan.forward_bias
    )
    base = roadmap.connect_knn(pts, cfg.plan.knn, env)
    base_edges = len(base.edges)
    g = roadmap.eulerize(base, env)
    cands = circuits.generate_candidates(
        g, cfg.plan.candidates, cfg.rng(config.STREAM_CANDIDATES),
        cfg.kinematics.cruise_mps,
    )
    scores = planner.propagate_paths(
        cands, g, env, cfg.kinematic_profile(), cfg.rate_schedule(),
        cfg.noise_config(), cfg.plan.pec_norm,
    )
    for s in scores:
        planner.check_uncertainty_threshold(s, cfg.plan.pec_threshold_m2)
    report = planner.score_and_select(scores)

    roadmap.save_graph(g, out / "graph.json")
    circuits.save_circuits(cands, out / "circuits.json")

    header = [
        "circuit", "length_m", "flight_time_s", "pec_total_m2", "pec_max_m2",
        "pec_mean_m2", "pec_median_m2", "pec_sigma_m2", "pec_rms_m2",
        "cam_updates", "lidar_updates", "skipped_updates", "duplicate",
        "threshold_ok", "within_flight_limit",
    ]
    rows = [
        [
            s.circuit_index, _f(s.length), _f(s.flight_time), _f(s.total),
            _f(s.max_pec), _f(s.mean), _f(s.median), _f(s.sigma), _f(s.rms),
            s.cam_updates, s.lidar_updates, len(s.skipped), _b(s.duplicate),
            _b(s.threshold_ok),
            _b(s.flight_time < cfg.plan.max_flight_time_s),
        ]
        for s in scores
    ]
    _write_csv(out / "path_scores.csv", header, rows)

    ranking = _ranking_dict(report, cfg, g, base_edges)
    _write_json(out / "ranking.json", ranking)

    (out / "candidates.svg").write_text(
        svgplot.bar_chart(
            report.totals,
            title=f"accumulated position-error covariance per candidate "
                  f"(seed {cfg.seed})",
            ylabel="pec total [m^2]",
            highlights=_bar_highlights(report),
        )
    )

    series = []
    for i, sel in enumerate(cfg.simulate.selections):
        idx = _resolve_selection(ranking, sel)
        label = str(sel)
        s = scores[idx]
        arr = np.column_stack(
            [
                np.arange(1, len(s.t) + 1), s.t, s.pec,
                s.cam_fired.astype(int), s.lidar_fired.astype(int),
            ]
        )
        np.savetxt(
            out / f"pec_series_{label}.csv", arr,
            fmt=["%d", "%.3f", "%.9g", "%d", "%d"], delimiter=",",
            header="step,t_s,pec_m2,cam_fired,lidar_fired", comments="",
        )
        (out / f"route_{label}.svg").write_text(
            _route_svg(env, g, cands[idx], label)
        )
        series.append(
            (f"{label} (circuit {idx})", s.t, s.pec, _selection_color(label, i))
        )
    (out / "pec_series.svg").write_text(
        svgplot.line_chart(
            series, title="planned position-error covariance along the flight",
            xlabel="t [s]", ylabel="pec [m^2]",
        )
    )
    print(
        f"plan: scored {len(scores)} candidates "
        f"(best={report.best}, worst={report.worst}) -> {out}",
        file=sys.stderr,
    )


# ---------------------------------------------------------------------------
# simulate stage


_STAT_FIELDS = [
    f.name for f in dataclasses.fields(montecarlo.RunStats)
    if f.name not in _ID_FIELDS
]


def _truths_svg(env, records, label: str, mode: str) -> str:
    cmd = records[0].truth.commanded.pos
    paths = [("commanded", cmd, "#111111", 1.2, None)]
    for i, rec in enumerate(records):
        name = "flown runs" if i == 0 else ""
        color = svgplot.SERIES_COLORS[i % len(svgplot.SERIES_COLORS)]
        paths.append((name, rec.truth.pos, color, 1.0, 0.55))
    return svgplot.scene_plot(
        env.bounds_min, env.bounds_max,
        [(b.lo, b.hi) for b in env.obstacles], paths, [],
        title=f"flown trajectories: {label} [{mode}], {len(records)} runs",
    )


def _estimate_svg(env, rec, label: str, mode: str) -> str:
    paths = [
        ("commanded", rec.truth.commanded.pos, "#c4c9d0", 1.0, None),
        ("truth (run 0)", rec.truth.pos, "#111111", 1.4, None),
        ("estimate (run 0)", rec.result.est[:, 3:], svgplot.WORST_COLOR, 1.2, 0.9),
    ]
    return svgplot.scene_plot(
        env.bounds_min, env.bounds_max,
        [(b.lo, b.hi) for b in env.obstacles], paths, [],
        title=f"truth vs estimate: {label} [{mode}]",
    )


def cmd_simulate(cfg: config.RunConfig, out: Path):
    ranking = _read_json_artifact(out / "ranking.json")
    if ranking.get("seed") != cfg.seed:
        raise MissingArtifactError(
            f"ranking.json was produced with seed {ranking.get('seed')}, current "
            f"run uses seed {cfg.seed}; regenerate the plan or pass that seed"
        )
    g = _load_artifact(roadmap.load_graph, out / "graph.json")
    cands = _load_artifact(circuits.load_circuits, out / "circuits.json")

    env = mapenv.load_map(cfg.resolve_map_path())
    kin = cfg.kinematic_profile()
    rates = cfg.rate_schedule()
    noise = cfg.noise_config()
    sim = cfg.simulate
    mode = sim.mode

    agg_rows = []
    for sel in sim.selections:
        idx = _resolve_selection(ranking, sel)
        label = str(sel)
        records = montecarlo.run_trials(
            cands[idx], idx, g, env, kin, rates, noise, cfg.seed, sim.runs,
            mode=mode,
            cross_track_sigma=sim.cross_track_sigma_m,
            cross_track_tau=sim.cross_track_tau_s,
            speed_sigma=sim.speed_sigma_mps,
            dropout=sim.dropout if mode == "noisy" else 0.0,
            outlier_prob=sim.outlier_prob,
            outlier_scale=sim.outlier_scale,
            pec_norm=cfg.plan.pec_norm,
        )
        for i, rec in enumerate(records):
            res = rec.result
            truth_pos = rec.truth.pos[1:]
            err3 = np.linalg.norm(res.est[:, 3:] - truth_pos, axis=1)
            arr = np.column_stack(
                [
                    np.arange(1, len(res.t) + 1), res.t, truth_pos,
                    res.est[:, 3:], err3, res.pec,
                ]
            )
            np.savetxt(
                out / f"run_{label}_{mode}_{i}.csv", arr,
                fmt=["%d", "%.3f"] + ["%.9g"] * 8, delimiter=",",
                header="step,t_s,truth_n,truth_e,truth_d,"
                       "est_n,est_e,est_d,err_3d_m,pec_m2",
                comments="",
            )
        stats = [rec.stats for rec in records]
        _write_csv(
            out / f"summary_{label}_{mode}.csv",
            [f.name for f in dataclasses.fields(montecarlo.RunStats)],
            [
                [
                    s.circuit_index, s.run_index, s.mode,
                    *(_f(getattr(s, name)) for name in _STAT_FIELDS),
                ]
                for s in stats
            ],
        )
        (out / f"truths_{label}_{mode}.svg").write_text(
            _truths_svg(env, records, label, mode)
        )
        (out / f"estimate_{label}_{mode}.svg").write_text(
            _estimate_svg(env, records[0], label, mode)
        )
        agg = montecarlo.aggregate_trials(stats)
        row = [label, idx, mode, agg["runs"]]
        for name in _STAT_FIELDS:
            row.append(_f(agg[f"{name}_mean"]))
            row.append(_f(agg[f"{name}_median"]))
        agg_rows.append(row)
        print(
            f"simulate: {label} (circuit {idx}) x{sim.runs} [{mode}] "
            f"rms_3d mean {agg['rms_3d_mean']:.3f} m",
            file=sys.stderr,
        )

    agg_header = ["selection", "circuit", "mode", "runs"]
    for name in _STAT_FIELDS:
        agg_header += [f"{name}_mean", f"{name}_median"]
    _write_csv(out / f"aggregate_{mode}.csv", agg_header, agg_rows)


# ---------------------------------------------------------------------------
# report stage


def _read_csv_artifact(path: Path) -> list[dict]:
    if not path.exists():
        raise MissingArtifactError(
            f"missing artifact {path.name}: run the earlier stages first"
        )
    try:
        with path.open(newline="") as fh:
            return list(csv.DictReader(fh))
    except (OSError, csv.Error) as exc:
        raise MissingArtifactError(f"corrupt artifact {path.name}: {exc}") from exc


def _named_selections(ranking: dict) -> list[tuple[str, int]]:
    out = []
    for name in ("best", "second_best", "second_worst", "worst"):
        idx = ranking.get(name)
        if idx is not None and (name in ("best", "worst") or idx not in
                                {ranking.get("best"), ranking.get("worst")}):
            out.append((name, int(idx)))
    return out


def cmd_report(cfg: config.RunConfig, out: Path):
    ranking = _read_json_artifact(out / "ranking.json")
    score_rows = {
        int(r["circuit"]): r for r in _read_csv_artifact(out / "path_scores.csv")
    }
    totals = ranking["totals"]
    best, worst = ranking["best"], ranking["worst"]
    ratio = totals[worst] / totals[best] if totals[best] > 0 else float("inf")

    planning = {}
    for name, idx in _named_selections(ranking):
        r = score_rows[idx]
        planning[name] = {
            "circuit": idx,
            "length_m": float(r["length_m"]),
            "flight_time_s": float(r["flight_time_s"]),
            "pec_total_m2": float(r["pec_total_m2"]),
            "pec_max_m2": float(r["pec_max_m2"]),
            "pec_mean_m2": float(r["pec_mean_m2"]),
            "pec_median_m2": float(r["pec_median_m2"]),
            "pec_sigma_m2": float(r["pec_sigma_m2"]),
            "pec_rms_m2": float(r["pec_rms_m2"]),
            "threshold_ok": r["threshold_ok"] == "true",
            "within_flight_limit": r["within_flight_limit"] == "true",
        }

    mode = cfg.simulate.mode
    agg_path = out / f"aggregate_{mode}.csv"
    simulation: dict = {"available": agg_path.exists(), "mode": mode}
    direction_ok = None
    if simulation["available"]:
        rows = _read_csv_artifact(agg_path)
        sels = {}
        for r in rows:
            sels[r["selection"]] = {
                k: (v if k in ("selection", "mode") else float(v))
                for k, v in r.items()
            }
        simulation["selections"] = sels
        simulation["runs"] = int(float(rows[0]["runs"])) if rows else 0
        if "best" in sels and "worst" in sels:
            direction_ok = bool(
                sels["best"]["rms_3d_mean"] < sels["worst"]["rms_3d_mean"]
            )

    rep = {
        "seed": ranking["seed"],
        "graph": ranking["graph"],
        "ranking": {
            "best": best,
            "worst": worst,
            "second_best": ranking["second_best"],
            "second_worst": ranking["second_worst"],
            "degenerate": ranking["degenerate"],
            "pec_total_best_m2": totals[best],
            "pec_total_worst_m2": totals[worst],
        },
        "planning": planning,
        "simulation": simulation,
        "consistency": {
            "pec_ratio_worst_over_best": ratio,
            "rms_3d_direction_ok": direction_ok,
        },
    }
    _write_json(out / "report.json", rep)

    lines = []
    gr = ranking["graph"]
    lines.append(f"coverage path report  (seed {ranking['seed']})")
    lines.append("")
    lines.append(
        f"graph: {gr['nodes']} nodes, {gr['distinct_edges']} distinct edges, "
        f"{gr['edge_instances']} traversals, total length "
        f"{gr['total_length_m']:.2f} m"
    )
    lines.append("")
    lines.append("planning (pec accumulated over the whole flight, m^2)")
    lines.append(
        f"{'selection':<13}{'circuit':>8}{'length_m':>11}{'flight_s':>10}"
        f"{'pec_total':>13}{'pec_max':>10}{'pec_mean':>10}{'pec_median':>12}"
    )
    for name, p in planning.items():
        lines.append(
            f"{name:<13}{p['circuit']:>8}{p['length_m']:>11.2f}"
            f"{p['flight_time_s']:>10.2f}{p['pec_total_m2']:>13.4g}"
            f"{p['pec_max_m2']:>10.4g}{p['pec_mean_m2']:>10.4g}"
            f"{p['pec_median_m2']:>12.4g}"
        )
    lines.append("")
    if simulation["available"]:
        lines.append(
            f"simulation (mode {mode}, {simulation['runs']} runs per circuit)"
        )
        lines.append(
            f"{'selection':<13}{'circuit':>8}{'rms3d_mean':>12}{'rms3d_med':>11}"
            f"{'mpe_mean':>10}{'pec_tot_mean':>14}{'dropped_mean':>14}"
        )
        for name, a in simulation["selections"].items():
            lines.append(
                f"{name:<13}{int(a['circuit']):>8}{a['rms_3d_mean']:>12.3f}"
                f"{a['rms_3d_median']:>11.3f}{a['mpe_mean']:>10.3f}"
                f"{a['pec_total_mean']:>14.4g}{a['dropped_events_mean']:>14.1f}"
            )
    else:
        lines.append(
            f"simulation: no simulation artifacts for mode '{mode}'; "
            "run the simulate stage first"
        )
    lines.append("")
    lines.append(
        f"ranking check: worst/best pec ratio {ratio:.3f}"
        + (
            f"; rms_3d direction consistent: {'yes' if direction_ok else 'no'}"
            if direction_ok is not None
            else ""
        )
    )
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print(f"report: wrote {out / 'report.json'}", file=sys.stderr)


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tunnelplan",
        description="Plan, simulate, and rank UAV coverage circuits localized "
                    "by a stationary ground sensor rig.",
    )
    sub = p.add_subparsers(dest="command", required=True)
    stages = {
        "plan": "sample a roadmap, generate circuits, and rank them",
        "simulate": "Monte Carlo replay of selected circuits",
        "report": "combine plan and simulation artifacts into one report",
        "all": "plan, simulate, and report in sequence",
    }
    for name, help_text in stages.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("--config", type=Path, default=None,
                       help="YAML config file (defaults are built in)")
        s.add_argument("--seed", type=int, default=None,
                       help="master seed, overrides the config file")
        s.add_argument("--out", default=None,
                       help="artifact directory (default: config out_dir)")
        s.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="dotted config override, e.g. plan.nodes=16")
        s.add_argument("--select", action="append", default=None,
                       metavar="SEL",
                       help="circuit selection: best, worst, second_best, "
                            "second_worst, or a candidate index (repeatable)")
        s.add_argument("--mode", choices=("noisy", "perfect"), default=None,
                       help="measurement synthesis mode")
        s.add_argument("--runs", type=int, default=None,
                       help="Monte Carlo trials per selected circuit")
    return p


def _config_from_args(args) -> config.RunConfig:
    overrides = list(args.overrides)
    if args.runs is not None:
        overrides.append(f"simulate.runs={args.runs}")
    if args.mode is not None:
        overrides.append(f"simulate.mode={args.mode}")
    if args.select:
        overrides.append("simulate.selections=[" + ", ".join(args.select) + "]")
    return config.load_config(args.config, overrides, args.seed)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        cfg = _config_from_args(args)
        out = Path(args.out) if args.out is not None else Path(cfg.out_dir)
        if args.command in ("plan", "all"):
            cmd_plan(cfg, out)
        if args.command in ("simulate", "all"):
            cmd_simulate(cfg, out)
        if args.command in ("report", "all"):
            cmd_report(cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except MapFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MAP
    except (
        SamplingExhaustedError,
        DisconnectedGraphError,
        NotEulerianError,
        InvalidCircuitError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PLANNER
    except TunnelPlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    return EXIT_OK
