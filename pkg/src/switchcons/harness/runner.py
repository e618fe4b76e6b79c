"""Experiment pipeline: build, certify connectivity, integrate, monitor, persist."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..dynamics import NumericalError, SwitchedSystem, Trajectory, integrate, sample_ball
from ..graph import STRONG, Digraph, GraphProcess, random_uniformly_connected_signal, required_window, verify_uniform_connectivity
from ..lyapunov import CERTIFICATES, Margins, MonitorReport, check_assumption_v, check_assumption_w, monitor, settling_time, strict_decrease_window
from ..signal import SwitchingSignal, random_signal
from ..systems import (
    SCALE_STATES, WeightProfile, identity_scale, make_epipole_network, make_linear_consensus,
    make_scaled_consensus, make_so3_axis_angle, smooth_transitions, square_scale, stabilization_embed,
)
from .config import ConfigError, ExperimentConfig


class ExperimentError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``partial`` lists files already written."""

    def __init__(self, stage: str, cause: Exception, partial=()):
        super().__init__(f"{stage} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.partial = list(partial)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    system: SwitchedSystem
    trajectory: Trajectory
    report: MonitorReport
    summary: dict
    files: dict = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def config_hash(self) -> str:
        return self.summary["config_hash"]

    @property
    def expectations_met(self) -> bool:
        return not self.summary["mismatches"]


# ---------------------------------------------------------------- building


def _graphs_from_record(n: int, record: dict) -> list:
    ids = sorted(int(k) for k in record)
    if ids != list(range(1, len(ids) + 1)):
        raise ConfigError("explicit graphs must be keyed 1..K")
    return [Digraph.from_neighbors(n, record[k] if k in record else record[str(k)]) for k in ids]


def _split_library(n: int, groups, mode_count: int, extra_edge_prob: float, rng) -> list:
    """Mode graphs with edges only inside groups; each group gets a spanning cycle split across modes."""
    members = sorted(a for g in groups for a in g)
    if members != list(range(1, n + 1)):
        raise ConfigError("split groups must partition agents 1..n")
    edge_sets = [set() for _ in range(mode_count)]
    for group in groups:
        order = [group[k] for k in rng.permutation(len(group))]
        if len(order) > 1:
            for k in range(len(order)):
                edge_sets[int(rng.integers(0, mode_count))].add((order[k], order[(k + 1) % len(order)]))
        for j in group:
            for i in group:
                if i != j:
                    for es in edge_sets:
                        if rng.random() < extra_edge_prob:
                            es.add((j, i))
    return [Digraph(n, frozenset(es)) for es in edge_sets]


def build_signal(cfg: ExperimentConfig, n: int, seed_seq, fixed_modes: int | None = None):
    """Returns ``(graphs or None, signal)``."""
    sp = cfg.signal
    kind = sp["kind"]
    horizon = (cfg.t0, cfg.t_end)
    tau_d = float(sp.get("tau_d", 0.1))
    tau_u = float(sp.get("tau_u", 2 * tau_d))
    mode_count = int(sp.get("mode_count", fixed_modes or 3))
    rng = np.random.default_rng(seed_seq)
    if kind == "generated":
        process, _ = random_uniformly_connected_signal(
            n, tau_d, tau_u, float(sp.get("window", 1.0)), horizon,
            kind=sp.get("connectivity", STRONG), seed=rng, mode_count=mode_count,
            extra_edge_prob=float(sp.get("extra_edge_prob", 0.15)),
        )
        return [process.mode_graphs[k] for k in range(1, mode_count + 1)], process.signal
    if kind == "split":
        graphs = _split_library(n, sp["groups"], mode_count, float(sp.get("extra_edge_prob", 0.15)), rng)
        return graphs, random_signal(mode_count, tau_d, tau_u, horizon, rng)
    graphs = _graphs_from_record(n, sp["graphs"]) if "graphs" in sp else None
    count = len(graphs) if graphs is not None else mode_count
    if kind == "random":
        return graphs, random_signal(count, tau_d, tau_u, horizon, rng)
    times = [float(t) for t, _ in sp["switches"]]
    ids = [int(k) for _, k in sp["switches"]]
    return graphs, SwitchingSignal(cfg.t0, cfg.t_end, times, ids, tau_d, sp.get("tau_u"))


def system_shape(cfg: ExperimentConfig) -> tuple:
    name, p = cfg.system["name"], cfg.system.get("params", {})
    if name == "so3":
        return int(p.get("n", 5)), 3
    if name == "epipole":
        return int(p.get("n", 5)), 1
    if name == "stabilization":
        return 2, 1
    return int(p.get("n", 7)), int(p.get("m", 2))


def build_mode_set(cfg: ExperimentConfig, graphs):
    name, p = cfg.system["name"], dict(cfg.system.get("params", {}))
    n, m = system_shape(cfg)
    weights = WeightProfile.constant(float(p.get("weight", 1.0)))
    if name == "stabilization":
        rates = [float(r) for r in p.get("rates", [1.0])]
        return stabilization_embed([lambda s, y, a=a: -a * y for a in rates], m=1)
    if graphs is None:
        raise ConfigError(f"system {name!r} needs mode graphs from the signal section")
    if name == "linear":
        return make_linear_consensus(n, m, graphs, weights)
    if name == "scaled":
        eta = float(p.get("eta", 1.0))
        scale = square_scale(eta) if p.get("scale", "square") == "square" else identity_scale(eta)
        return make_scaled_consensus(n, m, graphs, weights, scale, p.get("variant", SCALE_STATES))
    if name == "so3":
        return make_so3_axis_angle(n, graphs, weights, r=float(p.get("radius", 0.9 * math.pi)))
    return make_epipole_network(
        n, graphs, weights, theta_M=float(p.get("theta_M", 0.1)),
        alpha_cal=float(p.get("alpha_cal", 1.0)), beta=float(p.get("beta", 1.0)),
    )


def build_initial(cfg: ExperimentConfig, n: int, m: int, seed_seq) -> np.ndarray:
    spec = cfg.initial
    kind = spec["kind"]
    if kind == "explicit":
        x = np.asarray(spec["x"], dtype=float).reshape(n, m)
    elif kind == "random-ball":
        center = np.asarray(spec.get("center", np.zeros(m)), dtype=float)
        x = center + sample_ball(np.random.default_rng(seed_seq), n, m, float(spec.get("radius", 1.0)))
    else:
        x = np.zeros((n, m))
        for group, value in zip(spec["groups"], spec["values"]):
            x[np.asarray(group) - 1] = np.broadcast_to(np.asarray(value, dtype=float), (m,))
    return x


def build(cfg: ExperimentConfig):
    """System and initial state for ``cfg``, derived only from its seed."""
    seq_signal, seq_init, seq_check = np.random.SeedSequence(cfg.seed).spawn(3)
    n, m = system_shape(cfg)
    fixed = len(cfg.system.get("params", {}).get("rates", [1.0])) if cfg.system["name"] == "stabilization" else None
    graphs, sig = build_signal(cfg, n, seq_signal, fixed)
    ms = build_mode_set(cfg, graphs)
    if cfg.smoothing:
        ms, sig = smooth_transitions(ms, sig, float(cfg.smoothing["tau_blend"]), cfg.smoothing.get("blend", "cosine"))
    return SwitchedSystem(ms, sig), build_initial(cfg, n, m, seq_init), seq_check


# ---------------------------------------------------------------- running


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def connectivity_summary(cfg: ExperimentConfig, sys: SwitchedSystem) -> dict:
    kind = cfg.signal.get("connectivity", STRONG)
    gp = sys.graph_process
    span = sys.signal.horizon_end - sys.signal.horizon_start
    need = required_window(gp, kind)
    certified = need * (1 + 1e-9) + 1e-9
    window = cfg.signal.get("window")
    if window is not None:
        verdict = verify_uniform_connectivity(gp, float(window), kind)
        passed = bool(verdict.passed)
        starts = verdict.starts_checked
        witness = verdict.witness
    else:
        passed = certified < span / 2
        starts, witness = None, None
    return {
        "kind": kind,
        "window": _num(window),
        "required_window": _num(need),
        "certified_window": _num(certified) if passed else None,
        "passed": passed,
        "starts_checked": starts,
        "witness": _num(witness),
    }


def _assumption_summary(rep: MonitorReport) -> dict:
    return {
        "ok": rep.ok,
        "violations": len(rep.violations),
        "kinds": sorted(rep.kinds()),
        "warnings": len(rep.warnings),
        "first": None if rep.ok else {"time": _num(rep.violations[0].time), "kind": rep.violations[0].kind},
    }


def _decrease_summary(verdict) -> dict:
    return {
        "status": verdict.status,
        "checked": verdict.checked,
        "failures": len(verdict.failures),
        "min_decrease": _num(verdict.min_decrease),
    }


def run_pipeline(cfg: ExperimentConfig):
    try:
        sys, x0, seq_check = build(cfg)
    except Exception as exc:
        raise ExperimentError("build", exc) from exc
    try:
        traj = integrate(sys, x0, cfg.t0, cfg.t_end, cfg.step)
        failure = None
    except NumericalError as exc:
        traj, failure = exc.trajectory, str(exc)
    certs = cfg.certificates
    v_cert = CERTIFICATES[certs["v"]]() if certs.get("v") else None
    w_cert = CERTIFICATES[certs["w"]]() if certs.get("w") else None
    report = monitor(traj, v_cert, w_cert)
    th = cfg.thresholds
    margins = Margins(**{k: float(v) for k, v in cfg.checks.get("margins", {}).items()})
    stride = int(cfg.checks.get("stride", 10))
    check_seed = seq_check.generate_state(1)[0]

    dist = report.dist
    dist0 = float(dist[0])
    reached_time = settling_time(traj.times, dist, th["consensus_rel"] * dist0) if dist0 > 0 else float(traj.times[0])
    completed = traj.domain_exit is None and failure is None
    summary = {
        "name": cfg.name,
        "seed": cfg.seed,
        "config_hash": cfg.digest(),
        "system": sys.mode_set.name or cfg.system["name"],
        "n": sys.n,
        "m": sys.m,
        "samples": len(traj),
        "switches": len(sys.signal.switch_times) - 1,
        "t_reached": _num(traj.times[-1]),
        "completed": completed,
        "numerical_failure": failure,
        "domain_exit": _num(traj.domain_exit),
        "connectivity": connectivity_summary(cfg, sys),
        "consensus": {
            "threshold_rel": th["consensus_rel"],
            "dist_initial": dist0,
            "dist_final": _num(dist[-1]),
            "reached": bool(completed and reached_time is not None),
            "settling_time": _num(reached_time),
            "max_dist_change": _num(np.max(np.abs(dist - dist0))),
            "time_to_eta": {
                repr(float(eta)): _num(settling_time(traj.times, dist, eta * dist0)) for eta in th["eta_grid"]
            },
        },
    }
    tol_c = float(th["tol_consensus"])
    cert_window = summary["connectivity"]["certified_window"]
    for key, cert in (("v", v_cert), ("w", w_cert)):
        if cert is None:
            continue
        series = report.max_v if key == "v" else report.max_w
        block = {
            "initial": _num(series[0]),
            "final": _num(series[-1]),
            "max_increase": _num(report.max_increase(key)),
        }
        if cert_window is not None:
            t_window = sys.n * (cert_window + 2 * sys.signal.tau_d)
            verdict = strict_decrease_window(report, sys, t_window, key, tol_c, float(th["decrease_margin"]))
            block["strict_decrease"] = dict(_decrease_summary(verdict), window=_num(t_window))
        if cfg.checks.get(f"assumption_{key}"):
            checker = check_assumption_v if key == "v" else check_assumption_w
            rep = checker(cert, sys, traj, margins, stride=stride, seed=check_seed)
            block["assumption"] = _assumption_summary(rep)
            if key == "v":
                report.dini_v, report.argmax_v = rep.dini_v, rep.argmax_v
            else:
                report.dini_w, report.argmax_w = rep.dini_w, rep.argmax_w
            report.violations.extend(rep.violations)
            report.warnings.extend(rep.warnings)
        summary[f"max_{key}"] = block

    summary["verdicts"] = verdicts(summary, th)
    summary["mismatches"] = sorted(
        key for key, want in cfg.expect.items() if summary["verdicts"].get(key) != want
    )
    return sys, traj, report, summary


def verdicts(summary: dict, th: dict) -> dict:
    out = {
        "completed": summary["completed"],
        "consensus_reached": summary["consensus"]["reached"],
        "dist_constant": summary["consensus"]["max_dist_change"] <= th["constant_tol"] * max(1.0, summary["consensus"]["dist_initial"]),
        "connectivity_ok": summary["connectivity"]["passed"],
    }
    for key in ("v", "w"):
        block = summary.get(f"max_{key}")
        if block is None:
            continue
        out[f"max_{key}_monotone"] = block["max_increase"] <= th["monotone_tol"]
        if "strict_decrease" in block:
            out[f"strict_decrease_{key}"] = block["strict_decrease"]["status"]
        if "assumption" in block:
            out[f"assumption_{key}_ok"] = block["assumption"]["ok"]
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run ``cfg``; when ``out_dir`` is given, persist every artifact there."""
    sys, traj, report, summary = run_pipeline(cfg)
    result = ExperimentResult(cfg, sys, traj, report, summary)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


# ---------------------------------------------------------------- persistence


def summary_text(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def _fmt(v) -> str:
    return repr(float(v))


def write_trajectory(traj: Trajectory, path_csv: Path, path_jsonl: Path):
    flat = traj.flat_states
    marks = traj.is_switch
    with open(path_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "mode_id", "is_switch"] + [f"x{c + 1}" for c in range(flat.shape[1])])
        for t, k, sw, row in zip(traj.times, traj.mode_ids, marks, flat):
            w.writerow([_fmt(t), int(k), int(sw)] + [_fmt(v) for v in row])
    with open(path_jsonl, "w") as fh:
        for t, k, sw, row in zip(traj.times, traj.mode_ids, marks, flat):
            rec = {"t": float(t), "mode_id": int(k), "x": [float(v) for v in row], "is_switch": bool(sw)}
            fh.write(json.dumps(rec) + "\n")


def write_monitor(report: MonitorReport, path_series: Path, path_violations: Path):
    cols = ["t", "dist_to_A", "mode_id", "is_switch"]
    series = [report.times, report.dist, report.mode_ids, report.switch_mask]
    for name in ("max_v", "max_w", "dini_v", "dini_w"):
        data = getattr(report, name)
        if data is not None:
            cols.append(name)
            series.append(data)
    with open(path_series, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*series):
            w.writerow([_fmt(row[0]), _fmt(row[1]), int(row[2]), int(row[3])] + [_fmt(v) for v in row[4:]])
    with open(path_violations, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "severity", "kind", "witness"])
        for sev, items in (("violation", report.violations), ("warning", report.warnings)):
            for v in items:
                w.writerow([_fmt(v.time), sev, v.kind, json.dumps(v.witness, sort_keys=True, default=float)])


def emit_plotdata(result: ExperimentResult, out_dir) -> dict:
    """Per-sample series ``t, dist_to_A, max_v, max_w, mode_id`` then the state block, plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep, traj = result.report, result.trajectory
    flat = traj.flat_states
    empty = np.full(len(traj), np.nan)
    max_v = rep.max_v if rep.max_v is not None else empty
    max_w = rep.max_w if rep.max_w is not None else empty
    series = out / "plotdata.csv"
    with open(series, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "dist_to_A", "max_v", "max_w", "mode_id"] + [f"x{c + 1}" for c in range(flat.shape[1])])
        for t, d, a, b, k, row in zip(traj.times, rep.dist, max_v, max_w, traj.mode_ids, flat):
            w.writerow([_fmt(t), _fmt(d), _fmt(a), _fmt(b), int(k)] + [_fmt(v) for v in row])
    manifest = out / "plotdata_manifest.yaml"
    manifest.write_text(yaml.safe_dump({
        "name": result.config.name,
        "seed": result.seed,
        "config_hash": result.config_hash,
        "series": series.name,
        "rows": len(traj),
        "state_columns": int(flat.shape[1]),
    }, sort_keys=True))
    return {"plotdata": series, "plotdata_manifest": manifest}


def write_outputs(result: ExperimentResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "config": out / "config.yaml",
        "trajectory_csv": out / "trajectory.csv",
        "trajectory_jsonl": out / "trajectory.jsonl",
        "monitor": out / "monitor.csv",
        "violations": out / "violations.csv",
        "signal": out / "signal.json",
        "summary": out / "summary.json",
        "manifest": out / "manifest.yaml",
    }
    written = []
    try:
        from .config import dumps

        files["config"].write_text(dumps(result.config))
        written.append("config")
        write_trajectory(result.trajectory, files["trajectory_csv"], files["trajectory_jsonl"])
        written += ["trajectory_csv", "trajectory_jsonl"]
        write_monitor(result.report, files["monitor"], files["violations"])
        written += ["monitor", "violations"]
        files["signal"].write_text(json.dumps(result.system.signal.to_record(), sort_keys=True) + "\n")
        written.append("signal")
        files["summary"].write_text(summary_text(result.summary))
        written.append("summary")
        files.update(emit_plotdata(result, out))
        files["manifest"].write_text(yaml.safe_dump({
            "name": result.config.name,
            "seed": result.seed,
            "config_hash": result.config_hash,
            "complete": True,
            "files": sorted(p.name for k, p in files.items() if k != "manifest"),
        }, sort_keys=True))
    except OSError as exc:
        (out / "manifest.yaml").write_text(yaml.safe_dump({
            "name": result.config.name, "seed": result.seed, "config_hash": result.config_hash,
            "complete": False, "files": sorted(files[k].name for k in written),
        }, sort_keys=True))
        raise ExperimentError("write", exc, [files[k] for k in written]) from exc
    result.files = files
    return files


# ---------------------------------------------------------------- sweeps


def _sweep_cell(args):
    cfg_dict, axis, value, seed = args
    row = {"axis": axis, "value": value, "seed": seed}
    try:
        cfg = ExperimentConfig.from_dict(cfg_dict).replace(axis, value).replace("seed", seed)
        _, _, _, summary = run_pipeline(cfg)
    except Exception as exc:  # recorded per cell, the sweep continues
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
        return row
    row.update(
        status="ok",
        error=None,
        consensus_reached=summary["consensus"]["reached"],
        settling_time=summary["consensus"]["settling_time"],
        time_to_eta=summary["consensus"]["time_to_eta"],
        mismatches=summary["mismatches"],
    )
    return row


def sweep(cfg: ExperimentConfig, axis: str, values, seeds=None, workers: int = 1) -> list:
    """One row per (value, seed) cell, in input order."""
    seeds = [cfg.seed] if seeds is None else list(seeds)
    base = cfg.to_dict()
    jobs = [(base, axis, v, int(s)) for v in values for s in seeds]
    if not jobs:
        return []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_cell, jobs))
    return [_sweep_cell(j) for j in jobs]


def sweep_table(rows: list) -> list:
    """Aggregate per axis value: success count and time-to-eta spread."""
    table = []
    for value in dict.fromkeys(repr(r["value"]) for r in rows):
        cells = [r for r in rows if repr(r["value"]) == value]
        ok = [r for r in cells if r["status"] == "ok"]
        times = [r["settling_time"] for r in ok if r["settling_time"] is not None]
        table.append({
            "value": cells[0]["value"],
            "cells": len(cells),
            "errors": len(cells) - len(ok),
            "reached": sum(bool(r["consensus_reached"]) for r in ok),
            "settling_min": min(times) if times else None,
            "settling_max": max(times) if times else None,
        })
    return table


def write_sweep(rows: list, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["axis", "value", "seed", "status", "consensus_reached", "settling_time", "error"])
        for r in rows:
            w.writerow([r["axis"], r["value"], r["seed"], r["status"], r.get("consensus_reached"),
                        r.get("settling_time"), r.get("error") or ""])
    return path


def verify_process(cfg: ExperimentConfig) -> tuple:
    """Build only the graph process and return ``(GraphProcess, connectivity summary)``."""
    sys, _, _ = build(cfg)
    return sys.graph_process, connectivity_summary(cfg, sys)


__all__ = [
    "ExperimentError", "ExperimentResult", "GraphProcess", "build", "emit_plotdata", "run_experiment",
    "sweep", "sweep_table", "verify_process", "write_outputs",
]
