"""Experiment stages: FOM sweep, POD, offline projection, online runs, comparison and reports."""

from __future__ import annotations

import csv
import json
import logging
import os
import time

import numpy as np

from ..errors import IncompatibleArtifacts, MissingArtifact, SplitromError
from ..fom import FIELDS, FlowProblem, FOMConfig, SnapshotSet, run_fom
from ..hybrid import HybridConfig, run_hybrid
from ..mesh import generate_bifurcated_tube, generate_channel, load_mesh, save_mesh
from ..pod import load_basis, modes_for_energy, energy_ratio, save_basis
from ..qoi import FlowOutputs, QoISeries, l2L2_relative_error, qoi_relative_error_L2time
from ..rbf import build_training_coef, build_training_param_time, load_model, rbf_fit, save_model
from ..rom import (
    assemble_reduced,
    build_bases,
    homogenize,
    lifting,
    load_operators,
    rom_initialize,
    run_rom,
    save_operators,
)
from .config import ROM_FIELDS, ExperimentConfig

log = logging.getLogger(__name__)


def run_tag(re):
    return f"Re{re:g}"


class Workspace:
    """Output directory with a manifest mapping artifacts to producing-config hashes."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = cfg.output
        os.makedirs(self.root, exist_ok=True)
        self.manifest_path = os.path.join(self.root, "manifest.json")
        self.manifest = {}
        if os.path.exists(self.manifest_path):
            with open(self.manifest_path) as fh:
                self.manifest = json.load(fh)

    def path(self, *parts):
        p = os.path.join(self.root, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def record(self, rel, digest):
        self.manifest[rel] = digest
        with open(self.manifest_path, "w") as fh:
            json.dump(self.manifest, fh, indent=1, sort_keys=True)

    def require(self, rel, digest):
        full = os.path.join(self.root, rel)
        if not os.path.exists(full):
            raise MissingArtifact(f"{full} is missing; run the producing command first")
        if self.manifest.get(rel) != digest:
            raise IncompatibleArtifacts(f"{full} was produced by a different configuration")
        return full

    def has(self, rel, digest):
        return os.path.exists(os.path.join(self.root, rel)) and self.manifest.get(rel) == digest


def build_mesh(cfg: ExperimentConfig):
    if cfg.scenario == "channel":
        return generate_channel(cfg.length, cfg.height, cfg.nx, cfg.ny)
    if cfg.scenario == "bifurcated":
        return generate_bifurcated_tube(cfg.nx)
    return load_mesh(cfg.mesh_path)


def fom_config(cfg: ExperimentConfig, re):
    return FOMConfig(nu=cfg.viscosity(re), dt=cfg.dt, t_end=cfg.t_end, inflow_mean=cfg.u_mean,
                     ramp_steps=cfg.ramp_steps, window=cfg.snapshot_window(), stride=cfg.stride,
                     convection=cfg.convection, reynolds=float(re), diameter=cfg.length_scale)


def all_runs(cfg):
    out = []
    for re in list(cfg.re_train) + list(cfg.re_test):
        if re not in out:
            out.append(re)
    return out


def cmd_mesh(cfg: ExperimentConfig):
    ws = Workspace(cfg)
    mesh = build_mesh(cfg)
    save_mesh(mesh, ws.path("mesh.msh"))
    ws.record("mesh.msh", cfg.hash_flow())
    return {"vertices": mesh.n_vertices, "triangles": mesh.n_triangles}


def cmd_fom(cfg: ExperimentConfig, problem: FlowProblem | None = None):
    """Full-order runs for all training and query parameters."""
    ws = Workspace(cfg)
    pb = problem or FlowProblem(build_mesh(cfg))
    summary = {}
    for re in all_runs(cfg):
        tag = run_tag(re)
        digest = cfg.hash_run(re)
        res = run_fom(fom_config(cfg, re), problem=pb)
        paths = res.snapshots.save(os.path.dirname(ws.path("fom", "x")), tag)
        for p in paths.values():
            ws.record(os.path.relpath(p, ws.root), digest)
        res.qoi.to_csv(ws.path("fom", f"{tag}_qoi.csv"))
        timing = {"re": re, "n_steps": len(res.step_times), "wall_time": res.wall_time,
                  "step_times": res.step_times, "snapshots": res.snapshots.count,
                  "dofs": pb.V.dof_count + pb.Q.dof_count}
        with open(ws.path("fom", f"{tag}_timing.json"), "w") as fh:
            json.dump(timing, fh)
        for name in (f"{tag}_qoi.csv", f"{tag}_timing.json"):
            ws.record(os.path.join("fom", name), digest)
        summary[tag] = {"snapshots": res.snapshots.count, "wall_time": res.wall_time}
    return summary


def _load_run(ws, cfg, re):
    tag = run_tag(re)
    for name in FIELDS:
        ws.require(os.path.join("fom", f"{tag}_{name}.snap"), cfg.hash_run(re))
    return SnapshotSet.load(os.path.join(ws.root, "fom"), tag)


def _training_data(ws, cfg):
    sets = [_load_run(ws, cfg, re) for re in cfg.re_train]
    return SnapshotSet.concatenate(sets)


def cmd_pod(cfg: ExperimentConfig, problem: FlowProblem | None = None):
    """Full-rank bases of the five fields and the eigenvalue/energy table."""
    ws = Workspace(cfg)
    pb = problem or FlowProblem(build_mesh(cfg))
    fields, times, _ = _training_data(ws, cfg)
    bases = build_bases(pb, fields, times, fom_config(cfg, cfg.re_train[0]))
    digest = cfg.hash_pod()
    for name, basis in bases.items():
        save_basis(ws.path("pod", f"{name}.basis"), basis)
        ws.record(os.path.join("pod", f"{name}.basis"), digest)
    n = max(len(b.eigenvalues) for b in bases.values())
    with open(ws.path("pod", "eigenvalues.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"lambda_{f}" for f in FIELDS] + [f"energy_{f}" for f in FIELDS])
        for k in range(n):
            lam = [repr(float(bases[f].eigenvalues[k])) if k < len(bases[f].eigenvalues) else ""
                   for f in FIELDS]
            en = [repr(energy_ratio(bases[f].eigenvalues, k + 1)) if k < len(bases[f].eigenvalues) else ""
                  for f in FIELDS]
            w.writerow([k + 1] + lam + en)
    ws.record(os.path.join("pod", "eigenvalues.csv"), digest)
    return {f: {"rank": b.r, "r95": modes_for_energy(b.eigenvalues, 95.0)} for f, b in bases.items()}


def _load_bases(ws, cfg, pb):
    out = {}
    for name in FIELDS:
        path = ws.require(os.path.join("pod", f"{name}.basis"), cfg.hash_pod())
        out[name] = load_basis(path, pb.gram(name))
    return out


def select_modes(cfg: ExperimentConfig, bases: dict, r_all: int | None = None):
    """Truncate each basis per the configured counts (energy criterion or numerical rank otherwise)."""
    req = cfg.modes_requested()
    out = {}
    for name in ROM_FIELDS:
        b = bases[name]
        r = r_all or req[name]
        if not r:
            r = modes_for_energy(b.eigenvalues, cfg.energy) if cfg.energy else b.r
        out[name] = b.truncate(min(r, b.r)) if r_all else b.truncate(r)
    return out


def _fit_models(cfg, fields, times, params, pb, bases, fcfg):
    models = {}
    errors = {}
    try:
        models["param"] = tuple(
            rbf_fit(build_training_param_time(fields[f], times, params, bases[f]), cfg.rbf_lambda, "ParamTime")
            for f in ("phi", "phihat"))
    except SplitromError as exc:
        errors["param"] = str(exc)
    try:
        ut = homogenize(fields["ut"], times, fcfg.dt, fcfg, lifting(pb, fcfg))
        targets = [bases[f].project(fields[f]).T for f in ("phi", "phihat")]
        models["extrap"] = tuple(
            rbf_fit(build_training_coef(ut, bases["ut"], y), cfg.rbf_lambda, "CoefExtrapolation")
            for y in targets)
    except SplitromError as exc:
        errors["extrap"] = str(exc)
    return models, errors


def cmd_rom_offline(cfg: ExperimentConfig, problem: FlowProblem | None = None):
    """Reduced operators and RBF surrogates for the configured mode counts."""
    ws = Workspace(cfg)
    pb = problem or FlowProblem(build_mesh(cfg))
    fcfg = fom_config(cfg, cfg.re_train[0])
    bases = select_modes(cfg, _load_bases(ws, cfg, pb))
    digest = cfg.hash_ops()
    tic = time.perf_counter()
    ops = assemble_reduced(pb, bases, fcfg, cfg.pairing, digest)
    offline_time = time.perf_counter() - tic
    save_operators(ws.path("rom", "operators.romops"), ops)
    ws.record(os.path.join("rom", "operators.romops"), digest)
    fields, times, params = _training_data(ws, cfg)
    models, errors = _fit_models(cfg, fields, times, params, pb, bases, fcfg)
    for kind, (mc, mh) in models.items():
        for name, m in (("c", mc), ("ch", mh)):
            save_model(ws.path("rbf", f"{kind}_{name}.rbf"), m)
            ws.record(os.path.join("rbf", f"{kind}_{name}.rbf"), digest)
    info = {"dims": ops.dims, "offline_time": offline_time, "rbf_unavailable": errors}
    with open(ws.path("rom", "offline.json"), "w") as fh:
        json.dump(info, fh, indent=1)
    return info


def _initial_state(ws, cfg, re, bases, pb):
    """Projection of the first stored snapshot of the reference (or nearest training) run."""
    runs = [re] if ws.has(os.path.join("fom", f"{run_tag(re)}_u.snap"), cfg.hash_run(re)) else []
    src = runs[0] if runs else min(cfg.re_train, key=lambda x: abs(x - re))
    snaps = _load_run(ws, cfg, src)
    step0 = int(round(snaps.times[0] / cfg.dt))
    state = rom_initialize(snaps["u"][:, 0], snaps["p"][:, 0], bases, step0, cfg.dt, cfg.pairing, pb)
    return state, (snaps if src == re else None)


def _reconstructed_qoi(traj, bases, pb, nu, cfg):
    outputs = FlowOutputs(pb.V, pb.Q, nu, pb.M, cfg.length_scale, cfg.u_mean, pb.K, pb.B)
    U = traj.reconstruct("u", bases)
    P = traj.reconstruct("p", bases)
    series = QoISeries()
    for n in range(1, U.shape[1]):
        series.append(traj.times[n], outputs(U[:, n], P[:, n], U[:, n - 1], cfg.dt))
    return series, U, P


def _fom_window_time(ws, re, first_step, n_steps):
    path = os.path.join(ws.root, "fom", f"{run_tag(re)}_timing.json")
    if not os.path.exists(path):
        return float("nan")
    with open(path) as fh:
        st = json.load(fh)["step_times"]
    return float(sum(st[first_step:first_step + n_steps]))


def run_online(cfg: ExperimentConfig, variant: str, problem: FlowProblem | None = None, bases=None,
               ops=None, models=None, write=True):
    """Online runs for every query parameter (training list if none); returns summaries."""
    ws = Workspace(cfg)
    pb = problem or FlowProblem(build_mesh(cfg))
    digest = cfg.hash_ops()
    if bases is None:
        bases = select_modes(cfg, _load_bases(ws, cfg, pb))
    if ops is None:
        ops = load_operators(ws.require(os.path.join("rom", "operators.romops"), digest))
        if ops.tag != digest:
            raise IncompatibleArtifacts("reduced operators were built for another configuration")
    if ops.dims != {k: b.r for k, b in bases.items()}:
        raise IncompatibleArtifacts("reduced operators and bases have different mode counts")
    kind = {"hybrid-param": "param", "hybrid-extrap": "extrap"}.get(variant)
    if kind and models is None:
        models = tuple(load_model(ws.require(os.path.join("rbf", f"{kind}_{n}.rbf"), digest))
                       for n in ("c", "ch"))
    summaries = []
    for re in (cfg.re_test or cfg.re_train):
        nu = cfg.viscosity(re)
        state, ref = _initial_state(ws, cfg, re, bases, pb)
        n_steps = int(round(cfg.snapshot_window()[1] / cfg.dt)) - state.step
        if kind is None:
            traj = run_rom(state, ops, n_steps, nu)
        else:
            mode = "ParamTime" if kind == "param" else "CoefExtrapolation"
            hc = HybridConfig(mode, models[0], models[1], ops, nu, float(re) if kind == "param" else None)
            traj = run_hybrid(state, hc, n_steps)
        series, U, _ = _reconstructed_qoi(traj, bases, pb, nu, cfg)
        tag = f"{variant}_{run_tag(re)}"
        summary = {"variant": variant, "re": re, "online_time": traj.wall_time, "n_steps": n_steps,
                   "dims": ops.dims, "fom_time": _fom_window_time(ws, re, state.step, n_steps)}
        summary.update({k: v for k, v in traj.extra.items() if k != "mode"})
        if ref is not None:
            cols = [int(round(t / cfg.dt)) - state.step for t in ref.times]
            keep = [i for i, c in enumerate(cols) if 0 <= c <= n_steps]
            idx = [cols[i] for i in keep]
            summary["error_u"] = l2L2_relative_error(ref["u"][:, keep], U[:, idx], pb.M)
            summary["error_p"] = l2L2_relative_error(ref["p"][:, keep], traj.reconstruct("p", bases)[:, idx],
                                                     pb.H1p)
            fom_q = QoISeries.from_csv(os.path.join(ws.root, "fom", f"{run_tag(re)}_qoi.csv"))
            t_rom = series.t
            pos = np.searchsorted(fom_q.t, t_rom - 1e-9 * cfg.dt)
            summary["qoi_error_L2time"] = {
                k: qoi_relative_error_L2time(t_rom, fom_q[k][pos], series[k]) for k in series.names()}
            if write:
                with open(ws.path("results", f"{tag}_qoi_abs_error.csv"), "w", newline="") as fh:
                    w = csv.writer(fh)
                    w.writerow(["t", *series.names()])
                    for n, t in enumerate(t_rom):
                        w.writerow([repr(float(t))] + [repr(float(abs(fom_q[k][pos[n]] - series[k][n])))
                                                       for k in series.names()])
        if write:
            _write_trajectory(ws.path("results", f"{tag}_traj.csv"), traj)
            series.to_csv(ws.path("results", f"{tag}_qoi.csv"), extra={"mode": variant})
            with open(ws.path("results", f"{tag}_summary.json"), "w") as fh:
                json.dump(summary, fh, indent=1, default=float)
        summaries.append(summary)
    return summaries


def _write_trajectory(path, traj):
    names = []
    for key in ("a", "at", "b", "c", "ch"):
        names += [f"{key}{i + 1}" for i in range(traj.coefs[key].shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *names])
        for n, t in enumerate(traj.times):
            row = np.concatenate([traj.coefs[k][n] for k in ("a", "at", "b", "c", "ch")])
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


def cmd_rom(cfg, problem=None):
    return run_online(cfg, "intrusive", problem)


def cmd_hybrid(cfg, problem=None):
    variant = cfg.variant if cfg.variant.startswith("hybrid") else "hybrid-param"
    return run_online(cfg, variant, problem)


def cmd_compare(cfg: ExperimentConfig, problem: FlowProblem | None = None):
    """Velocity error of the intrusive and hybrid models versus the number of modes."""
    ws = Workspace(cfg)
    pb = problem or FlowProblem(build_mesh(cfg))
    full = _load_bases(ws, cfg, pb)
    fcfg = fom_config(cfg, cfg.re_train[0])
    fields, times, params = _training_data(ws, cfg)
    rows = []
    for r in cfg.r_curve:
        bases = select_modes(cfg, full, r_all=r)
        ops = assemble_reduced(pb, bases, fcfg, cfg.pairing, cfg.hash_ops())
        row = {"r": r, "r_used": min(r, min(b.r for b in bases.values()))}
        row["intrusive"] = run_online(cfg, "intrusive", pb, bases, ops, write=False)[0].get("error_u", np.nan)
        models, _ = _fit_models(cfg, fields, times, params, pb, bases, fcfg)
        if "param" in models:
            row["hybrid"] = run_online(cfg, "hybrid-param", pb, bases, ops, models["param"],
                                       write=False)[0].get("error_u", np.nan)
        else:
            row["hybrid"] = np.nan
        rows.append(row)
    with open(ws.path("results", "error_vs_r.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "r_used", "error_intrusive", "error_hybrid"])
        for row in rows:
            w.writerow([row["r"], row["r_used"], repr(float(row["intrusive"])), repr(float(row["hybrid"]))])
    return rows


def cmd_report(cfg: ExperimentConfig):
    """CPU-time table of FOM and reduced models plus error summaries."""
    ws = Workspace(cfg)
    res_dir = os.path.join(ws.root, "results")
    if not os.path.isdir(res_dir):
        raise MissingArtifact(f"{res_dir} is missing; run rom/hybrid first")
    summaries = []
    for name in sorted(os.listdir(res_dir)):
        if name.endswith("_summary.json"):
            with open(os.path.join(res_dir, name)) as fh:
                summaries.append(json.load(fh))
    if not summaries:
        raise MissingArtifact("no online results to report")
    rows = []
    for s in summaries:
        speed = s["fom_time"] / s["online_time"] if s["online_time"] > 0 else float("nan")
        rows.append((s["variant"], s["re"], s["fom_time"], s["online_time"], speed, s.get("error_u", float("nan"))))
    with open(ws.path("results", "speedup.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "Re", "fom_cpu_time_s", "rom_cpu_time_s", "speed_up", "velocity_l2L2_error"])
        for row in rows:
            w.writerow([row[0], row[1]] + [repr(float(x)) for x in row[2:]])
    lines = ["CPU time of FOM and ROMs (online loop only)", "",
             f"{'model':<16}{'Re':>8}{'FOM [s]':>12}{'ROM [s]':>12}{'speed-up':>12}{'l2(L2) err':>14}"]
    for m, re, tf, tr, sp, err in rows:
        lines.append(f"{m:<16}{re:>8g}{tf:>12.4g}{tr:>12.4g}{sp:>12.1f}{err:>14.3e}")
    curve = os.path.join(res_dir, "error_vs_r.csv")
    if os.path.exists(curve):
        with open(curve) as fh:
            lines += ["", "velocity error versus number of modes", fh.read().rstrip()]
    text = "\n".join(lines) + "\n"
    with open(ws.path("results", "report.txt"), "w") as fh:
        fh.write(text)
    return text
