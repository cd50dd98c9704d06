"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line with the measured quantity; the lines are
printed in the terminal summary (see ``conftest.py``) and immediately when the
module runs with ``-s``.  Run standalone with ``python3 tests/test_acceptance.py``.
"""

import csv
import json
import math
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from splitrom.errors import IllConditioned
from splitrom.fem import FEField
from splitrom.fom import FlowProblem, FOMConfig, FOMSolver, run_fom
from splitrom.harness.cli import main as cli
from splitrom.harness.config import load_config
from splitrom.harness.pipeline import _load_bases, _training_data, Workspace, select_modes
from splitrom.hybrid import HybridConfig, run_hybrid
from splitrom.mesh import BoundaryLabel, generate_bifurcated_tube, generate_channel
from splitrom.pod import InnerProduct, pod
from splitrom.qoi import l2L2_relative_error, outflux, section_flux
from splitrom.rbf import TrainingTable, build_training_param_time, rbf_eval, rbf_fit
from splitrom.rom import ReducedOperators, ReducedState, build_bases, assemble_reduced, rom_initialize, run_rom

RESULTS = {}


@contextmanager
def criterion(number, title):
    """Record the outcome of one criterion; ``notes`` collects measured values."""
    notes = []
    try:
        yield notes
    except BaseException:
        RESULTS[number] = f"FAIL  {number:>2}. {title}  {'; '.join(notes)}"
        print(RESULTS[number])
        raise
    RESULTS[number] = f"PASS  {number:>2}. {title}  {'; '.join(notes)}"
    print(RESULTS[number])


# shared runs -------------------------------------------------------------------

CHANNEL = dict(nu=0.01, dt=0.1, t_end=20.0, window=(19.0, 20.0))


@pytest.fixture(scope="module")
def long_channel():
    pb = FlowProblem(generate_channel(4.0, 1.0, 32, 8))
    tic = time.perf_counter()
    res = run_fom(FOMConfig(**CHANNEL), problem=pb, record_qoi=False)
    return pb, res, time.perf_counter() - tic


BIFURCATED = """\
[experiment]
scenario = bifurcated
output = {out}
[mesh]
nx = 32
[flow]
re_train = 400, 500, 600
re_test = 467
length_scale = 0.5
dt = 0.02
t_end = 7.0
window = 5.0, 7.0
[rom]
r = 10
r_curve = 2, 4, 6, 8, 10, 12, 14, 16, 18, 20
"""


@pytest.fixture(scope="module")
def bifurcated(tmp_path_factory):
    """Full pipeline on the desk-scale bifurcated tube; returns (config path, stage outputs)."""
    root = tmp_path_factory.mktemp("bifurcated")
    ini = root / "bifurcated.ini"
    ini.write_text(BIFURCATED.format(out=root / "out"))
    for verb in ("mesh", "fom", "pod", "rom-offline", "rom", "hybrid", "compare", "report"):
        assert cli([verb, "--config", str(ini)]) == 0, verb
    return str(ini), root / "out"


def _summary(out, variant):
    return json.loads((out / "results" / f"{variant}_Re467_summary.json").read_text())


# criteria ------------------------------------------------------------------------

def test_01_poiseuille_steady_state(long_channel):
    with criterion(1, "Poiseuille channel exactness") as notes:
        pb, res, wall = long_channel
        exact = pb.V.interpolate(lambda x, y: (6.0 * y * (1.0 - y), 0.0 * x))
        diff = res.state.u - exact
        err = math.sqrt(diff @ (pb.M @ diff))
        u = FEField(pb.V, res.state.u)
        influx = -outflux(u, pb.mesh.edge_indices(BoundaryLabel.InletDirichlet))
        out = outflux(u)
        notes += [f"L2 error {err:.2e}", f"outflux/influx {out / influx:.6f}", f"{wall:.1f} s"]
        assert err <= 1e-6
        assert abs(out - influx) <= 0.01 * abs(influx)
        assert wall <= 60.0


def test_02_outlet_constant_divergence():
    with criterion(2, "outlet-BC constant-divergence oracle") as notes:
        tic = time.perf_counter()
        pb = FlowProblem(generate_channel(4.0, 1.0, 32, 8))
        nu, c = 0.01, 2.5
        solver = FOMSolver(pb, FOMConfig(nu=nu, dt=0.1, t_end=1.0))
        ut = pb.V.interpolate(lambda x, y: (c * x, 0.0 * y))
        phihat = solver.step2_outlet(ut)
        err = np.abs(phihat + nu * c).max() / (nu * c)
        wall = time.perf_counter() - tic
        notes += [f"max relative error {err:.1e}", f"{wall:.2f} s"]
        assert err <= 1e-8
        assert wall <= 1.0


def test_03_domain_truncation(long_channel):
    with criterion(3, "domain truncation") as notes:
        _, full, t_full = long_channel
        pb = FlowProblem(generate_channel(2.0, 1.0, 16, 8))
        tic = time.perf_counter()
        short = run_fom(FOMConfig(**CHANNEL), problem=pb, record_qoi=False)
        t_short = time.perf_counter() - tic
        ref = section_flux(FEField(long_channel[0].V, full.state.u), 2.0)
        got = outflux(FEField(pb.V, short.state.u))
        notes += [f"flux difference {abs(got - ref) / abs(ref):.2e}", f"time ratio {t_short / t_full:.2f}"]
        assert abs(got - ref) <= 0.01 * abs(ref)
        assert t_short <= 0.75 * t_full


@pytest.fixture(scope="module")
def replay_run():
    pb = FlowProblem(generate_bifurcated_tube(16))
    cfg = FOMConfig(nu=1 / 500, dt=0.02, t_end=3.0, window=(2.0, 3.0))
    return pb, cfg, run_fom(cfg, problem=pb, record_qoi=False).snapshots


def test_04_pod_optimality(replay_run):
    with criterion(4, "POD optimality") as notes:
        tic = time.perf_counter()
        pb = replay_run[0]
        # FE fields with a slowly decaying spectrum so the tails stay above roundoff
        rng = np.random.default_rng(2024)
        m = 40
        worst = 0.0
        for ip in (InnerProduct("L2", pb.M), InnerProduct("H1", pb.H1p)):
            S = rng.standard_normal((ip.gram.shape[0], m)) * (1.0 + np.arange(m)) ** -1.0
            basis = pod(S, ip)
            lam = basis.eigenvalues
            for r in (1, 5, 10):
                b = basis.truncate(r)
                R = S - b.reconstruct(b.project(S))
                residual = np.einsum("im,im->", R, ip.gram @ R)
                worst = max(worst, abs(residual - lam[r:].sum()) / lam[r:].sum())
            orth = basis.orthonormality_error()
            assert orth <= 1e-8
        wall = time.perf_counter() - tic
        notes += [f"worst relative mismatch {worst:.1e}", f"orthonormality {orth:.1e}", f"{wall:.2f} s"]
        assert worst <= 1e-8
        assert wall <= 10.0


def test_05_energy_capture(bifurcated):
    with criterion(5, "energy capture") as notes:
        _, out = bifurcated
        with open(out / "pod" / "eigenvalues.csv") as fh:
            energy = [float(row["energy_u"]) for row in csv.DictReader(fh) if row["energy_u"]]
        r95 = next(k + 1 for k, e in enumerate(energy) if e >= 95.0)
        notes += [f"r(95%) = {r95}", f"r(99%) = {next(k + 1 for k, e in enumerate(energy) if e >= 99.0)}"]
        assert all(b >= a for a, b in zip(energy, energy[1:]))
        assert energy[-1] == pytest.approx(100.0, abs=1e-9)
        assert r95 <= 20


def test_06_full_rank_replay(replay_run):
    with criterion(6, "full-rank ROM replay") as notes:
        tic = time.perf_counter()
        pb, cfg, S = replay_run
        bases = build_bases(pb, S.fields, S.times, cfg)
        ops = assemble_reduced(pb, bases, cfg)
        step0 = int(round(S.times[0] / cfg.dt))
        state = rom_initialize(S["u"][:, 0], S["p"][:, 0], bases, step0, cfg.dt)
        traj = run_rom(state, ops, S.count - 1, cfg.nu)
        err = l2L2_relative_error(S["u"], traj.reconstruct("u", bases), pb.M)
        wall = time.perf_counter() - tic
        notes += [f"l2(L2) error {err:.2e}", f"ranks {ops.dims}", f"{wall:.1f} s"]
        assert err <= 1e-6
        assert wall <= 30.0


def test_07_rbf_exactness(bifurcated):
    with criterion(7, "RBF exactness at training centers") as notes:
        ini, _ = bifurcated
        cfg = load_config(ini)
        ws = Workspace(cfg)
        pb = FlowProblem(generate_bifurcated_tube(cfg.nx))
        bases = select_modes(cfg, _load_bases(ws, cfg, pb))
        fields, times, params = _training_data(ws, cfg)
        tic = time.perf_counter()
        worst = 0.0
        for name in ("phi", "phihat"):
            table = build_training_param_time(fields[name], times, params, bases[name])
            try:
                model = rbf_fit(table, 0.0, "ParamTime")
            except IllConditioned as exc:
                notes.append(f"{name}: {exc}")
                continue
            got = rbf_eval(model, table.centers)
            worst = max(worst, np.abs(got - table.targets).max() / np.abs(table.targets).max())
        wall = time.perf_counter() - tic
        notes += [f"worst relative error {worst:.1e}", f"{len(times)} centers", f"{wall:.2f} s"]
        assert worst <= 1e-8
        assert wall <= 5.0


def test_08_hybrid_intrusive_parity(bifurcated):
    with criterion(8, "hybrid-vs-intrusive parity") as notes:
        _, out = bifurcated
        e_rom = _summary(out, "intrusive")["error_u"]
        e_hyb = _summary(out, "hybrid-param")["error_u"]
        ratio = max(e_rom, e_hyb) / min(e_rom, e_hyb)
        notes += [f"intrusive {e_rom:.2e}", f"hybrid {e_hyb:.2e}", f"ratio {ratio:.2f}"]
        assert e_rom <= 5e-2 and e_hyb <= 5e-2
        assert ratio <= 2.0


def test_09_speed_up(bifurcated):
    with criterion(9, "online speed-up") as notes:
        _, out = bifurcated
        rom, hyb = _summary(out, "intrusive"), _summary(out, "hybrid-param")
        speed = rom["fom_time"] / rom["online_time"]
        notes += [f"intrusive {speed:.0f}x", f"hybrid {hyb['fom_time'] / hyb['online_time']:.0f}x",
                  f"hybrid/intrusive time {hyb['online_time'] / rom['online_time']:.2f}"]
        assert speed >= 100.0
        assert hyb["online_time"] <= 3.0 * rom["online_time"]


def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_10_coefficient_extrapolation():
    """Reduced system whose exact correction is c = a~ and whose update rotates a.

    The orbit has two harmonics and a period of 57.3 steps, so queries never
    coincide with the training centers taken from the first period.
    """
    with criterion(10, "extrapolation on a periodic reduced system") as notes:
        tic = time.perf_counter()
        period, dt, r = 57.3, 0.05, 4
        theta = 2 * math.pi / period
        R = np.zeros((r, r))
        R[:2, :2], R[2:, 2:] = _rotation(theta), _rotation(2 * theta)
        eye, zeros = np.eye(r), np.zeros
        blocks = dict(
            Mt=eye, St=zeros((r, r)), Dt=zeros((r, r, r)), Bt=zeros((r, r)), Mtu=eye, gt_mass=zeros(r),
            gt_stiff=zeros(r), gt_conv=zeros((r, r)), f_t=zeros(r),
            Mh=np.eye(1), Sh=zeros((1, 1)), Rh=zeros((1, r)), rh_g=zeros(1),
            Sphi=eye, Rphi=-dt * eye, rphi_g=zeros(r), Pext=zeros((r, 1)),
            Pp=eye, Qp=zeros((r, r)), Qtp=zeros((r, 1)),
            Mu=eye, Mhat_u=eye, mu_g=zeros(r), Y=(eye - R) / dt, Yt=zeros((r, 1)))
        ops = ReducedOperators(blocks, dt, 0, convection=False)
        ops.validate()
        n_train, n_run = math.ceil(period), int(6 * period)
        orbit = [np.array([1.0, 0.0, 0.3, 0.0])]
        for _ in range(n_train + n_run):
            orbit.append(R @ orbit[-1])
        orbit = np.array(orbit)
        centers = orbit[:n_train]
        model_c = rbf_fit(TrainingTable(centers, centers), 0.0, "CoefExtrapolation")
        model_ch = rbf_fit(TrainingTable(centers, np.zeros((n_train, 1))), 0.0, "CoefExtrapolation")
        prev = orbit[n_train - 1]
        start = ReducedState(orbit[n_train].copy(), prev.copy(), zeros(r), prev.copy(), zeros(1), n_train, dt)
        traj = run_hybrid(start, HybridConfig("CoefExtrapolation", model_c, model_ch, ops, 0.01), n_run)
        ref = orbit[n_train:]
        err = math.sqrt(((traj.coefs["a"] - ref) ** 2).sum() / (ref ** 2).sum())
        wall = time.perf_counter() - tic
        notes += [f"relative error {err:.1e} over {n_run} steps", f"{wall:.2f} s"]
        assert err <= 5e-2
        assert wall <= 60.0


def test_11_error_versus_modes(bifurcated):
    with criterion(11, "error-vs-r curve") as notes:
        _, out = bifurcated
        with open(out / "results" / "error_vs_r.csv") as fh:
            rows = list(csv.DictReader(fh))
        rs = [int(row["r"]) for row in rows]
        errs = [(float(row["error_intrusive"]), float(row["error_hybrid"])) for row in rows]
        notes.append(" ".join(f"r={r}:{a:.1e}/{b:.1e}" for r, (a, b) in zip(rs, errs)))
        assert rs == list(range(2, 21, 2))
        assert all(math.isfinite(a) and math.isfinite(b) for a, b in errs)
        assert "CPU time of FOM and ROMs" in (out / "results" / "report.txt").read_text()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
