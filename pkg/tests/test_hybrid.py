import numpy as np
import pytest

from splitrom.errors import IncompatibleArtifacts, InvalidInput
from splitrom.fom import FOMConfig, FlowProblem, run_fom
from splitrom.hybrid import HybridConfig, HybridStepper, hybrid_step, run_hybrid
from splitrom.mesh import generate_channel
from splitrom.qoi import l2L2_relative_error
from splitrom.rbf import RBFModel, build_training_param_time, rbf_eval, rbf_fit
from splitrom.rom import ROMStepper, assemble_reduced, build_bases, rom_initialize, run_rom


@pytest.fixture(scope="module")
def setup():
    pb = FlowProblem(generate_channel(2.0, 1.0, 8, 4))
    cfg = FOMConfig(nu=0.01, dt=0.02, t_end=0.4, window=(0.1, 0.4), reynolds=100.0)
    snaps = run_fom(cfg, problem=pb).snapshots
    bases = build_bases(pb, snaps.fields, snaps.times, cfg)
    ops = assemble_reduced(pb, bases, cfg)
    params = np.full(snaps.count, 100.0)
    mc, mh = (rbf_fit(build_training_param_time(snaps[f], snaps.times, params, bases[f]))
              for f in ("phi", "phihat"))
    return pb, cfg, snaps, bases, ops, mc, mh


def _zero_model(mode, d, m):
    return RBFModel(mode, np.vstack([np.zeros(d), np.ones(d)]), np.zeros((2, m)), np.zeros(d), np.ones(d))


def test_config_consistency(setup):
    _, cfg, _, _, ops, mc, mh = setup
    with pytest.raises(InvalidInput):
        HybridConfig("ParamTime", mc, mh, ops, cfg.nu)
    with pytest.raises(InvalidInput):
        HybridConfig("Other", mc, mh, ops, cfg.nu, 100.0)
    with pytest.raises(IncompatibleArtifacts):
        HybridConfig("CoefExtrapolation", mc, mh, ops, cfg.nu)
    with pytest.raises(IncompatibleArtifacts):
        HybridConfig("ParamTime", mh, mc, ops, cfg.nu, 100.0)


def test_zero_state_with_zero_models(setup):
    pb, cfg, _, bases, _, _, _ = setup
    quiet = FOMConfig(nu=cfg.nu, dt=cfg.dt, t_end=cfg.t_end, inflow_profile="none")
    ops = assemble_reduced(pb, bases, quiet)
    d = ops.dims
    hc = HybridConfig("CoefExtrapolation", _zero_model("CoefExtrapolation", d["ut"], d["phi"]),
                      _zero_model("CoefExtrapolation", d["ut"], d["phihat"]), ops, cfg.nu)
    zero = rom_initialize(np.zeros(pb.V.dof_count), np.zeros(pb.Q.dof_count), bases, 20, cfg.dt)
    out = hybrid_step(zero, hc)
    for key in ("a", "at", "b", "c", "ch"):
        assert np.all(getattr(out, key) == 0.0)


def test_param_time_reproduces_training_projections(setup):
    _, cfg, snaps, bases, _, mc, mh = setup
    for j in (0, 5, snaps.count - 1):
        z = [snaps.times[j], 100.0]
        for model, name in ((mc, "phi"), (mh, "phihat")):
            ref = bases[name].project(snaps[name][:, j])
            assert np.abs(rbf_eval(model, z) - ref).max() <= 1e-8 * max(1.0, np.abs(ref).max())


def test_param_time_replay_matches_intrusive(setup):
    pb, cfg, snaps, bases, ops, mc, mh = setup
    k0 = int(round(snaps.times[0] / cfg.dt))
    st = rom_initialize(snaps["u"][:, 0], snaps["p"][:, 0], bases, k0, cfg.dt)
    n = snaps.count - 1
    intr = run_rom(st, ops, n, cfg.nu)
    hyb = run_hybrid(st, HybridConfig("ParamTime", mc, mh, ops, cfg.nu, 100.0), n)
    e_i = l2L2_relative_error(snaps["u"], intr.reconstruct("u", bases), pb.M)
    e_h = l2L2_relative_error(snaps["u"], hyb.reconstruct("u", bases), pb.M)
    assert e_h <= 2 * e_i + 1e-12 and e_i <= 2 * e_h + 1e-12
    assert not hyb.extra["extrapolated"]
    assert hyb.extra["solver_time"] > 0 and hyb.extra["rbf_time"] > 0


def test_shared_predictor_and_update(setup, monkeypatch):
    """With the RBF outputs forced to the intrusive corrections both loops coincide bit for bit."""
    _, cfg, snaps, bases, ops, mc, mh = setup
    st = rom_initialize(snaps["u"][:, 0], snaps["p"][:, 0], bases, 5, cfg.dt)
    hc = HybridConfig("ParamTime", mc, mh, ops, cfg.nu, 100.0)
    stepper = HybridStepper(hc)
    pending = {}

    def predict(state, rho, _orig=stepper.rom.predict):
        at = _orig(state, rho)
        pending["ch"] = stepper.rom.outlet(at, rho)
        pending["c"] = stepper.rom.correct(at, pending["ch"], rho)
        return at

    monkeypatch.setattr(stepper.rom, "predict", predict)
    monkeypatch.setattr(stepper, "corrections", lambda z: (pending["c"], pending["ch"]))
    a, b = st, st
    ref = ROMStepper(ops, cfg.nu)
    for _ in range(6):
        a = stepper.step(a)
        b = ref.step(b)
        for key in ("a", "at", "b", "c", "ch"):
            assert np.array_equal(getattr(a, key), getattr(b, key))


def test_zero_steps(setup):
    _, cfg, snaps, bases, ops, mc, mh = setup
    st = rom_initialize(snaps["u"][:, 0], snaps["p"][:, 0], bases, 5, cfg.dt)
    tr = run_hybrid(st, HybridConfig("ParamTime", mc, mh, ops, cfg.nu, 100.0), 0)
    assert np.array_equal(tr.coefs["a"][0], st.a) and len(tr.steps) == 1


def test_extrapolation_is_flagged(setup, caplog):
    _, cfg, snaps, bases, ops, mc, mh = setup
    st = rom_initialize(snaps["u"][:, -1], snaps["p"][:, -1], bases, 20, cfg.dt)
    with caplog.at_level("WARNING"):
        tr = run_hybrid(st, HybridConfig("ParamTime", mc, mh, ops, cfg.nu, 100.0), 3)
    assert tr.extra["extrapolated"]
    assert "outside" in caplog.text
