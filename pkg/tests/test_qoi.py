import numpy as np
import pytest

from splitrom.errors import DimensionMismatch, InvalidGeometry
from splitrom.fem import DofMap, FEField
from splitrom.fom import FOMConfig, FlowProblem, run_fom
from splitrom.mesh import BoundaryLabel, generate_bifurcated_tube, generate_channel, generate_obstacle_channel
from splitrom.qoi import (
    BoundaryTrace,
    DragLift,
    FlowOutputs,
    QoISeries,
    charge_drop,
    kinetic_energy,
    l2L2_relative_error,
    outflux,
    qoi_relative_error_L2time,
    section_flux,
)


def vec(dm, fx, fy):
    return FEField(dm, dm.interpolate(lambda x, y: (fx(x, y) + 0 * x, fy(x, y) + 0 * x)))


def test_kinetic_energy():
    m = generate_channel(1.0, 1.0, 2, 2)
    V = DofMap(m, "P2vec")
    assert kinetic_energy(FEField(V, np.zeros(V.dof_count))) == 0.0
    u = vec(V, lambda x, y: 1.0, lambda x, y: 0.0)
    assert kinetic_energy(u) == pytest.approx(0.5, abs=1e-10)
    assert kinetic_energy(FEField(V, 2 * u.values)) == pytest.approx(4 * kinetic_energy(u), rel=1e-12)


def test_outflux_per_segment():
    m = generate_bifurcated_tube(16)
    V = DofMap(m, "P2vec")
    segs = m.boundary_segments(BoundaryLabel.Outlet)
    u = vec(V, lambda x, y: 1.0, lambda x, y: 0.0)
    fluxes = sorted(outflux(u, s) for s in segs)
    assert fluxes == pytest.approx([0.3, 0.4], abs=1e-10)
    assert outflux(u) == pytest.approx(0.7, abs=1e-10)
    tangential = vec(V, lambda x, y: 0.0, lambda x, y: 1.0)
    assert abs(outflux(tangential)) <= 1e-12


def test_outflux_needs_edges():
    m = generate_channel(1.0, 1.0, 2, 2)
    with pytest.raises(InvalidGeometry):
        outflux(FEField(DofMap(m, "P2vec"), np.zeros(DofMap(m, "P2vec").dof_count)), [])


def _traces(m, V, Q):
    inl = m.edge_indices(BoundaryLabel.InletDirichlet)
    out = m.edge_indices(BoundaryLabel.Outlet)
    return BoundaryTrace(V, inl), BoundaryTrace(V, out), BoundaryTrace(Q, inl), BoundaryTrace(Q, out)


def test_charge_drop_constant_pressure():
    m = generate_channel(2.0, 1.0, 4, 2)
    V, Q = DofMap(m, "P2vec"), DofMap(m, "P1")
    u = np.zeros(V.dof_count)
    assert charge_drop(u, np.full(Q.dof_count, 3.0), *_traces(m, V, Q)) == pytest.approx(0.0, abs=1e-12)
    b = generate_bifurcated_tube(16)
    Vb, Qb = DofMap(b, "P2vec"), DofMap(b, "P1")
    inl = b.edge_indices(BoundaryLabel.InletDirichlet)
    seg = b.boundary_segments(BoundaryLabel.Outlet)[0]  # lower branch, length 0.4
    cd = charge_drop(np.zeros(Vb.dof_count), np.full(Qb.dof_count, 3.0), BoundaryTrace(Vb, inl),
                     BoundaryTrace(Vb, seg), BoundaryTrace(Qb, inl), BoundaryTrace(Qb, seg))
    assert cd == pytest.approx(3.0 * (0.5 - 0.4), abs=1e-12)


def test_charge_drop_symmetric_state():
    m = generate_channel(2.0, 1.0, 4, 4)
    V, Q = DofMap(m, "P2vec"), DofMap(m, "P1")
    u = V.interpolate(lambda x, y: (y * (1 - y), 0 * x))
    assert abs(charge_drop(u, np.full(Q.dof_count, 1.5), *_traces(m, V, Q))) <= 1e-10


def test_charge_drop_manufactured():
    m = generate_channel(2.0, 1.0, 4, 4)
    V, Q = DofMap(m, "P2vec"), DofMap(m, "P1")
    u = V.interpolate(lambda x, y: (1 + x * y, 0 * x))
    p = Q.interpolate(lambda x, y: 2 - x + y)
    # 0.5 (1 - 13/3) + (5/2 - 1/2)
    assert charge_drop(u, p, *_traces(m, V, Q)) == pytest.approx(1.0 / 3.0, abs=1e-8)


def test_section_flux_matches_outlet():
    m = generate_channel(2.0, 1.0, 8, 4)
    V = DofMap(m, "P2vec")
    u = vec(V, lambda x, y: 6 * y * (1 - y), lambda x, y: 0.0)
    assert section_flux(u, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert section_flux(u, 1.0) == pytest.approx(outflux(u), abs=1e-12)
    with pytest.raises(InvalidGeometry):
        section_flux(u, 0.3)


@pytest.fixture(scope="module")
def obstacle():
    m = generate_obstacle_channel(2.2, 0.4, (0.15, 0.25, 0.15, 0.25), 44, 8)
    return FlowProblem(m)


def test_drag_lift_trivial_states(obstacle):
    pb = obstacle
    dl = DragLift(pb.V, pb.Q, nu=0.01)
    zero_u, zero_p = np.zeros(pb.V.dof_count), np.zeros(pb.Q.dof_count)
    assert dl(zero_u, zero_u, zero_p, 0.1) == (0.0, 0.0)
    cd, cl = dl(zero_u, zero_u, np.full(pb.Q.dof_count, 2.0), 0.1)
    # a constant pressure exerts no net force on a closed body
    assert abs(cd) <= 1e-8 and abs(cl) <= 1e-8


def test_drag_lift_symmetric_stokes_flow(obstacle):
    cfg = FOMConfig(nu=0.05, dt=0.05, t_end=1.0, convection=False, diameter=0.1)
    q = run_fom(cfg, problem=obstacle).qoi
    cd, cl = q["C_D"][-1], q["C_L"][-1]
    assert cd > 0
    assert abs(cl) <= 1e-3 * abs(cd)


def test_drag_lift_need_body(small_problem):
    with pytest.raises(InvalidGeometry):
        DragLift(small_problem.V, small_problem.Q, nu=0.01)


def test_flow_outputs_channels(small_problem, obstacle):
    names = set(FlowOutputs(small_problem.V, small_problem.Q, 0.01)(
        np.zeros(small_problem.V.dof_count), np.zeros(small_problem.Q.dof_count)))
    assert names == {"E_kin", "Q_outflux", "CD_charge"}
    bif = FlowProblem(generate_bifurcated_tube(16))
    names = set(FlowOutputs(bif.V, bif.Q, 0.01)(np.zeros(bif.V.dof_count), np.zeros(bif.Q.dof_count)))
    assert names == {"E_kin", "Q_outflux_1", "Q_outflux_2", "CD_charge_1", "CD_charge_2"}
    names = set(FlowOutputs(obstacle.V, obstacle.Q, 0.01)(np.zeros(obstacle.V.dof_count),
                                                         np.zeros(obstacle.Q.dof_count)))
    assert {"C_D", "C_L"} <= names


def test_l2L2_error(rng):
    G = np.diag(rng.uniform(1, 2, 6))
    a = rng.standard_normal((6, 4))
    assert l2L2_relative_error(a, a, G) == 0.0
    assert l2L2_relative_error(a, np.zeros_like(a), G) == pytest.approx(1.0)
    assert l2L2_relative_error(a, 0.99 * a, G) == pytest.approx(0.01, abs=1e-12)
    with pytest.raises(DimensionMismatch):
        l2L2_relative_error(a, a[:, :3], G)


def test_qoi_time_error():
    t = np.linspace(0, 1, 11)
    assert qoi_relative_error_L2time(t, np.sin(t), np.sin(t)) == 0.0
    assert qoi_relative_error_L2time(t, 2 * np.ones(11), np.ones(11)) == pytest.approx(0.5)
    delta = 0.3
    t = np.linspace(0, 2 * np.pi, 2001)
    err = qoi_relative_error_L2time(t, np.sin(t), np.sin(t + delta))
    assert err == pytest.approx(2 * abs(np.sin(delta / 2)), rel=1e-6)
    with pytest.raises(DimensionMismatch):
        qoi_relative_error_L2time(t, np.sin(t), np.sin(t[:-1]))


def test_series_csv_round_trip(tmp_path):
    s = QoISeries()
    s.append(0.1, {"E_kin": 1.0 / 3.0, "Q_outflux": 2.0})
    s.append(0.2, {"E_kin": 0.5, "Q_outflux": np.pi})
    s.to_csv(tmp_path / "q.csv", extra={"mode": "intrusive"})
    header = (tmp_path / "q.csv").read_text().splitlines()[0]
    assert header == "t,E_kin,Q_outflux,mode"
    back = QoISeries.from_csv(tmp_path / "q.csv")
    assert np.array_equal(back.t, s.t) and np.array_equal(back["Q_outflux"], s["Q_outflux"])
    with pytest.raises(DimensionMismatch):
        s.append(0.2, {"E_kin": 0.0, "Q_outflux": 0.0})
