"""Hybrid reduced model: intrusive predictor and update, RBF pressure corrections."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .errors import IncompatibleArtifacts, InvalidInput
from .rbf import RBFModel, rbf_eval
from .rom import ReducedOperators, ReducedState, ROMStepper, Trajectory, _run

log = logging.getLogger(__name__)


@dataclass
class HybridConfig:
    mode: str  # "ParamTime" or "CoefExtrapolation"
    model_c: RBFModel
    model_ch: RBFModel
    ops: ReducedOperators
    nu: float
    mu_star: float | None = None

    def __post_init__(self):
        if self.mode not in ("ParamTime", "CoefExtrapolation"):
            raise InvalidInput(f"unknown hybrid mode {self.mode!r}")
        if (self.mode == "ParamTime") != (self.mu_star is not None):
            raise InvalidInput("a query parameter is required exactly in ParamTime mode")
        for m in (self.model_c, self.model_ch):
            if m.mode != self.mode:
                raise IncompatibleArtifacts(f"RBF model was fitted in {m.mode} mode")
        d = self.ops.dims
        if self.model_c.n_out != d["phi"] or self.model_ch.n_out != d["phihat"]:
            raise IncompatibleArtifacts("RBF outputs do not match the correction bases")
        if self.mode == "CoefExtrapolation" and self.model_c.dim != d["ut"]:
            raise IncompatibleArtifacts("RBF centers do not match the predicted-velocity basis")


class HybridStepper:
    def __init__(self, cfg: HybridConfig):
        self.cfg = cfg
        self.rom = ROMStepper(cfg.ops, cfg.nu)
        self.solver_time = 0.0
        self.rbf_time = 0.0
        self.extrapolated = False

    def query(self, state_step, at):
        cfg = self.cfg
        if cfg.mode == "ParamTime":
            return np.array([state_step * cfg.ops.dt, cfg.mu_star])
        return at

    def corrections(self, z):
        cfg = self.cfg
        if not self.extrapolated and not cfg.model_c.in_range(z):
            self.extrapolated = True
            log.warning("hybrid query %s lies outside the RBF training range", np.round(z, 6))
        return rbf_eval(cfg.model_c, z), rbf_eval(cfg.model_ch, z)

    def step(self, state: ReducedState):
        k = state.step + 1
        rho = self.cfg.ops.ramp(k)
        t0 = time.perf_counter()
        at = self.rom.predict(state, rho)
        t1 = time.perf_counter()
        c, ch = self.corrections(self.query(k, at))
        t2 = time.perf_counter()
        a, b = self.rom.update(state, at, c, ch, rho)
        t3 = time.perf_counter()
        self.solver_time += (t1 - t0) + (t3 - t2)
        self.rbf_time += t2 - t1
        return ReducedState(a, at, b, c, ch, k, self.rom.dt)


def hybrid_step(state: ReducedState, cfg: HybridConfig, stepper: HybridStepper | None = None):
    return (stepper or HybridStepper(cfg)).step(state)


def run_hybrid(initial: ReducedState, cfg: HybridConfig, n_steps) -> Trajectory:
    """Hybrid online loop; ``extra`` holds solver/RBF time split and the extrapolation flag."""
    state = initial.copy()
    state.dt = cfg.ops.dt
    stepper = HybridStepper(cfg)
    traj = _run(state, n_steps, stepper.step)
    traj.extra.update(solver_time=stepper.solver_time, rbf_time=stepper.rbf_time,
                      extrapolated=stepper.extrapolated, mode=cfg.mode)
    return traj
