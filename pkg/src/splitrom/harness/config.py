"""Experiment configuration: INI-style ``key = value`` file plus command-line overrides."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from ..errors import ConfigError

SCENARIOS = ("channel", "bifurcated", "cylinder-external")
VARIANTS = ("intrusive", "hybrid-param", "hybrid-extrap")
ROM_FIELDS = ("u", "ut", "p", "phi", "phihat")

# (section, key) of every option, with its converter
_SCHEMA = {
    "scenario": ("experiment", str),
    "output": ("experiment", str),
    "seed": ("experiment", int),
    "mesh_path": ("mesh", str),
    "length": ("mesh", float),
    "height": ("mesh", float),
    "nx": ("mesh", int),
    "ny": ("mesh", int),
    "re_train": ("flow", "floats"),
    "re_test": ("flow", "floats"),
    "nu": ("flow", float),
    "u_mean": ("flow", float),
    "length_scale": ("flow", float),
    "dt": ("flow", float),
    "t_end": ("flow", float),
    "window": ("flow", "floats"),
    "stride": ("flow", int),
    "ramp_steps": ("flow", int),
    "convection": ("flow", "bool"),
    "r": ("rom", int),
    "r_u": ("rom", int),
    "r_ut": ("rom", int),
    "r_p": ("rom", int),
    "r_phi": ("rom", int),
    "r_phihat": ("rom", int),
    "energy": ("rom", float),
    "variant": ("rom", str),
    "pairing": ("rom", str),
    "rbf_lambda": ("rom", float),
    "r_curve": ("rom", "ints"),
}


@dataclass
class ExperimentConfig:
    scenario: str = "channel"
    output: str = "out"
    seed: int = 0
    mesh_path: str = ""
    length: float = 4.0
    height: float = 1.0
    nx: int = 32
    ny: int = 8
    re_train: list = field(default_factory=lambda: [100.0])
    re_test: list = field(default_factory=list)
    nu: float = 0.0  # if > 0, overrides u_mean * length_scale / Re for a single run
    u_mean: float = 1.0
    length_scale: float = 1.0
    dt: float = 0.01
    t_end: float = 1.0
    window: list = field(default_factory=list)
    stride: int = 1
    ramp_steps: int = 10
    convection: bool = True
    r: int = 0  # 0: numerical rank (or energy criterion when set)
    r_u: int = 0
    r_ut: int = 0
    r_p: int = 0
    r_phi: int = 0
    r_phihat: int = 0
    energy: float = 0.0  # percent; 0 disables
    variant: str = "intrusive"
    pairing: str = "h1"
    rbf_lambda: float = 0.0
    r_curve: list = field(default_factory=lambda: list(range(2, 21, 2)))

    def viscosity(self, re):
        return self.nu if self.nu > 0 else self.u_mean * self.length_scale / re

    def snapshot_window(self):
        return tuple(self.window) if self.window else (0.0, self.t_end)

    def modes_requested(self):
        """Per-field mode counts; 0 means 'decide from the spectrum'."""
        return {f: getattr(self, f"r_{f}") or self.r for f in ROM_FIELDS}

    def validate(self):
        def bad(key, msg):
            section = _SCHEMA[key][0]
            raise ConfigError(f"[{section}] {key}: {msg}")

        if self.scenario not in SCENARIOS:
            bad("scenario", f"must be one of {SCENARIOS}")
        if self.variant not in VARIANTS:
            bad("variant", f"must be one of {VARIANTS}")
        if self.pairing not in ("h1", "grad"):
            bad("pairing", "must be h1 or grad")
        if self.scenario == "cylinder-external" and not self.mesh_path:
            bad("mesh_path", "an external mesh file is required for this scenario")
        if not self.re_train:
            bad("re_train", "at least one training Reynolds number is required")
        if any(re <= 0 for re in self.re_train + self.re_test):
            bad("re_train", "Reynolds numbers must be positive")
        lo, hi = min(self.re_train), max(self.re_train)
        for re in self.re_test:
            if not lo <= re <= hi:
                bad("re_test", f"query Re {re} lies outside the training range [{lo}, {hi}]")
        if not 0 < self.dt < self.t_end:
            bad("dt", "need 0 < dt < t_end")
        if self.window:
            if len(self.window) != 2 or not 0 <= self.window[0] < self.window[1] <= self.t_end:
                bad("window", "expected t_a, t_b with 0 <= t_a < t_b <= t_end")
        if self.stride < 1:
            bad("stride", "must be >= 1")
        for key in ("r", "r_u", "r_ut", "r_p", "r_phi", "r_phihat"):
            if getattr(self, key) < 0:
                bad(key, "must be >= 0")
        if not 0 <= self.energy <= 100:
            bad("energy", "must be a percentage")
        if self.rbf_lambda < 0:
            bad("rbf_lambda", "must be >= 0")
        if any(r < 1 for r in self.r_curve):
            bad("r_curve", "mode counts must be positive")
        if self.scenario == "channel" and (self.length <= 0 or self.height <= 0):
            bad("length", "channel dimensions must be positive")
        return self

    # stage hashes -----------------------------------------------------------

    def _digest(self, keys, parent=""):
        payload = json.dumps({k: getattr(self, k) for k in keys}, sort_keys=True) + parent
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def hash_flow(self):
        """Everything a full-order run depends on except the Reynolds number."""
        return self._digest(["scenario", "mesh_path", "length", "height", "nx", "ny", "nu", "u_mean",
                             "length_scale", "dt", "t_end", "window", "stride", "ramp_steps",
                             "convection"])

    def hash_run(self, re):
        return self._digest([], f"{self.hash_flow()}:{float(re)!r}")

    def hash_pod(self):
        return self._digest(["re_train"], self.hash_flow())

    def hash_ops(self):
        return self._digest(["r", "r_u", "r_ut", "r_p", "r_phi", "r_phihat", "energy", "pairing",
                             "rbf_lambda"], self.hash_pod())

    def to_dict(self):
        return asdict(self)


def _convert(key, raw):
    kind = _SCHEMA[key][1]
    try:
        if kind == "floats":
            return [float(x) for x in str(raw).replace(",", " ").split()]
        if kind == "ints":
            return [int(x) for x in str(raw).replace(",", " ").split()]
        if kind == "bool":
            low = str(raw).strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        return kind(raw)
    except (TypeError, ValueError):
        section = _SCHEMA[key][0]
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read ``path`` (if given), apply ``overrides`` (key -> raw string or value), validate."""
    values = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                if key not in _SCHEMA:
                    raise ConfigError(f"{path}: [{section}] {key}: unknown option")
                if _SCHEMA[key][0] != section:
                    raise ConfigError(f"{path}: [{section}] {key}: belongs in section [{_SCHEMA[key][0]}]")
                values[key] = _convert(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"unknown option {key}")
        values[key] = _convert(key, raw) if isinstance(raw, str) else raw
    known = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(**{k: v for k, v in values.items() if k in known}).validate()


def option_names():
    return list(_SCHEMA)
