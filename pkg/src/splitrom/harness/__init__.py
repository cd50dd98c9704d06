"""Experiment configuration, pipelines and the command-line interface."""

from .config import ExperimentConfig, load_config
from .pipeline import (
    cmd_compare,
    cmd_fom,
    cmd_hybrid,
    cmd_mesh,
    cmd_pod,
    cmd_report,
    cmd_rom,
    cmd_rom_offline,
)

__all__ = ["ExperimentConfig", "load_config", "cmd_compare", "cmd_fom", "cmd_hybrid", "cmd_mesh",
           "cmd_pod", "cmd_report", "cmd_rom", "cmd_rom_offline"]
