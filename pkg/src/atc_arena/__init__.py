"""Air traffic conflict scenarios, tool-using agents and outcome scoring."""

from .conflict import SeparationStandard, classify_outcome, cpa, detect_conflicts, tlos
from .scenarios import Scenario, build_dataset, generate
from .sim import AircraftState, Command, World, parse_command

__version__ = "0.1.0"

__all__ = [
    "AircraftState",
    "Command",
    "Scenario",
    "SeparationStandard",
    "World",
    "build_dataset",
    "classify_outcome",
    "cpa",
    "detect_conflicts",
    "generate",
    "parse_command",
    "tlos",
]
