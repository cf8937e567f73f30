"""Joint angle-delay CRB and CRB-optimal ISAC transmit beamforming."""

from .errors import (
    ConvergenceError,
    EndfireDegenerateError,
    GeometryError,
    InfeasibleError,
    IsacError,
    UnidentifiableError,
    ValidationError,
)
from .fim import CrbReport, assemble_fim, crb_of, crb_report
from .scenario import Beamformer, CommUser, ScenarioConfig, Target, beampattern
from .scenario_io import load_shipped, parse_scenario

__version__ = "0.1.0"

__all__ = [
    "Beamformer",
    "CommUser",
    "ConvergenceError",
    "CrbReport",
    "EndfireDegenerateError",
    "GeometryError",
    "InfeasibleError",
    "IsacError",
    "ScenarioConfig",
    "Target",
    "UnidentifiableError",
    "ValidationError",
    "assemble_fim",
    "beampattern",
    "crb_of",
    "crb_report",
    "load_shipped",
    "parse_scenario",
]
