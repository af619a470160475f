"""Adaptive-multilevel BDDC preconditioning for SPD finite-element systems."""
from .adaptive import AdaptiveConfig, adapt_level, condition_indicator
from .bddc import PreconditionerHierarchy, apply_preconditioner, setup_hierarchy, setup_level
from .driver import RunConfig, SolveReport, emit_report, ingest_external, run, setup
from .errors import AmbddcError
from .krylov import PcgResult, pcg
from .lobpcg import lobpcg

__version__ = "0.1.0"

__all__ = [
    "AdaptiveConfig", "AmbddcError", "PcgResult", "PreconditionerHierarchy", "RunConfig",
    "SolveReport", "adapt_level", "apply_preconditioner", "condition_indicator", "emit_report",
    "ingest_external", "lobpcg", "pcg", "run", "setup", "setup_hierarchy", "setup_level",
]
