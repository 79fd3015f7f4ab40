"""Seeded compound-hazard district twin: thermal simulation, virtual sensing,
stream fusion, model calibration, affiliation graphs, equity risk and
intervention scoring."""
from .config import PipelineConfig, load_config
from .exceptions import ConfigError, HazardTwinError, MissingArtifactError, NumericalError
from .pipeline import STAGES, run_pipeline, run_stage

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig",
    "load_config",
    "run_stage",
    "run_pipeline",
    "STAGES",
    "HazardTwinError",
    "ConfigError",
    "MissingArtifactError",
    "NumericalError",
]
