"""Desk-scale numerics for one-dimensional defocusing NLS Gibbs measures."""

from .spectral import TorusField, TorusGrid, make_grid
from .measures import Ensemble, GibbsSpec
from .config import ExperimentConfig, load_config, parse_config
from .harness import RunArtifact, emit_plots, max_tail_bound, run

__all__ = [
    "TorusField", "TorusGrid", "make_grid", "Ensemble", "GibbsSpec",
    "ExperimentConfig", "load_config", "parse_config", "RunArtifact", "emit_plots",
    "max_tail_bound", "run",
]
__version__ = "0.1.0"
