"""Configuration, data synthesis, experiment runs, export and the command line."""

from .config import ConfigError, ExperimentConfig, preset
from .experiments import run_experiment, synthesize_dataset
from .phantoms import PhantomSpec

__all__ = ["ConfigError", "ExperimentConfig", "PhantomSpec", "preset", "run_experiment",
           "synthesize_dataset"]
