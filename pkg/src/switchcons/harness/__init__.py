"""Experiment configuration, orchestration and persistence."""
from .config import ConfigError, ExperimentConfig, list_presets, load_config
from .runner import ExperimentError, ExperimentResult, emit_plotdata, run_experiment, sweep, sweep_table
