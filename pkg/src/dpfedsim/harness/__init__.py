from .charts import ChartSpec, render_charts
from .config import ConfigValidationError, ExperimentConfig, load_config, parse_config
from .presets import get_preset, preset_names
from .runner import CSV_HEADER, read_metrics, run_experiment
from .summary import final_accuracy, rounds_to_threshold, summarize

__all__ = [
    "CSV_HEADER", "ChartSpec", "ConfigValidationError", "ExperimentConfig", "final_accuracy", "get_preset",
    "load_config", "parse_config", "preset_names", "read_metrics", "render_charts", "rounds_to_threshold", "run_experiment",
    "summarize",
]
