"""Experiment configuration, orchestration, tuning and reporting."""

from .config import ExperimentConfig, ModelSpec, SearchConfig, load_config
from .pipeline import run_pipeline, run_search
from .report import aggregate_seeds, markdown_table, merge_reports, render_report
from .search import Trial, random_search, sample_params

__all__ = [name for name in dir() if not name.startswith("_")]
