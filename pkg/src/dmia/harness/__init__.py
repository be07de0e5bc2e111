"""Experiment orchestration: configs, checkpoints, CLI verbs, and reports."""

from .config import ExperimentConfig, config_hash, load_config, parse_config, serialize_config

__all__ = ["ExperimentConfig", "config_hash", "load_config", "parse_config", "serialize_config"]
