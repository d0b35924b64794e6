"""Experiment harness: synthetic data, file formats, evaluation metrics,
pipeline orchestration, and the command-line interface."""
