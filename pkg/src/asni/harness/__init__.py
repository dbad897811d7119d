"""Experiment presets, orchestration, checkpoints and the command line."""
