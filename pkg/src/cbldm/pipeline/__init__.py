"""Orchestration: profiles, checkpoints, I/O, metric, training, prediction, CLI."""
