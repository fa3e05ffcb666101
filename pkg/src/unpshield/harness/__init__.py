"""Experiment harness: configuration, seeded runs, outputs and the CLI."""
