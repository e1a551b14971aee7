"""Benchmark harness: synthetic experiment configs, data generation,
the end-to-end pipeline runner, and the command line interface."""
