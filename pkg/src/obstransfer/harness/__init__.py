"""Experiment configuration, multi-seed suites and the command line."""
