"""Tabular theory lab: exact DP, representations, latent models and bound checks."""
