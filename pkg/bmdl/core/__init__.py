"""Samplers, model density, chain runner and evaluation harness."""
