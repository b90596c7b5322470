"""Typed data containers and configuration models."""
