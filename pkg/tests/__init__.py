"""Tests for crown generation, ray tracing, channel statistics and sweeps."""
