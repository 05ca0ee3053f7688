"""Run configuration, single realizations and seeded sweeps."""
