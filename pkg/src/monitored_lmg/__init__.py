"""Monitored Lipkin-Meshkov-Glick model: finite-N trajectories, Lindblad averages and semiclassical SDEs."""

__version__ = "0.1.0"
