"""Trajectory benchmarking: registration, synchronization and error analysis."""
__version__ = "0.1.0"
