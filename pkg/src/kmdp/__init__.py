"""Kernelized episodic reinforcement learning: GP-UCRL, PSRL and their supporting machinery."""

__version__ = "0.1.0"
