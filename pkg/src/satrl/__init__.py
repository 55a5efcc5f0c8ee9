"""Reinforcement-learning workbench for small-satellite attitude control."""

__version__ = "0.1.0"
