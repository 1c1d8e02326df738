"""Reinforcement-learning maintenance planning for flexible pavements."""

__version__ = "0.1.0"
