"""Evolving gate-network agents that learn scrambled action mappings while
navigating random mazes, with feedback gates doing lifetime learning."""

__version__ = "0.1.0"
