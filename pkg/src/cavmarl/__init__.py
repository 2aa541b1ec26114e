"""Multi-agent reinforcement learning for connected vehicles at an unsignalized intersection."""

__version__ = "0.1.0"
