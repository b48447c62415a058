"""Domain-constrained adversarial attacks on a DQN flow classifier."""

__version__ = "0.1.0"
