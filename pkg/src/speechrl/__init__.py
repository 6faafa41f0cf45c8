"""Speech-command classification as episodic RL with supervised pre-training."""

__version__ = "0.1.0"
