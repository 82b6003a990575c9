"""PPO, PPO-AMBER and dimension-wise clipped PPO (DISC) on synthetic control tasks."""

__version__ = "0.1.0"
