"""Off-policy agents trained through the construction and projection stages."""
from rgrl.rl.config import Algorithm, PenaltyMode, TrainConfig, benchmark_defaults

__all__ = ["Algorithm", "PenaltyMode", "TrainConfig", "benchmark_defaults"]
