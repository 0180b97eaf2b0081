"""Graph-neural-network guided greedy motion planning with classical baselines."""

__version__ = "0.1.0"
