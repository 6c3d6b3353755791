"""Learning and model-predictive manipulation of wheeled legged objects."""

__version__ = "0.1.0"
