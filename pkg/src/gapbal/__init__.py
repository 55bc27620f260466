"""Loss- and gradient-balancing optimizers for multi-task learning."""

__version__ = "0.1.0"
