"""Ordinal gaze regression with mini-generation distillation and jitter-robust adversarial training."""

__version__ = "0.1.0"
