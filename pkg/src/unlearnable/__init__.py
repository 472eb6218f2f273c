"""Unlearnable-example noise that survives adversarial training, at desk scale."""

__version__ = "0.1.0"
