"""Zentropy-enhanced neural networks: ensembles of shallow energy/entropy networks
combined through configuration probabilities, with tools to fit energy
landscapes and locate their critical points."""

from zenn import _ops  # noqa: F401  (switches jax to float64 before anything traces)

__version__ = "0.1.0"
