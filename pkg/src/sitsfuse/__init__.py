"""Multimodal satellite image time series fusion at desk scale.

A small, fully testable stack: a synthetic dataset generator, mask-aware
temporal-attention encoders, four fusion schemes with training enhancements,
exact evaluation metrics, and training diagnostics, all driven from a CLI.
"""

__version__ = "0.1.0"

MODALITY_NAMES = ("S2", "S1A", "S1D")
