"""Exemplar-free continual audio-visual segmentation on a numpy autodiff core."""

__version__ = "0.1.0"
