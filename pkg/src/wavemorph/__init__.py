"""Differential morph detection with undecimated wavelet sub-bands.

Pipeline: decompose face images into 48 full-resolution wavelet sub-bands,
rank bands by the KL divergence between bona fide and morph entropy
distributions, train a small Siamese embedding network on the selected
bands, and evaluate with APCER/BPCER/D-EER and DET curves.
"""

__version__ = "0.1.0"

from .errors import WavemorphError  # noqa: F401
