"""Lineage detection for fine-tuned neural networks.

Library + CLI that builds model zoos with known ground-truth lineage,
scores child models against candidate parents with learning-free
linearized-similarity metrics, and trains a transformer-based lineage
detector.
"""

__version__ = "0.1.0"
