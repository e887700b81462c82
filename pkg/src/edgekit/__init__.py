"""Desk-scale edge detection toolkit.

A from-scratch reverse-mode autodiff core, a compact edge network with
two feature-fusion stages, the weighted/focal/dynamic-focal loss family,
a boundary benchmark (NMS thinning, tolerance matching, ODS/OIS), a
deterministic synthetic dataset generator, and an SGD trainer.
"""

from edgekit.tensor import Tensor, backward, grad_check

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "grad_check", "__version__"]
