"""Local unary-pairwise attention for 3D point clouds.

A self-contained NumPy stack: a tape-based autodiff core, exact spatial
search (compiled grid kernel with a kd-tree fallback), global and local
attention operators with two-branch neighbor scoring, a small
sample-group-pool backbone, attention-map similarity analysis, and a
training/benchmark harness behind the ``upa`` CLI.
"""

from . import analysis, attention, autodiff, backbone, geometry, harness, kernels
from .autodiff import Tape, Tensor, backward, zero_grad

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "analysis", "attention", "autodiff", "backbone",
    "backward", "geometry", "harness", "kernels", "zero_grad", "__version__",
]
