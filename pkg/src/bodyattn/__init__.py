"""Masked-attention transformer encoders over robot embodiment graphs.

The package builds attention masks from body graphs, runs masked attention
through a dense kernel and a sparsity-exploiting kernel with agreement
guarantees, models and counts the FLOPs of both, trains small
behavioral-cloning policies on synthetic locality tasks, and benchmarks the
kernels on CPU.
"""

__version__ = "0.1.0"
