"""Intra-distillation laboratory on small MLPs.

Multi-pass dropout training with an X-divergence consistency penalty and an
adaptive strength schedule, plus parameter-sensitivity measurement and
sensitivity-ordered pruning analyses.
"""
__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
