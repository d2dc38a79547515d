"""Desk-scale laboratory for contrastive test-time adaptation objectives.

A surrogate vision-language model (fixed class prototypes, tiny adaptable
encoder) hosts a family of batch-level adaptation losses with analytic
gradients, a confident memory, an online adaptation engine, synthetic
stream generation, and the evaluation metrics to study collapse dynamics
and ID/OOD separation.
"""

__version__ = "0.1.0"

from .backend import BACKEND, USE_NUMBA  # noqa: F401
