"""Dispatched hot kernels (see :mod:`ttalab.backend` for selection)."""

from . import backend

if backend.USE_NUMBA:
    from . import _kernels_nb as _impl
else:
    from . import _kernels_np as _impl

TINY = _impl.TINY

matmul_fixed = _impl.matmul_fixed
row_softmax = _impl.row_softmax
row_logsumexp = _impl.row_logsumexp
row_entropy = _impl.row_entropy
entropy_sum = _impl.entropy_sum
scont_grad_i2t = _impl.scont_grad_i2t
scont_grad_t2i = _impl.scont_grad_t2i
tent_grad = _impl.tent_grad
reg_grad = _impl.reg_grad
hard_grad = _impl.hard_grad
encoder_forward = _impl.encoder_forward
