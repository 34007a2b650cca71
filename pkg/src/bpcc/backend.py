"""Kernel backend selection.

The compiled extension is preferred when it was built; otherwise the numpy
fallback is used. Both expose the same functions with the same semantics, so
everything above this module is backend-agnostic. `BACKEND` records which one
won, and run metadata includes it.
"""

try:
    from bpcc import _kernels_c as kernels

    HAVE_NATIVE = True
except ImportError:
    from bpcc import _kernels_np as kernels

    HAVE_NATIVE = False

BACKEND = "native" if HAVE_NATIVE else "numpy"

conv2d_forward = kernels.conv2d_forward
conv2d_backward_x = kernels.conv2d_backward_x
conv2d_backward_w = kernels.conv2d_backward_w
dis_patch_solve = kernels.dis_patch_solve
