"""Flow-assisted bi-path crowd density estimation, desk scale.

Hot kernels (convolution, patch flow solver) run through a compiled extension
when available and fall back to numpy otherwise; `bpcc.backend.BACKEND` says
which one is active.
"""

from bpcc.backend import BACKEND, HAVE_NATIVE

__version__ = "0.1.0"

__all__ = ["BACKEND", "HAVE_NATIVE", "__version__"]
