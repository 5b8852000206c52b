"""Conv2d kernel backends.

The compiled Cython extension is preferred when importable; otherwise the
numpy implementation is used.  `AUSWAP_CONV_BACKEND` overrides the choice
("compiled", "numpy", or the default "auto").  Both backends share one
contract and agree to float64 rounding; `benchmarks/bench_conv.py` compares
their throughput.
"""

import os

from . import numpy_backend

_requested = os.environ.get("AUSWAP_CONV_BACKEND", "auto").lower()

_compiled = None
if _requested in ("auto", "compiled"):
    try:
        from . import _convkern as _compiled  # type: ignore[attr-defined]
    except ImportError:
        if _requested == "compiled":
            raise
        _compiled = None
elif _requested != "numpy":
    raise ValueError(f"unknown AUSWAP_CONV_BACKEND {_requested!r}")

if _compiled is not None:
    BACKEND = "compiled"
    _impl = _compiled
else:
    BACKEND = "numpy"
    _impl = numpy_backend

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight
out_size = numpy_backend.out_size

__all__ = [
    "BACKEND",
    "conv2d_forward",
    "conv2d_grad_input",
    "conv2d_grad_weight",
    "out_size",
]
