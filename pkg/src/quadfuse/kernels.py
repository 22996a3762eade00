"""Kernel backend selection.

The compiled extension is used when importable; set ``QUADFUSE_KERNELS=python``
to force the pure-Python fallback (handy for parity tests and benchmarks).
"""
import os

from . import _pykernels as python_backend

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and os.environ.get("QUADFUSE_KERNELS", "").lower() != "python":
    _impl = compiled_backend
    BACKEND = "cython"
else:
    _impl = python_backend
    BACKEND = "python"

xoshiro_fill_u64 = _impl.xoshiro_fill_u64
xoshiro_fill_uniform = _impl.xoshiro_fill_uniform
equalize_u8 = _impl.equalize_u8
warp_bilinear = _impl.warp_bilinear
