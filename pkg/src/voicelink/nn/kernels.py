"""Convolution kernel dispatch.

Two interchangeable implementations exist: a Cython extension with explicit
loops and a numpy formulation that routes each kernel tap through BLAS. On
the shapes this package trains (many frames, 64+ channels) the BLAS path
measures several times faster (see benchmarks/bench_kernels.py), so it is
the default; set VOICELINK_KERNELS=compiled to use the extension instead.
Results agree to floating-point rounding and a single backend is used for
the whole process, keeping runs deterministic.
"""

from __future__ import annotations

import os

from . import _kernels_np

_requested = os.environ.get("VOICELINK_KERNELS", "numpy").lower()

if _requested == "compiled":
    try:
        from . import _convkern as _impl
    except ImportError as exc:
        raise ImportError(
            "VOICELINK_KERNELS=compiled but the Cython extension is not built"
        ) from exc
    BACKEND = "compiled"
elif _requested == "numpy":
    _impl = _kernels_np
    BACKEND = "numpy"
else:
    raise ValueError(f"unknown VOICELINK_KERNELS value {_requested!r}")


def conv1d_fwd(x, w, stride, padding):
    return _impl.conv1d_fwd(x, w, stride, padding)


def conv1d_bwd_x(gy, w, stride, padding, t_in):
    return _impl.conv1d_bwd_x(gy, w, stride, padding, t_in)


def conv1d_bwd_w(gy, x, stride, padding, k):
    return _impl.conv1d_bwd_w(gy, x, stride, padding, k)
