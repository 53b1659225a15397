"""Kernel backend selection.

The hot kernels (im2col / col2im / depthwise conv) exist twice: a compiled
Cython extension (``recalib.engine._native``) and a numpy fallback
(``recalib.engine.kernels_py``). The compiled version is used when it
imported successfully; set ``RECALIB_BACKEND=python`` to force the fallback
or ``RECALIB_BACKEND=native`` to require the extension.

Both backends implement identical accumulation orders, so results are
bitwise equal; the choice only affects speed (see benchmarks/).
"""

import os

from . import kernels_py

try:
    from . import _native
except ImportError:
    _native = None

_FORCED = os.environ.get("RECALIB_BACKEND", "").strip().lower()
if _FORCED == "native" and _native is None:
    raise ImportError(
        "RECALIB_BACKEND=native but the compiled extension is unavailable; "
        "build it with 'pip install -e . --no-build-isolation'"
    )

_active = kernels_py if (_FORCED == "python" or _native is None) else _native


def backend_name() -> str:
    return "native" if _active is _native else "python"


def native_available() -> bool:
    return _native is not None


def get_kernels(name: str | None = None):
    """Return the kernel module: active one, or 'python'/'native' explicitly."""
    if name is None:
        return _active
    if name == "python":
        return kernels_py
    if name == "native":
        if _native is None:
            raise ValueError("native kernel backend is not built")
        return _native
    raise ValueError(f"unknown backend {name!r}")


def im2col(x, k, stride, padding):
    return _active.im2col(x, k, stride, padding)


def col2im(cols, h, w, k, stride, padding):
    return _active.col2im(cols, h, w, k, stride, padding)


def depthwise_conv2d(x, weight, stride, padding):
    return _active.depthwise_conv2d(x, weight, stride, padding)


def depthwise_conv2d_backward(x, weight, gout, stride, padding):
    return _active.depthwise_conv2d_backward(x, weight, gout, stride, padding)
