"""Backend selection for the hot loops (projector and convolution patches).

The compiled extensions ``petrecon._joseph`` and ``petrecon._conv`` are used
when they import; otherwise the numpy implementations in ``petrecon._joseph_py``
and ``petrecon._conv_py`` are used. Setting the environment variable
``PETRECON_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _conv_py, _joseph_py

BACKEND = "python"
_impl = _joseph_py
_conv = _conv_py

if os.environ.get("PETRECON_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _conv as _conv_compiled
        from . import _joseph as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl, _conv = _compiled, _conv_compiled
        BACKEND = "cython"


def joseph_forward(img, cos_t, sin_t, offsets, pixel):
    return _impl.forward(img, cos_t, sin_t, offsets, pixel)


def joseph_adjoint(sino, cos_t, sin_t, offsets, n, pixel):
    return _impl.adjoint(sino, cos_t, sin_t, offsets, n, pixel)


def im2col(x, stride, cols):
    """Fill ``cols`` ``(N*Ho*Wo, 9*C)`` with 3x3 zero-padded patches of NHWC ``x``."""
    _conv.im2col(x, stride, cols)


def col2im(dcols, stride, dx):
    """Accumulate patch gradients ``dcols`` into NHWC ``dx``."""
    _conv.col2im(dcols, stride, dx)


def backends():
    """Mapping of every importable backend name to a ``(projector, conv)`` module pair."""
    found = {"python": (_joseph_py, _conv_py)}
    try:
        from . import _conv as conv
        from . import _joseph as compiled
    except ImportError:
        pass
    else:
        found["cython"] = (compiled, conv)
    return found
