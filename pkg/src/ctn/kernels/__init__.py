"""Hot data-movement kernels behind the convolution, pooling and upsampling ops.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is loaded. Set ``CTN_PURE_PYTHON=1`` to force the fallback.
"""

import importlib
import os

from ._interp import interp_matrix

__all__ = [
    "BACKEND",
    "available_backends",
    "col2im",
    "im2col",
    "interp_matrix",
    "load_backend",
    "maxpool2x2",
    "maxpool2x2_backward",
    "upsample2x",
    "upsample2x_backward",
    "use_backend",
]

_MODULES = {"cython": "._ckernels", "python": "._pykernels"}


def load_backend(name):
    """Import and return the kernel module named ``"cython"`` or ``"python"``."""
    return importlib.import_module(_MODULES[name], __name__)


def available_backends():
    names = []
    for name in _MODULES:
        try:
            load_backend(name)
        except ImportError:
            continue
        names.append(name)
    return names


def use_backend(name):
    """Rebind the module-level kernels to backend ``name``; returns the previous backend name."""
    global BACKEND, im2col, col2im, maxpool2x2, maxpool2x2_backward, upsample2x, upsample2x_backward
    impl = load_backend(name)
    previous = globals().get("BACKEND")
    BACKEND = impl.NAME
    im2col = impl.im2col
    col2im = impl.col2im
    maxpool2x2 = impl.maxpool2x2
    maxpool2x2_backward = impl.maxpool2x2_backward
    upsample2x = impl.upsample2x
    upsample2x_backward = impl.upsample2x_backward
    return previous


if os.environ.get("CTN_PURE_PYTHON", "") not in ("", "0"):
    use_backend("python")
else:
    try:
        use_backend("cython")
    except ImportError:
        use_backend("python")
