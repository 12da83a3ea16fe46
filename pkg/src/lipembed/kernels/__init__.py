"""Hot numeric kernels: batched 2D/3D cross-correlation and 3D max pooling.

Two interchangeable implementations exist: a numba-jitted one
(``conv_numba``) and a pure-numpy one (``conv_numpy``, im2col + BLAS).
Selection happens once at import from the ``LIPEMBED_BACKEND`` environment
variable ("numba" or "numpy"; default numba when importable) and can be
changed at runtime with :func:`set_backend`.

Both backends implement the same contracts; ``benchmarks/bench_kernels.py``
compares them.
"""

import os

from . import conv_numpy

try:
    from . import conv_numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay usable
    conv_numba = None
    _HAVE_NUMBA = False

_BACKENDS = {}
_BACKENDS["numpy"] = conv_numpy
if _HAVE_NUMBA:
    _BACKENDS["numba"] = conv_numba

_active = os.environ.get("LIPEMBED_BACKEND", "numba" if _HAVE_NUMBA else "numpy")
if _active not in _BACKENDS:
    raise RuntimeError(
        f"LIPEMBED_BACKEND={_active!r} not available; choices: {sorted(_BACKENDS)}"
    )


def active_backend():
    """Name of the kernel backend currently in use."""
    return _active


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Switch kernel backend ("numba" or "numpy"). Returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; choices: {sorted(_BACKENDS)}")
    previous = _active
    _active = name
    return previous


def conv2d_forward(x, w, stride, pad):
    return _BACKENDS[_active].conv2d_forward(x, w, stride, pad)


def conv2d_backward(x, w, dy, stride, pad):
    return _BACKENDS[_active].conv2d_backward(x, w, dy, stride, pad)


def conv3d_forward(x, w, stride, pad):
    return _BACKENDS[_active].conv3d_forward(x, w, stride, pad)


def conv3d_backward(x, w, dy, stride, pad):
    return _BACKENDS[_active].conv3d_backward(x, w, dy, stride, pad)


def maxpool3d_forward(x, size, stride, pad):
    return _BACKENDS[_active].maxpool3d_forward(x, size, stride, pad)


def maxpool3d_backward(x_shape, idx, dy):
    return _BACKENDS[_active].maxpool3d_backward(x_shape, idx, dy)
