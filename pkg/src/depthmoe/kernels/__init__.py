"""Kernel backend selection.

Two interchangeable backends implement the hot-loop primitives:

* ``compiled`` — the Cython extension ``depthmoe.kernels._core`` (built at
  install time when Cython and a C compiler are available),
* ``numpy``   — the pure-Python/numpy fallback ``depthmoe.kernels._numpy``.

Selection happens once at import: the compiled module if importable,
otherwise numpy. Override with the ``DEPTHMOE_KERNELS`` environment variable
(``auto`` | ``compiled`` | ``numpy``) or at runtime with ``set_backend``,
which tests and the kernel benchmark use to compare both paths.

Backends agree to floating-point rounding (summation order differs), not
bit-for-bit; anything that pins exact values pins one backend explicitly.
"""

import os

from . import _numpy

try:
    from . import _core
except ImportError:
    _core = None

_active = None


def available_backends():
    names = ["numpy"]
    if _core is not None:
        names.append("compiled")
    return names


def set_backend(which: str):
    """Select a backend by name ('auto', 'compiled', 'numpy'). Returns it."""
    global _active
    if which == "auto":
        _active = _core if _core is not None else _numpy
    elif which == "compiled":
        if _core is None:
            raise RuntimeError("compiled kernels are not available (extension not built)")
        _active = _core
    elif which == "numpy":
        _active = _numpy
    else:
        raise ValueError(f"unknown kernel backend: {which!r}")
    return _active


def get_backend():
    return _active


def backend_name() -> str:
    return _active.name


set_backend(os.environ.get("DEPTHMOE_KERNELS", "auto"))
