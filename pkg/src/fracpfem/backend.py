"""Selection between the compiled sweep extension and its NumPy fallback.

The compiled module is an accelerator only: both backends implement the
same functions with the same pair enumeration, so results agree to
rounding. Set FRACPFEM_BACKEND=compiled|numpy|auto to override.
"""

import os

from . import _core_numpy


def _load_compiled():
    try:
        from . import _core
    except ImportError:
        return None
    return _core


def get_backend(name="auto"):
    """Return the sweep module for `name` ('auto', 'compiled', 'numpy')."""
    if name == "numpy":
        return _core_numpy
    if name == "compiled":
        mod = _load_compiled()
        if mod is None:
            raise RuntimeError("compiled extension fracpfem._core is not available")
        return mod
    if name == "auto":
        mod = _load_compiled()
        return mod if mod is not None else _core_numpy
    raise ValueError("unknown backend %r" % (name,))


def available_backends():
    """Names of the backends importable in this environment."""
    names = ["numpy"]
    if _load_compiled() is not None:
        names.insert(0, "compiled")
    return names


active_backend = get_backend(os.environ.get("FRACPFEM_BACKEND", "auto"))
