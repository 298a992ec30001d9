"""Kernel backend selection.

The chain recursions (forward, backward, transition expectations, path
sampling) exist twice: a Cython extension (``_core``) and a numpy reference
(``python``).  The compiled backend is used when importable; set
``ICECHRON_KERNELS=python`` or ``ICECHRON_KERNELS=compiled`` to force one.
Both expose the same functions and produce identical results for identical
inputs, so everything above this package is backend-agnostic.
"""

from __future__ import annotations

import os
import warnings

from . import python as _python_backend

try:
    from . import _core as _compiled_backend
except ImportError:  # pragma: no cover - build env dependent
    _compiled_backend = None


def available_backends():
    """Name -> module map of importable kernel backends."""
    found = {"python": _python_backend}
    if _compiled_backend is not None:
        found["compiled"] = _compiled_backend
    return found


def get_backend(name):
    """Look up a kernel backend by name, raising on unknown/unbuilt ones."""
    try:
        return available_backends()[name]
    except KeyError:
        raise ValueError(
            f"kernel backend {name!r} not available; "
            f"choose from {sorted(available_backends())}"
        ) from None


def _select():
    requested = os.environ.get("ICECHRON_KERNELS")
    if requested:
        return get_backend(requested)
    if _compiled_backend is None:
        warnings.warn(
            "compiled kernels unavailable; using the numpy fallback "
            "(correct, but slower on large state spaces)"
        )
        return _python_backend
    return _compiled_backend


kernels = _select()
KERNEL_BACKEND = kernels.BACKEND_NAME
