"""Hot-loop kernels: compiled extension when available, numpy otherwise.

Set ``DROPLETMM_PURE=1`` to force the numpy implementation.
"""

from __future__ import annotations

import importlib
import os
import types

from . import _fallback

BACKEND = "python"
_impl: types.ModuleType = _fallback

if os.environ.get("DROPLETMM_PURE", "") not in ("1", "true", "yes"):
    try:
        _impl = importlib.import_module("dropletmm._kernels")
        BACKEND = "compiled"
    except ImportError:
        pass


def get_backend(name: str) -> types.ModuleType:
    """Kernel module by name: ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _fallback
    if name == "compiled":
        return importlib.import_module("dropletmm._kernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def brute_force_energies(nbr, dir_vals, zero_nbrs, weight, c_h, const):
    return _impl.brute_force_energies(nbr, dir_vals, zero_nbrs, weight, c_h, const)


def green_block(factor, positions):
    return _impl.green_block(factor, positions)
