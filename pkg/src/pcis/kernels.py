"""Hot-kernel backend selection.

Imports the compiled Cython extension when present, else the numpy
fallback. `BACKEND` names the active implementation; `get_backend` fetches
a specific one (used by the backend-comparison benchmark).
"""

from __future__ import annotations

from . import _kernels_np

try:
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _kernels_np
    BACKEND = "python"

fps = _impl.fps
threshold_masks = _impl.threshold_masks
nms_keep = _impl.nms_keep


def available_backends() -> list[str]:
    return ["cython", "python"] if BACKEND == "cython" else ["python"]


def get_backend(name: str):
    """Return the kernel module for `name` ('cython' or 'python')."""
    if name == "python":
        return _kernels_np
    if name == "cython":
        if BACKEND != "cython":
            raise ValueError("compiled kernel extension is not available")
        return _impl
    raise ValueError(f"unknown kernel backend {name!r}")
