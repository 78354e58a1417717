"""Hot-kernel backend selection.

The compiled extension is preferred when importable; the pure NumPy
fallback is semantically identical (and bit-identical on float outputs).
Set RETROQUERY_KERNELS=pure|compiled to force a backend.
"""

from __future__ import annotations

import os

_choice = os.environ.get("RETROQUERY_KERNELS", "auto")

if _choice == "pure":
    from . import _pure as _impl
elif _choice == "compiled":
    from . import _core as _impl  # type: ignore[no-redef]
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        from . import _pure as _impl  # type: ignore[no-redef]

BACKEND = _impl.BACKEND
erode = _impl.erode
dilate = _impl.dilate
label_components = _impl.label_components
dog_extrema = _impl.dog_extrema
orientation_hist = _impl.orientation_hist
descriptors = _impl.descriptors

__all__ = [
    "BACKEND",
    "erode",
    "dilate",
    "label_components",
    "dog_extrema",
    "orientation_hist",
    "descriptors",
]
