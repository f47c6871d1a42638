"""Hot voxel kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it imports; setting
``PORODIFF_PURE=1`` forces the fallback. ``BACKEND`` names the active one.
"""
import os

from . import _pure

if os.environ.get("PORODIFF_PURE", "") not in ("", "0"):
    _core = None
else:
    try:
        from . import _core
    except ImportError:  # extension not built
        _core = None

_impl = _core if _core is not None else _pure
BACKEND = "compiled" if _core is not None else "pure"

edt_sq = _impl.edt_sq
label = _impl.label
watershed = _impl.watershed


def backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"pure": _pure}
    if _core is not None:
        out["compiled"] = _core
    return out
