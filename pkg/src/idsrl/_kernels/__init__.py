"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is preferred. Set ``IDSRL_PURE_PYTHON=1`` before
import to force the fallback. ``BACKEND`` names the active one.
"""

import os

from . import _fallback

RATIO = _fallback.RATIO
ADDITIVE = _fallback.ADDITIVE

_compiled = None
if os.environ.get("IDSRL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _compiled
    except ImportError:  # extension not built
        _compiled = None

if _compiled is not None:
    BACKEND = "cython"
    project_categorical = _compiled.project_categorical
    ids_scores = _compiled.ids_scores
else:
    BACKEND = "python"
    project_categorical = _fallback.project_categorical
    ids_scores = _fallback.ids_scores


def backends():
    """Return ``{name: module}`` for every importable backend."""
    found = {"python": _fallback}
    if _compiled is not None:
        found["cython"] = _compiled
    else:
        try:
            from . import _core

            found["cython"] = _core
        except ImportError:
            pass
    return found
