"""Hot loops: edit distance, key-distance matrices and the assignment solver.

The compiled extension is used when it was built; otherwise the pure-Python
module is loaded. Set ``CHARTBENCH_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels as pure

compiled = None
if os.environ.get("CHARTBENCH_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_active = compiled if compiled is not None else pure

BACKEND = "compiled" if compiled is not None else "python"

levenshtein = _active.levenshtein
normalized_levenshtein = _active.normalized_levenshtein
nl_matrix = _active.nl_matrix
solve_lsa = _active.solve_lsa

__all__ = [
    "BACKEND",
    "compiled",
    "levenshtein",
    "nl_matrix",
    "normalized_levenshtein",
    "pure",
    "solve_lsa",
]
