"""Backend selection for the numeric kernels.

The compiled extension is preferred when importable; otherwise the NumPy
reference implementation is used.  Set HECA_KERNEL=python (or =compiled) to
force a choice — forcing "compiled" raises if the extension is missing, so
benchmarks cannot silently compare a backend against itself.
"""

import os

from . import _reference

_forced = os.environ.get("HECA_KERNEL", "").strip().lower()

if _forced == "python":
    _impl = _reference
elif _forced == "compiled":
    from . import _compiled as _impl
elif _forced:
    raise ImportError(f"HECA_KERNEL must be 'compiled' or 'python', got {_forced!r}")
else:
    try:
        from . import _compiled as _impl
    except ImportError:
        _impl = _reference

BACKEND = _impl.BACKEND
DEFAULT_TOL = _reference.DEFAULT_TOL
PIVOT_THRESHOLD = _reference.PIVOT_THRESHOLD

qp_shrink_simplex = _impl.qp_shrink_simplex
best_subset_block = _impl.best_subset_block

# Pure-Python helpers shared by both backends.
colex_rank = _reference.colex_rank
colex_unrank = _reference.colex_unrank
kkt_residual = _reference.kkt_residual


def get_backend(name=None):
    """Return the kernel module for ``name`` (None = the active backend)."""
    if name is None:
        return _impl
    if name == "python":
        return _reference
    if name == "compiled":
        from . import _compiled
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")
