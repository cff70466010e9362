"""Backend selection for the two tree kernels.

The compiled extension is preferred; set ``SCOTKIT_KERNELS=python`` to force
the numpy fallback. Both backends take and return C-contiguous float64 arrays.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SCOTKIT_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def project_children(values, coef, impl=None):
    """Weighted reduction of each parent's children block.

    ``values`` has one row per child node (children of a parent are contiguous),
    ``coef`` has one row per branch; returns ``(J, n_parents, F)``.
    """
    impl = impl or _impl
    values = np.ascontiguousarray(values, dtype=np.float64)
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    return impl.project_children(values, coef)


def lift_children(comps, basis, impl=None):
    """Inverse direction of :func:`project_children`: per-parent coefficients
    combined with per-branch basis values, one output row per child node."""
    impl = impl or _impl
    comps = np.ascontiguousarray(comps, dtype=np.float64)
    basis = np.ascontiguousarray(basis, dtype=np.float64)
    return impl.lift_children(comps, basis)
