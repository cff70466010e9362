import numpy as np
from hypothesis import given, strategies as st

from scotkit import _pykernels, kernels

try:
    from scotkit import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None

import pytest

needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


@needs_c
@given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 4), st.integers(1, 4),
       st.integers(0, 2**31 - 1))
def test_backends_agree(B, P, F, J, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=(P * B, F))
    coef = rng.normal(size=(B, J))
    a = kernels.project_children(vals, coef, impl=_pykernels)
    b = kernels.project_children(vals, coef, impl=_ckernels)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)
    comps = rng.normal(size=(J, P, F))
    basis = rng.normal(size=(B, J))
    a = kernels.lift_children(comps, basis, impl=_pykernels)
    b = kernels.lift_children(comps, basis, impl=_ckernels)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


def test_reference_values():
    # two parents, two children each, weights (1/2, 1/2) and (1/2, -1/2)
    vals = np.array([[2.0], [4.0], [1.0], [-1.0]])
    coef = np.array([[0.5, 0.5], [0.5, -0.5]])
    out = kernels.project_children(vals, coef)
    np.testing.assert_allclose(out[:, :, 0], [[3.0, 0.0], [-1.0, 1.0]])
    back = kernels.lift_children(out, np.array([[1.0, 1.0], [1.0, -1.0]]))
    np.testing.assert_allclose(back, vals)


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
