"""Compiled and numpy kernel backends must agree bit for bit."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vea import _pykernels, kernels

cython = pytest.importorskip("vea._ckernels", reason="compiled extension not built")


@pytest.fixture
def python_backend():
    prev = kernels.set_backend("python")
    yield
    kernels.set_backend(prev)


geometry = st.tuples(
    st.integers(1, 3),  # n
    st.integers(1, 4),  # c
    st.integers(1, 9),  # h
    st.integers(1, 9),  # w
    st.integers(1, 4),  # k
    st.integers(1, 3),  # stride
    st.integers(0, 2),  # pad
)


@settings(max_examples=150, deadline=None)
@given(geometry, st.sampled_from([np.float32, np.float64]), st.integers(0, 2**16))
def test_im2col_col2im_parity(geom, dtype, seed):
    n, c, h, w, k, s, p = geom
    if h + 2 * p < k or w + 2 * p < k:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w)).astype(dtype)
    a, b = cython.im2col(x, k, k, s, p), _pykernels.im2col(x, k, k, s, p)
    assert a.dtype == b.dtype == dtype
    np.testing.assert_array_equal(a, b)
    g = rng.standard_normal(a.shape).astype(dtype)
    np.testing.assert_array_equal(cython.col2im(g, n, c, h, w, k, k, s, p),
                                  _pykernels.col2im(g, n, c, h, w, k, k, s, p))


@settings(max_examples=150, deadline=None)
@given(geometry, st.integers(0, 2**16))
def test_maxpool_parity(geom, seed):
    n, c, h, w, k, s, _ = geom
    p = min(geom[6], k // 2)
    if h + 2 * p < k or w + 2 * p < k:
        return
    rng = np.random.default_rng(seed)
    # coarse values force ties, which both backends must break identically
    x = rng.integers(-3, 3, size=(n, c, h, w)).astype(np.float32)
    out_c, arg_c = cython.maxpool_forward(x, k, s, p)
    out_p, arg_p = _pykernels.maxpool_forward(x, k, s, p)
    np.testing.assert_array_equal(out_c, out_p)
    np.testing.assert_array_equal(arg_c, arg_p)
    g = rng.standard_normal(out_c.shape).astype(np.float32)
    np.testing.assert_array_equal(cython.maxpool_backward(g, arg_c, h, w),
                                  _pykernels.maxpool_backward(g, arg_p, h, w))


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 7, 6))
    cols = kernels.im2col(x, 3, 3, 2, 1)
    y = rng.standard_normal(cols.shape)
    # <im2col(x), y> == <x, col2im(y)>
    assert np.sum(cols * y) == pytest.approx(np.sum(x * kernels.col2im(y, x.shape, 3, 3, 2, 1)), rel=1e-12)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError, match="unknown"):
        kernels.set_backend("fortran")


def test_model_forward_identical_across_backends(python_backend):
    from vea.backbone import VeaConfig, build_vea_resnet18

    x = np.random.default_rng(0).standard_normal((2, 3, 32, 32)).astype(np.float32)
    model = build_vea_resnet18(VeaConfig(10), seed=0)
    py = model.forward(x)
    kernels.set_backend("cython")
    np.testing.assert_array_equal(model.forward(x), py)
