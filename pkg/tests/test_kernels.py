import numpy as np
import pytest

from ctn import kernels
from ctn.kernels import interp_matrix

BACKENDS = kernels.available_backends()


def test_compiled_backend_is_built():
    # the package is meant to ship with the Cython extension; fallback only if the build failed
    assert "cython" in BACKENDS
    assert kernels.BACKEND in BACKENDS


@pytest.fixture(params=BACKENDS)
def backend(request):
    return kernels.load_backend(request.param)


def _im2col_loops(x, k, stride, pad):
    c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    out = np.zeros((c * k * k, ho * wo))
    for ci in range(c):
        for ky in range(k):
            for kx in range(k):
                for oy in range(ho):
                    for ox in range(wo):
                        iy, ix = oy * stride + ky - pad, ox * stride + kx - pad
                        if 0 <= iy < h and 0 <= ix < w:
                            out[(ci * k + ky) * k + kx, oy * wo + ox] = x[ci, iy, ix]
    return out


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (1, 1, 0), (5, 1, 2), (3, 1, 0)])
def test_im2col_matches_loops(backend, rng, k, stride, pad):
    x = rng.normal(size=(2, 7, 6))
    np.testing.assert_array_equal(backend.im2col(x, k, stride, pad), _im2col_loops(x, k, stride, pad))


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (1, 1, 0)])
def test_col2im_is_adjoint_of_im2col(backend, rng, k, stride, pad):
    x = rng.normal(size=(2, 7, 7))
    cols = backend.im2col(x, k, stride, pad)
    y = rng.normal(size=cols.shape)
    lhs = np.sum(cols * y)
    rhs = np.sum(x * backend.col2im(y, x.shape, k, stride, pad))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_maxpool_tie_goes_to_first_cell(backend):
    out, idx = backend.maxpool2x2(np.ones((1, 2, 2)))
    assert out[0, 0, 0] == 1.0 and idx[0, 0, 0] == 0
    g = backend.maxpool2x2_backward(np.ones((1, 1, 1)), idx)
    np.testing.assert_array_equal(g, [[[1.0, 0.0], [0.0, 0.0]]])


def test_upsample_backward_is_adjoint(backend, rng):
    x = rng.normal(size=(2, 3, 5))
    y = rng.normal(size=(2, 6, 10))
    assert np.sum(backend.upsample2x(x) * y) == pytest.approx(np.sum(x * backend.upsample2x_backward(y)), rel=1e-12)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="needs both backends")
def test_backends_agree(rng):
    c, p = kernels.load_backend("cython"), kernels.load_backend("python")
    x = rng.normal(size=(3, 8, 10))
    for args in [(3, 1, 1), (3, 2, 1), (1, 1, 0)]:
        np.testing.assert_array_equal(c.im2col(x, *args), p.im2col(x, *args))
        cols = rng.normal(size=c.im2col(x, *args).shape)
        np.testing.assert_array_equal(c.col2im(cols, x.shape, *args), p.col2im(cols, x.shape, *args))
    for a, b in zip(c.maxpool2x2(x), p.maxpool2x2(x)):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(c.upsample2x(x), p.upsample2x(x), rtol=0, atol=1e-13)
    g = rng.normal(size=(3, 16, 20))
    np.testing.assert_allclose(c.upsample2x_backward(g), p.upsample2x_backward(g), rtol=0, atol=1e-13)


def test_interp_matrix_rows_are_convex():
    for n_in, n_out in [(1, 2), (3, 6), (5, 3), (7, 16)]:
        m = interp_matrix(n_in, n_out)
        assert np.all(m >= 0)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-15)


def test_interp_matrix_identity_when_sizes_match():
    np.testing.assert_array_equal(interp_matrix(5, 5), np.eye(5))


@pytest.mark.skipif(len(BACKENDS) < 2, reason="needs both backends")
def test_use_backend_switches_autograd_ops(rng):
    from ctn import autograd as ag
    x = ag.Tensor(rng.normal(size=(2, 6, 6)))
    w, b = ag.Tensor(rng.normal(size=(3, 2, 3, 3))), ag.Tensor(rng.normal(size=3))
    previous = kernels.use_backend("python")
    try:
        assert kernels.BACKEND == "python"
        slow = ag.conv2d(x, w, b, 1, 1).data
    finally:
        kernels.use_backend(previous)
    assert kernels.BACKEND == previous
    np.testing.assert_array_equal(ag.conv2d(x, w, b, 1, 1).data, slow)


def test_pure_python_env_selects_fallback():
    import subprocess
    import sys
    code = "from ctn import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={**__import__("os").environ, "CTN_PURE_PYTHON": "1"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
