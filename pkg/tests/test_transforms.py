import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ngmca.transforms import (
    FILTERS,
    Convolution,
    ConvolutionKernel,
    Identity,
    MatrixOperator,
    OrthoWavelet,
    UndecimatedWavelet,
    conv_adjoint,
    conv_apply,
    make_transform,
    odwt_forward,
    odwt_inverse,
    operator_norm,
    udwt_adjoint,
    udwt_forward,
)


def all_operators(n=64):
    return [
        Identity(n),
        OrthoWavelet(n, "symmlet4", 3),
        OrthoWavelet(n, "daubechies4", 2),
        OrthoWavelet(n, "haar", 1),
        UndecimatedWavelet(n, "symmlet4", 3),
        UndecimatedWavelet(n, "haar", 2),
        Convolution(n, ConvolutionKernel(fwhm=4.0)),
        Convolution(n, ConvolutionKernel(shape="delta")),
    ]


@pytest.mark.parametrize("name", sorted(FILTERS))
def test_filters_are_orthonormal(name):
    h = FILTERS[name]
    assert np.isclose(h.sum(), np.sqrt(2.0), atol=1e-12)
    for shift in range(0, len(h), 2):
        expected = 1.0 if shift == 0 else 0.0
        assert np.isclose(h[shift:] @ h[: len(h) - shift], expected, atol=1e-12)


def test_udwt_zero_and_size():
    t = UndecimatedWavelet(64, "symmlet4", 3)
    assert t.p == 256
    np.testing.assert_array_equal(udwt_forward(np.zeros(64), t), np.zeros(256))
    np.testing.assert_array_equal(udwt_adjoint(np.zeros(256), t), np.zeros(64))


@pytest.mark.parametrize("n", [64, 256, 1024])
def test_udwt_tight_frame(n, rng):
    t = UndecimatedWavelet(n, "symmlet4", 3)
    x = rng.standard_normal((3, n))
    assert np.max(np.abs(t.adjoint(t.forward(x)) - x)) < 1e-10
    assert abs(operator_norm(t, max_iter=500, tol=1e-14) - 1.0) < 1e-6


def test_udwt_frame_is_redundant(rng):
    # W W^T is a projection, not the identity
    t = UndecimatedWavelet(64, "symmlet4", 3)
    c = rng.standard_normal(t.p)
    assert np.linalg.norm(t.forward(t.adjoint(c)) - c) > 1e-3


@pytest.mark.parametrize("op", all_operators(), ids=lambda o: f"{o.kind}-{o.p}")
def test_adjointness(op, rng):
    x = rng.standard_normal(op.n)
    c = rng.standard_normal(op.p)
    assert abs(op.forward(x) @ c - x @ op.adjoint(c)) < 1e-10


@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2**32 - 1),
       which=st.integers(0, 7))
def test_linearity(a, b, seed, which):
    op = all_operators(32)[which]
    g = np.random.default_rng(seed)
    x, y = g.standard_normal((2, op.n))
    lhs = op.forward(a * x + b * y)
    rhs = a * op.forward(x) + b * op.forward(y)
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1.0, np.abs(lhs).max())


def test_odwt_haar_constant_has_no_detail():
    t = OrthoWavelet(16, "haar", 1)
    c = odwt_forward(np.full(16, 3.0), t)
    np.testing.assert_allclose(c[8:], 0.0, atol=1e-12)


def test_odwt_round_trip_and_isometry(rng):
    t = OrthoWavelet(1024, "symmlet4", 3)
    x = rng.standard_normal(1024)
    c = odwt_forward(x, t)
    assert np.isclose(np.linalg.norm(c), np.linalg.norm(x), rtol=1e-12)
    assert np.max(np.abs(odwt_inverse(c, t) - x)) < 1e-10
    assert np.max(np.abs(t.forward(t.adjoint(c)) - c)) < 1e-10


def test_odwt_coarse_mask_counts():
    t = OrthoWavelet(64, "symmlet4", 3)
    assert t.coarse_mask().sum() == 8
    assert UndecimatedWavelet(64).coarse_mask().sum() == 64


def test_non_dyadic_length_rejected():
    with pytest.raises(ValueError):
        OrthoWavelet(100, "haar", 3)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        UndecimatedWavelet(64).forward(np.zeros(63))


def test_delta_kernel_is_identity(rng):
    x = rng.standard_normal(50)
    np.testing.assert_allclose(conv_apply(x, ConvolutionKernel(shape="delta")), x, atol=1e-14)


def test_spike_gives_centered_kernel():
    k = ConvolutionKernel(fwhm=4.0)
    n, j = 128, 40
    x = np.zeros(n)
    x[j] = 1.0
    y = conv_apply(x, k)
    hw = k.half_width
    np.testing.assert_allclose(y[j - hw: j + hw + 1], k.values(), atol=1e-12)
    assert np.argmax(y) == j


def test_conv_adjoint_is_reverse_correlation(rng):
    k = ConvolutionKernel(fwhm=2.0)
    x, y = rng.standard_normal((2, 64))
    assert abs(conv_apply(x, k) @ y - x @ conv_adjoint(y, k)) < 1e-10


def test_laplacian_half_maximum():
    k = ConvolutionKernel(fwhm=4.0)
    v = dict(zip(k.offsets(), k.values()))
    assert v[0] == 1.0
    assert np.isclose(v[2], 0.5, rtol=0, atol=1e-15)
    assert np.isclose(v[-2], 0.5, rtol=0, atol=1e-15)


def test_kernel_wider_than_signal_is_truncated():
    # half-width 8 * 16 = 128 does not fit n = 64
    op = Convolution(64, ConvolutionKernel(fwhm=16.0))
    assert np.count_nonzero(op.taps) == 63


def test_operator_norm_identity_and_matrix(rng):
    assert operator_norm(Identity(10)) == 1.0
    M = rng.standard_normal((8, 8))
    assert abs(operator_norm(M, max_iter=2000, tol=1e-15) - np.linalg.svd(M, compute_uv=False)[0]) < 1e-6


def test_matrix_operator_tight_flag(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    assert MatrixOperator(Q).tight_frame
    assert not MatrixOperator(2 * Q).tight_frame


def test_make_transform_kinds():
    assert isinstance(make_transform("udwt", 32), UndecimatedWavelet)
    assert isinstance(make_transform("ortho", 32), OrthoWavelet)
    assert isinstance(make_transform("identity", 32), Identity)
    assert isinstance(make_transform("conv", 32), Convolution)
    with pytest.raises(ValueError):
        make_transform("curvelet", 32)


def test_wrapper_type_checks():
    with pytest.raises(ValueError):
        udwt_forward(np.zeros(8), OrthoWavelet(8, "haar", 1))
    with pytest.raises(ValueError):
        odwt_forward(np.zeros(8), UndecimatedWavelet(8, "haar", 1))
