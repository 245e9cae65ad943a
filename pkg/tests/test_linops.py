import os
import sys
import time

import numpy as np
import pytest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from separation.casorati import CasoratiMatrix, flatten_frame
from separation.errors import ParameterError, ShapeError
from separation.linops import (Psf, adjoint_operator, apply_to_casorati, compose, conv2_circ, conv2_circ_adjoint,
                               embed_psf, fft2, flip_conjugate, ifft2)


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def direct_circular_conv(image, kernel, center):
    """O(N^2 K^2) oracle: out[z, x] = sum_{i, j} k[i, j] * image[z - (i - cz), x - (j - cx)]."""
    nz, nx = image.shape
    kh, kw = kernel.shape
    out = np.zeros((nz, nx), dtype=complex)
    for z in range(nz):
        for x in range(nx):
            acc = 0j
            for i in range(kh):
                for j in range(kw):
                    acc += kernel[i, j] * image[(z - (i - center[0])) % nz, (x - (j - center[1])) % nx]
            out[z, x] = acc
    return out


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_delta_kernel_is_identity():
    op = embed_psf(Psf(np.ones((1, 1))), 6, 5)
    assert np.allclose(op.transfer, 1.0, rtol=0, atol=1e-15)
    image = crandn(np.random.default_rng(0), (6, 5))
    assert np.allclose(conv2_circ(image, op), image, atol=1e-13)
    assert np.allclose(conv2_circ_adjoint(image, op), image, atol=1e-13)


def test_impulse_response_is_shifted_kernel():
    rng = np.random.default_rng(1)
    kernel = crandn(rng, (3, 3))
    op = embed_psf(Psf(kernel), 8, 8)
    delta = np.zeros((8, 8))
    delta[5, 2] = 1.0
    response = conv2_circ(delta, op)
    # center (1, 1) of the kernel lands on the impulse
    expected = np.zeros((8, 8), dtype=complex)
    for i in range(3):
        for j in range(3):
            expected[(5 + i - 1) % 8, (2 + j - 1) % 8] = kernel[i, j]
    assert np.allclose(response, expected, atol=1e-13)


def test_default_center():
    assert Psf(np.ones((4, 5))).center == (2, 2)
    with pytest.raises(ParameterError):
        Psf(np.ones((3, 3)), center=(3, 0))


def test_small_random_case_matches_oracle():
    rng = np.random.default_rng(2)
    image = crandn(rng, (5, 5))
    kernel = crandn(rng, (3, 3))
    psf = Psf(kernel)
    assert relative_error(conv2_circ(image, embed_psf(psf, 5, 5)),
                          direct_circular_conv(image, kernel, psf.center)) <= 1e-10


def test_operator_suite_against_oracle():
    rng = np.random.default_rng(3)
    started = time.perf_counter()
    for _ in range(100):
        nz, nx = rng.integers(5, 17, size=2)
        kh, kw = rng.integers(1, 6, size=2)
        kernel = crandn(rng, (kh, kw))
        center = (int(rng.integers(kh)), int(rng.integers(kw)))
        image = crandn(rng, (nz, nx))
        op = embed_psf(Psf(kernel, center), nz, nx)
        assert relative_error(conv2_circ(image, op), direct_circular_conv(image, kernel, center)) <= 1e-10
        u, v = crandn(rng, (nz, nx)), crandn(rng, (nz, nx))
        lhs = np.vdot(v, conv2_circ(u, op))
        rhs = np.vdot(conv2_circ_adjoint(v, op), u)
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)
    assert time.perf_counter() - started < 10.0


def test_linearity():
    rng = np.random.default_rng(4)
    op = embed_psf(Psf(crandn(rng, (3, 3))), 8, 8)
    i1, i2 = crandn(rng, (8, 8)), crandn(rng, (8, 8))
    a, b = 1.5 - 2j, 0.25j
    lhs = conv2_circ(a * i1 + b * i2, op)
    rhs = a * conv2_circ(i1, op) + b * conv2_circ(i2, op)
    assert relative_error(lhs, rhs) <= 1e-12


def test_flip_conjugate_generates_adjoint():
    rng = np.random.default_rng(5)
    psf = Psf(crandn(rng, (3, 4)), center=(0, 2))
    op = embed_psf(psf, 8, 8)
    flipped = embed_psf(flip_conjugate(psf), 8, 8)
    assert np.allclose(flipped.transfer, adjoint_operator(op).transfer, atol=1e-12)
    u = crandn(rng, (8, 8))
    assert np.allclose(conv2_circ(u, flipped), conv2_circ_adjoint(u, op), atol=1e-12)


def test_real_symmetric_kernel_is_self_adjoint():
    kernel = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])
    op = embed_psf(Psf(kernel), 7, 7)
    u = crandn(np.random.default_rng(6), (7, 7))
    assert np.allclose(conv2_circ(u, op), conv2_circ_adjoint(u, op), atol=1e-12)


def test_parseval_consistency():
    rng = np.random.default_rng(7)
    op = embed_psf(Psf(crandn(rng, (3, 3))), 8, 6)
    u = crandn(rng, (8, 6))
    energy = np.sum(np.abs(conv2_circ(u, op)) ** 2)
    spectral = np.sum(np.abs(op.transfer) ** 2 * np.abs(fft2(u)) ** 2) / u.size
    assert abs(energy - spectral) <= 1e-9 * energy


def test_fft_round_trip_convention():
    u = crandn(np.random.default_rng(8), (6, 4))
    assert np.allclose(ifft2(fft2(u)), u, atol=1e-14)
    # unnormalised forward transform: DC bin is the plain sum
    assert np.isclose(fft2(u)[0, 0], u.sum())


def test_composition_matches_convolved_kernel():
    rng = np.random.default_rng(9)
    k1 = Psf(crandn(rng, (3, 3)))
    k2 = Psf(crandn(rng, (3, 3)))
    op1, op2 = embed_psf(k1, 8, 8), embed_psf(k2, 8, 8)
    u = crandn(rng, (8, 8))
    sequential = conv2_circ(conv2_circ(u, op1), op2)
    assert relative_error(conv2_circ(u, compose(op1, op2)), sequential) <= 1e-9
    # the same operator from the explicitly convolved 5x5 kernel
    full = np.zeros((5, 5), dtype=complex)
    for i in range(3):
        for j in range(3):
            full[i:i + 3, j:j + 3] += k1.kernel[i, j] * k2.kernel
    assert relative_error(conv2_circ(u, embed_psf(Psf(full), 8, 8)), sequential) <= 1e-9


def test_apply_to_casorati_matches_frame_loop():
    rng = np.random.default_rng(10)
    cube = crandn(rng, (4, 4, 3))
    m = CasoratiMatrix(np.reshape(cube, (16, 3), order="F"), 4, 4)
    op = embed_psf(Psf(crandn(rng, (3, 3))), 4, 4)
    out = apply_to_casorati(m, op)
    for t in range(3):
        assert np.allclose(out.data[:, t], flatten_frame(conv2_circ(cube[:, :, t], op)), rtol=0, atol=1e-12)
    adjoint = apply_to_casorati(m, op, adjoint=True)
    assert np.allclose(adjoint.data[:, 0], flatten_frame(conv2_circ_adjoint(cube[:, :, 0], op)), atol=1e-12)


def test_apply_to_single_frame_reduces_to_conv():
    rng = np.random.default_rng(11)
    image = crandn(rng, (5, 6))
    op = embed_psf(Psf(crandn(rng, (3, 3))), 5, 6)
    m = CasoratiMatrix(flatten_frame(image)[:, None], 5, 6)
    assert np.allclose(apply_to_casorati(m, op).data[:, 0], flatten_frame(conv2_circ(image, op)), atol=1e-13)


def test_identity_on_casorati():
    rng = np.random.default_rng(12)
    m = CasoratiMatrix(crandn(rng, (12, 4)), 3, 4)
    out = apply_to_casorati(m, embed_psf(Psf.delta(), 3, 4))
    assert np.allclose(out.data, m.data, atol=1e-13)


def test_dimension_errors():
    op = embed_psf(Psf(np.ones((3, 3))), 8, 8)
    with pytest.raises(ShapeError):
        conv2_circ(np.zeros((8, 7)), op)
    with pytest.raises(ShapeError):
        conv2_circ_adjoint(np.zeros((7, 8)), op)
    with pytest.raises(ShapeError):
        embed_psf(Psf(np.ones((9, 3))), 8, 8)
    with pytest.raises(ShapeError):
        apply_to_casorati(CasoratiMatrix(np.zeros((42, 2)), 6, 7), op)


def test_normalized_psf():
    psf = Psf(np.array([[3.0, 4.0]])).normalized_copy()
    assert psf.normalized
    assert psf.energy() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ParameterError):
        Psf(np.array([[3.0, 4.0]]), normalized=True)
    with pytest.raises(ParameterError):
        Psf(np.zeros((2, 2))).normalized_copy()
