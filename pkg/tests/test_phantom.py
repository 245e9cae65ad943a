import math
import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from evaluation.metrics import NUMERIC_FLOOR_DB
from separation.casorati import matrix_to_stack
from separation.errors import GeometryError, ParameterError
from simulation.phantom import (PhantomConfig, PsfSpec, add_noise_bsnr, bsnr_noise, bsnr_statistic, simulate,
                                synth_psf)

SMALL = dict(nz=48, nx=40, nt=12, psf=PsfSpec(support=(7, 7)))


@pytest.fixture(scope="module")
def small_truth():
    return simulate(PhantomConfig(**SMALL))


# --- PSF ---

def test_psf_peaks_at_center_with_unit_energy():
    psf = synth_psf(0.2, 2.0, 2.5, (15, 15))
    assert psf.center == (7, 7)
    assert psf.normalized
    assert np.sum(np.abs(psf.kernel) ** 2) == pytest.approx(1.0)
    assert np.argmax(np.abs(psf.kernel)) == np.ravel_multi_index((7, 7), (15, 15))
    assert np.allclose(psf.kernel, psf.kernel[::-1, ::-1])


def test_psf_flat_limit():
    psf = synth_psf(0.0, 1e6, 1e6, (3, 5))
    assert np.allclose(psf.kernel, 1.0 / math.sqrt(15))


def test_psf_axial_modulation():
    psf = synth_psf(0.25, 1e6, 1e6, (5, 1))
    # cos(pi/2 * z) vanishes on odd rows
    assert np.all(np.abs(psf.kernel[[0, 2, 4], 0]) > 0.5)
    assert np.allclose(psf.kernel[[1, 3], 0], 0.0, atol=1e-12)


def test_psf_support_must_be_odd():
    with pytest.raises(ParameterError):
        synth_psf(0.2, 2.0, 2.0, (4, 5))
    with pytest.raises(ParameterError):
        synth_psf(0.2, 0.0, 2.0, (5, 5))


# --- geometry ---

def test_reference_geometry():
    geometry = PhantomConfig().geometry()
    assert [size for _, size in geometry.rects] == [(12, 70), (10, 35)]
    assert geometry.rects[0][0] == (172, 45)


def test_desk_scale_geometry():
    config = PhantomConfig.desk_scale()
    assert (config.nz, config.nx, config.nt) == (128, 64, 100)
    assert [size for _, size in config.geometry().rects] == [(12, 28), (10, 14)]


def test_rectangles_must_fit_vessel():
    with pytest.raises(GeometryError):
        PhantomConfig(nz=32, nx=32, rect1=(30, 10)).geometry()
    with pytest.raises(GeometryError):
        PhantomConfig(nz=64, nx=32, rect1=(12, 32)).geometry()


# --- simulation ---

def test_same_seed_same_data(small_truth):
    again = simulate(PhantomConfig(**SMALL))
    assert np.array_equal(again.s_observed.data, small_truth.s_observed.data)
    other = simulate(PhantomConfig(seed=1, **SMALL))
    assert not np.array_equal(other.s_observed.data, small_truth.s_observed.data)


def test_observation_is_blurred_blood_plus_tissue(small_truth):
    expected = small_truth.blurred_blood().data + small_truth.t_true.data
    assert np.allclose(small_truth.s_observed.data, expected, atol=1e-12)


def test_tissue_is_static(small_truth):
    tissue = small_truth.t_true.data
    assert np.allclose(tissue, tissue[:, :1], rtol=0, atol=1e-12)
    assert np.linalg.matrix_rank(tissue, tol=1e-9 * np.linalg.norm(tissue)) == 1


def test_blood_confined_to_rectangles_and_moving(small_truth):
    blood = matrix_to_stack(small_truth.x_true.data, 48, 40)
    mask = np.zeros((48, 40), dtype=bool)
    for (top, left), (height, width) in PhantomConfig(**SMALL).geometry().rects:
        mask[top:top + height, left:left + width] = True
    assert np.all(blood[~mask] == 0)
    assert not all(np.array_equal(blood[:, :, 0], blood[:, :, t]) for t in range(1, 12))
    assert np.all(np.abs(small_truth.shifts) <= 3)
    assert small_truth.shifts.shape == (12, 2, 2)


def test_blood_calibrated_below_tissue(small_truth):
    assert small_truth.blood_amplitude > 0
    fixed = simulate(PhantomConfig(blood_amplitude=2.0, **SMALL))
    assert fixed.blood_amplitude == 2.0
    ratio = np.linalg.norm(fixed.x_true.data) / np.linalg.norm(small_truth.x_true.data)
    assert ratio == pytest.approx(2.0 / small_truth.blood_amplitude)


def test_no_blood_gives_floor_power_doppler():
    truth = simulate(PhantomConfig(blood_amplitude=0.0, **SMALL))
    assert np.allclose(truth.pd_true.db, NUMERIC_FLOOR_DB)


def test_no_motion_keeps_blood_static():
    truth = simulate(PhantomConfig(max_shift=0, **SMALL))
    blood = truth.x_true.data
    assert np.array_equal(blood, np.repeat(blood[:, :1], 12, axis=1))


# --- noise ---

def test_bsnr_calibration_desk_scale():
    truth = simulate(PhantomConfig.desk_scale())
    noisy = add_noise_bsnr(truth, 15.0, seed=1)
    assert abs(noisy.empirical_bsnr_db - 15.0) <= 0.1
    noise = noisy.s_observed.data - truth.s_observed.data
    measured = bsnr_statistic(truth.blurred_blood().data, float(np.mean(np.abs(noise) ** 2)))
    assert measured == pytest.approx(noisy.empirical_bsnr_db)
    assert np.mean(np.abs(noise) ** 2) == pytest.approx(noisy.noise_sigma ** 2, rel=0.01)


def test_infinite_bsnr_adds_nothing(small_truth):
    assert add_noise_bsnr(small_truth, math.inf, seed=1) is small_truth
    with pytest.raises(ParameterError):
        add_noise_bsnr(small_truth, -math.inf, seed=1)
    with pytest.raises(ParameterError):
        add_noise_bsnr(small_truth, math.nan, seed=1)


def test_noise_seed_is_reproducible(small_truth):
    a = add_noise_bsnr(small_truth, 10.0, seed=5)
    b = add_noise_bsnr(small_truth, 10.0, seed=5)
    c = add_noise_bsnr(small_truth, 10.0, seed=6)
    assert np.array_equal(a.s_observed.data, b.s_observed.data)
    assert not np.array_equal(a.s_observed.data, c.s_observed.data)
    # the clean components are untouched
    assert np.array_equal(a.x_true.data, small_truth.x_true.data)


def test_bsnr_noise_matches_add_noise_bsnr(small_truth):
    blurred = small_truth.blurred_blood().data
    noise, variance, empirical = bsnr_noise(blurred, 12.0, seed=4)
    noisy = add_noise_bsnr(small_truth, 12.0, seed=4)
    assert np.array_equal(noisy.s_observed.data, small_truth.s_observed.data + noise)
    assert noisy.noise_sigma == pytest.approx(math.sqrt(variance))
    assert empirical == pytest.approx(noisy.empirical_bsnr_db)
    with pytest.raises(ParameterError):
        bsnr_noise(np.ones((10, 4), dtype=complex), 12.0, seed=4)
