import importlib
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from evaluation.metrics import lateral_edge_slope, power_doppler
from separation.casorati import CasoratiMatrix
from separation.drpca import drpca
from separation.errors import ParameterError
from separation.linops import Psf, apply_to_casorati, embed_psf
from separation.rpca import AdmmParams, rpca
from simulation.phantom import PhantomConfig, PsfSpec, simulate

drpca_module = importlib.import_module("separation.drpca")

# separable [0.2, 1, 0.2] blur: transfer bounded away from zero
MILD_KERNEL = np.outer([0.2, 1.0, 0.2], [0.2, 1.0, 0.2])


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture(scope="module")
def blurred_sparse():
    rng = np.random.default_rng(0)
    nz, nx, nt = 16, 16, 12
    X0 = np.zeros((nz * nx, nt), dtype=complex)
    support = rng.random(X0.shape) < 0.01
    X0[support] = 3.0 * np.exp(2j * np.pi * rng.random(int(support.sum())))
    X0 = CasoratiMatrix(X0, nz, nx)
    psf = Psf(MILD_KERNEL)
    S = apply_to_casorati(X0, embed_psf(psf.normalized_copy(), nz, nx))
    return S, X0, support, psf


def random_problem(seed=1):
    rng = np.random.default_rng(seed)
    return CasoratiMatrix(crandn(rng, (400, 10)), 20, 20)


@pytest.mark.parametrize("x_step", drpca_module.X_STEPS)
def test_delta_psf_reduces_to_rpca(x_step):
    S = random_problem()
    p = AdmmParams.reference(20, 20, 10, mu0=2.0, tol=1e-30, max_iter=40)
    reference = rpca(S, p)
    deconvolved = drpca(S, Psf.delta(), p, x_step=x_step)
    assert deconvolved.iterations == reference.iterations == 40
    assert np.array_equal(deconvolved.blood.data, reference.blood.data)
    assert np.array_equal(deconvolved.tissue.data, reference.tissue.data)
    assert np.array_equal(deconvolved.dual, reference.dual)


def test_warm_start_resumes_the_multiplier():
    S = random_problem()
    p = AdmmParams.reference(20, 20, 10, mu0=2.0, tol=1e-8, max_iter=5000)
    converged = rpca(S, p)
    assert converged.converged
    resumed = drpca(S, Psf.delta(), p, init=converged)
    restarted = drpca(S, Psf.delta(), p, init=replace(converged, dual=None))
    assert resumed.iterations <= 3
    assert resumed.trace[0].relative_change < restarted.trace[0].relative_change


def test_split_step_costs_four_ffts_per_iteration(blurred_sparse, monkeypatch):
    S, _, _, psf = blurred_sparse
    calls = []

    def counted(name, fn):
        def wrapper(*args):
            calls.append(name)
            return fn(*args)
        return wrapper

    monkeypatch.setattr(drpca_module, "frames_spectrum", counted("fft", drpca_module.frames_spectrum))
    monkeypatch.setattr(drpca_module, "frames_from_spectrum", counted("ifft", drpca_module.frames_from_spectrum))
    result = drpca(S, psf, AdmmParams(lam=0.1, mu=0.2, tol=1e-30, max_iter=5))
    assert drpca_module.DEFAULT_X_STEP == "split"
    assert result.iterations == 5
    assert len(calls) == 4 * 5
    assert calls.count("fft") == calls.count("ifft")


def test_deconvolution_sharpens_blood_edges():
    config = PhantomConfig(nz=48, nx=40, nt=30, psf=PsfSpec(support=(7, 7)))
    truth = simulate(config)
    S = truth.s_observed
    (top, left), (height, width) = config.geometry().rects[0]
    rows, cols = (top, top + height), (left - 4, left + 4)

    rpca_result = rpca(S, AdmmParams.reference(S.nz, S.nx, S.nt, mu0=10.0, max_iter=400))
    drpca_result = drpca(S, truth.psf_true, AdmmParams.reference(S.nz, S.nx, S.nt, mu0=2.0, max_iter=400))
    sharp = lateral_edge_slope(power_doppler(drpca_result.blood), rows, cols)
    blurred = lateral_edge_slope(power_doppler(rpca_result.blood), rows, cols)
    assert sharp > blurred


@pytest.mark.parametrize("x_step, inner_steps", [("prox_gradient", 10), ("split", 1)])
def test_recovers_sparse_blood_under_known_blur(blurred_sparse, x_step, inner_steps):
    S, X0, support, psf = blurred_sparse
    lam = 1.0 / np.sqrt(S.shape[0])
    # heavy nuclear weight keeps the tissue term at zero
    p = AdmmParams(lam=lam, rho=1e3, mu=2 * lam, tol=1e-10, max_iter=1500)
    result = drpca(S, psf, p, x_step=x_step, inner_steps=inner_steps)

    op = embed_psf(psf.normalized_copy(), S.nz, S.nx)
    HX = apply_to_casorati(result.blood, op).data
    assert np.linalg.norm(HX - S.data) / S.norm() <= 1e-2
    assert np.all(np.abs(result.blood.data[support]) > 0)
    assert result.trace[-1].primal_residual <= 1e-4 * S.norm()


def test_result_carries_normalized_psf(blurred_sparse):
    S, _, _, psf = blurred_sparse
    result = drpca(S, psf, AdmmParams(lam=0.1, mu=0.2, max_iter=3))
    assert result.psf.normalized
    assert result.psf.energy() == pytest.approx(1.0)
    assert result.method == "drpca"
    assert result.blood.shape == S.shape and result.tissue.shape == S.shape
    assert len(result.trace) == result.iterations == 3


def test_psf_scale_does_not_matter(blurred_sparse):
    S, _, _, psf = blurred_sparse
    p = AdmmParams(lam=0.1, mu=0.2, max_iter=20)
    a = drpca(S, psf, p)
    b = drpca(S, Psf(7.5 * psf.kernel), p)
    assert np.allclose(a.blood.data, b.blood.data, atol=1e-10)


def test_deterministic(blurred_sparse):
    S, _, _, psf = blurred_sparse
    p = AdmmParams(lam=0.1, mu=0.2, max_iter=10)
    assert np.array_equal(drpca(S, psf, p).blood.data, drpca(S, psf, p).blood.data)


def test_invalid_inputs(blurred_sparse):
    S, _, _, psf = blurred_sparse
    p = AdmmParams(lam=0.1, mu=0.2, max_iter=2)
    with pytest.raises(ParameterError):
        drpca(S, Psf(np.zeros((3, 3))), p)
    with pytest.raises(ParameterError):
        drpca(S, psf, p, x_step="newton")
    with pytest.raises(ParameterError):
        drpca(S, psf, p, inner_steps=0)
    with pytest.raises(ValueError):
        drpca(S, Psf(np.ones((20, 3))), p)
