"""
Blind deconvolution of one complex image
----------------------------------------
G = H_e (*) F + noise, with only the magnitude of the PSF spectrum assumed
known. The magnitude is estimated by homomorphic filtering (low-quefrency
liftering of log|FFT(G)|); then F and the PSF phase are alternated:

* F-step: min_F 1/2*||G - H_e (*) F||^2 + huber(F), accelerated gradient
  descent with backtracking (Huber is smooth, no prox needed).
* PSF step: min ||G^ - H^ F^||^2 s.t. |H^| = H~ separates per frequency bin;
  the minimiser keeps the magnitude and takes the phase of G^ conj(F^).

The full-support PSF from the phase step is cropped to a compact support
around its energy centroid.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from logging_config import logger
from separation.errors import ParameterError, ShapeError, SolverDivergenceError
from separation.linops import Psf, conv2_circ, embed_psf, fft2, ifft2
from separation.prox import HuberParams, huber_gradient, huber_value

DIVERGENCE_PATIENCE = 10


class BdParams(BaseModel):
    """Blind deconvolution settings; Huber defaults gamma=0.002, a=0.05."""

    huber: HuberParams = Field(default_factory=HuberParams)
    cepstral_cutoff: Optional[float] = Field(
        None, gt=0, description="Gaussian lifter radius in samples; None means 5% of min(nz, nx)")
    psf_support: Tuple[int, int] = Field((15, 15), description="Spatial support (kh, kw) of the recovered kernel")
    inner_tol: float = Field(1e-6, gt=0, description="Relative objective change that stops the F-step")
    inner_max_iter: int = Field(200, ge=1)
    n_outer: int = Field(3, ge=1, description="F / PSF alternations per blind deconvolution")

    def lifter_radius(self, nz: int, nx: int) -> float:
        if self.cepstral_cutoff is not None:
            return self.cepstral_cutoff
        return max(0.05 * min(nz, nx), 1.0)

    def check_dims(self, nz: int, nx: int) -> None:
        kh, kw = self.psf_support
        if kh < 1 or kw < 1:
            raise ParameterError(f"PSF support must be positive, got {self.psf_support}")
        if kh > nz or kw > nx:
            raise ParameterError(f"PSF support {self.psf_support} exceeds image dims ({nz}, {nx})")
        if self.lifter_radius(nz, nx) > min(nz, nx):
            raise ParameterError(f"Cepstral cutoff {self.cepstral_cutoff} exceeds image dims ({nz}, {nx})")


@dataclass(frozen=True, eq=False)
class MagnitudeSpectrum:
    """|FFT(PSF)| on the full image grid."""

    mag: np.ndarray

    def __post_init__(self):
        mag = np.array(self.mag, dtype=np.float64, copy=True)
        if mag.ndim != 2:
            raise ShapeError("Magnitude spectrum must be 2D")
        if not np.all(np.isfinite(mag)) or np.any(mag < 0):
            raise ValueError("Magnitude spectrum must be finite and non-negative")
        mag.flags.writeable = False
        object.__setattr__(self, "mag", mag)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.mag.shape


def _as_image(G: np.ndarray) -> np.ndarray:
    G = np.asarray(G, dtype=np.complex128)
    if G.ndim != 2:
        raise ShapeError(f"Expected a 2D image, got {G.ndim}D")
    if not np.all(np.isfinite(G)):
        raise ValueError("Image contains NaN or Inf")
    return G


def _gaussian_lifter(nz: int, nx: int, radius: float) -> np.ndarray:
    qz = np.fft.fftfreq(nz) * nz
    qx = np.fft.fftfreq(nx) * nx
    return np.exp(-(qz[:, None] ** 2 + qx[None, :] ** 2) / (2.0 * radius ** 2))


def estimate_psf_magnitude(G: np.ndarray, p: BdParams) -> MagnitudeSpectrum:
    G = _as_image(G)
    nz, nx = G.shape
    p.check_dims(nz, nx)
    spectrum = np.abs(fft2(G))
    peak = np.max(spectrum)
    if peak == 0.0:
        raise ValueError("Cannot estimate a PSF magnitude from an all-zero image")
    # floor empty bins relative to the peak so the log stays finite
    log_magnitude = np.log(np.maximum(spectrum, 1e-12 * peak))
    cepstrum = ifft2(log_magnitude)
    smooth = np.real(fft2(cepstrum * _gaussian_lifter(nz, nx, p.lifter_radius(nz, nx))))
    mag = np.exp(smooth - np.max(smooth))
    return MagnitudeSpectrum(mag)


def trf_objective(G: np.ndarray, F: np.ndarray, psf: Psf, p: BdParams) -> float:
    """1/2*||G - H (*) F||^2 + huber(F)."""
    op = embed_psf(psf, *G.shape)
    return 0.5 * float(np.sum(np.abs(G - conv2_circ(F, op)) ** 2)) + huber_value(F, p.huber)


def data_fit(G: np.ndarray, psf: Psf, F: np.ndarray) -> float:
    """1/2*||G - H (*) F||^2."""
    op = embed_psf(psf, *np.shape(G))
    return 0.5 * float(np.sum(np.abs(np.asarray(G) - conv2_circ(F, op)) ** 2))


def estimate_trf(G: np.ndarray, psf: Psf, p: BdParams, F0: Optional[np.ndarray] = None) -> np.ndarray:
    G = _as_image(G)
    op = embed_psf(psf, *G.shape)
    transfer = op.transfer
    G_hat = fft2(G)

    def objective(F, F_hat):
        # Parseval: ||r||^2 = sum|r^|^2 / N
        fit = 0.5 * float(np.sum(np.abs(transfer * F_hat - G_hat) ** 2)) / G.size
        return fit + huber_value(F, p.huber)

    def gradient(F, F_hat):
        return ifft2(np.conj(transfer) * (transfer * F_hat - G_hat)) + huber_gradient(F, p.huber)

    F = G.copy() if F0 is None else _as_image(F0)
    current = objective(F, fft2(F))
    step = 1.0 / (op.lipschitz() + 2.0 * p.huber.gamma)
    y = F
    t = 1.0
    increases = 0
    for it in range(1, p.inner_max_iter + 1):
        y_hat = fft2(y)
        value_y = objective(y, y_hat)
        grad_y = gradient(y, y_hat)
        grad_sq = float(np.sum(np.abs(grad_y) ** 2))
        # backtracking on the quadratic upper bound at the momentum point
        while True:
            candidate = y - step * grad_y
            candidate_value = objective(candidate, fft2(candidate))
            if candidate_value <= value_y - 0.5 * step * grad_sq + 1e-12 * abs(value_y) or step < 1e-20:
                break
            step *= 0.5
        if not np.isfinite(candidate_value):
            raise SolverDivergenceError("estimate_trf", it, "non-finite objective")

        if candidate_value > current:
            if y is not F:
                # momentum overshoot: restart from the last accepted iterate
                y = F
                t = 1.0
                continue
            if candidate_value - current <= 1e-9 * max(abs(current), 1e-300):
                # stalled at rounding level
                break
            increases += 1
            if increases >= DIVERGENCE_PATIENCE:
                raise SolverDivergenceError("estimate_trf", it, "objective increased on consecutive steps")
            step *= 0.5
            continue
        increases = 0

        change = (current - candidate_value) / max(abs(current), 1e-300)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = candidate + ((t - 1.0) / t_new) * (candidate - F)
        F, current, t = candidate, candidate_value, t_new
        if change < p.inner_tol:
            break
    return F


def constrained_transfer(G: np.ndarray, F: np.ndarray, mag: MagnitudeSpectrum) -> np.ndarray:
    """Full-grid transfer minimising ||G^ - H^ F^||^2 subject to |H^| = mag."""
    G = _as_image(G)
    F = _as_image(F)
    if G.shape != F.shape or G.shape != mag.dims:
        raise ShapeError(f"Dims differ: G {G.shape}, F {F.shape}, magnitude {mag.dims}")
    cross = fft2(G) * np.conj(fft2(F))
    phase = np.ones(cross.shape, dtype=np.complex128)
    nonzero = np.abs(cross) > 0
    phase[nonzero] = cross[nonzero] / np.abs(cross[nonzero])
    return mag.mag * phase


def crop_kernel(kernel_full: np.ndarray, support: Tuple[int, int]) -> Psf:
    """Cut a kh x kw window around the energy centroid of a circular kernel whose origin is (0, 0)."""
    nz, nx = kernel_full.shape
    kh, kw = support
    cz, cx = nz // 2, nx // 2
    # move the origin to (cz, cx) so the kernel is contiguous
    centered = np.roll(kernel_full, (cz, cx), axis=(0, 1))
    energy = np.abs(centered) ** 2
    total = float(np.sum(energy))
    if total == 0.0:
        raise ValueError("Cannot crop an all-zero kernel")
    rows = np.arange(nz)
    cols = np.arange(nx)
    mz = int(round(float(np.sum(energy.sum(axis=1) * rows)) / total))
    mx = int(round(float(np.sum(energy.sum(axis=0) * cols)) / total))
    top = mz - kh // 2
    left = mx - kw // 2
    window = np.take(np.take(centered, np.arange(top, top + kh), axis=0, mode="wrap"),
                     np.arange(left, left + kw), axis=1, mode="wrap")
    # keep the convolution origin where it was; an axis whose origin falls
    # outside the window is re-registered at the window centre (a pure shift of H)
    center_z, center_x = cz - top, cx - left
    inside_z, inside_x = 0 <= center_z < kh, 0 <= center_x < kw
    if not (inside_z and inside_x):
        logger.warning("Kernel origin outside the crop window; re-registered at the energy centroid",
                       extra={"extra_data": {"origin_offset": [center_z - kh // 2, center_x - kw // 2],
                                             "support": [kh, kw]}})
    center = (center_z if inside_z else kh // 2, center_x if inside_x else kw // 2)
    return Psf(window, center).normalized_copy()


def fit_constrained_psf(G: np.ndarray, F: np.ndarray, mag: MagnitudeSpectrum, p: BdParams) -> Psf:
    transfer = constrained_transfer(G, F, mag)
    return crop_kernel(ifft2(transfer), p.psf_support)


def zero_phase_psf(mag: MagnitudeSpectrum, p: BdParams) -> Psf:
    return crop_kernel(ifft2(mag.mag.astype(np.complex128)), p.psf_support)


def blind_deconvolve(G: np.ndarray, p: BdParams, n_outer: int, initial_psf: Optional[Psf] = None,
                     magnitude: Optional[MagnitudeSpectrum] = None) -> Tuple[Psf, np.ndarray]:
    """
    Alternate PSF and F updates, starting from `initial_psf` or the zero-phase
    kernel of the magnitude. Each pass re-fits the PSF phase to the current F
    and then re-estimates F; a pass that raises the data fit is discarded and
    ends the alternation, so accepted data fits never increase.
    """
    if n_outer < 1:
        raise ParameterError(f"n_outer must be >= 1, got {n_outer}")
    G = _as_image(G)
    p.check_dims(*G.shape)
    if magnitude is None:
        magnitude = estimate_psf_magnitude(G, p)
    elif magnitude.dims != G.shape:
        raise ShapeError(f"Magnitude dims {magnitude.dims} do not match image dims {G.shape}")
    psf = initial_psf if initial_psf is not None else zero_phase_psf(magnitude, p)

    F = estimate_trf(G, psf, p)
    fits = [data_fit(G, psf, F)]
    for outer in range(1, n_outer):
        candidate_psf = fit_constrained_psf(G, F, magnitude, p)
        candidate_F = estimate_trf(G, candidate_psf, p, F0=F)
        candidate_fit = data_fit(G, candidate_psf, candidate_F)
        if candidate_fit > fits[-1] + 1e-9 * max(fits[-1], 1.0):
            logger.warning("Blind deconvolution pass rejected: data fit increased", extra={"extra_data": {
                "outer_iteration": outer, "data_fit": fits[-1], "rejected_fit": candidate_fit}})
            break
        psf, F = candidate_psf, candidate_F
        fits.append(candidate_fit)

    logger.info("Blind deconvolution finished", extra={"extra_data": {
        "image_shape": list(G.shape), "psf_shape": list(psf.shape), "data_fit": fits}})
    return psf, F
