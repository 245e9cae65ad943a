"""
Phantom simulator
-----------------
A static vessel in speckle tissue with two rectangles of moving blood:

* tissue: one frame of randomly placed scatterers with complex Gaussian
  amplitudes, repeated for every frame (exactly rank one), blurred by the PSF;
* blood: complex Gaussian scatterers filling two rectangles inside the vessel;
  every frame circularly shifts the rectangle interiors by a random integer
  offset, which mimics flow;
* observation: S = H X + T, optionally plus white noise calibrated by BSNR.

The PSF is synthetic (an axially modulated Gaussian) because no measured PSF
is available.
"""

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from evaluation.metrics import PowerDopplerImage, power_doppler
from logging_config import logger
from separation.casorati import CasoratiMatrix, stack_to_matrix
from separation.errors import GeometryError, ParameterError
from separation.linops import Psf, apply_to_casorati, embed_psf

REFERENCE_RECT1 = (12, 70)
REFERENCE_RECT2 = (10, 35)
REFERENCE_NX = 161


def synth_psf(fc_fraction: float, sigma_z: float, sigma_x: float, support: Tuple[int, int]) -> Psf:
    """cos(2*pi*fc*z) * exp(-z^2/2sz^2 - x^2/2sx^2) on an odd support, unit energy."""
    kh, kw = support
    if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
        raise ParameterError(f"PSF support must be odd in both dims, got {support}")
    if sigma_z <= 0 or sigma_x <= 0:
        raise ParameterError(f"PSF widths must be positive, got ({sigma_z}, {sigma_x})")
    z = np.arange(kh) - kh // 2
    x = np.arange(kw) - kw // 2
    envelope = np.exp(-z[:, None] ** 2 / (2.0 * sigma_z ** 2) - x[None, :] ** 2 / (2.0 * sigma_x ** 2))
    kernel = np.cos(2.0 * np.pi * fc_fraction * z)[:, None] * envelope
    return Psf(kernel, (kh // 2, kw // 2)).normalized_copy()


class PsfSpec(BaseModel):
    fc_fraction: float = Field(0.2, ge=0, le=0.5, description="Axial modulation frequency in cycles/sample")
    sigma_z: float = Field(2.0, gt=0)
    sigma_x: float = Field(2.5, gt=0)
    support: Tuple[int, int] = (15, 15)

    def build(self) -> Psf:
        return synth_psf(self.fc_fraction, self.sigma_z, self.sigma_x, self.support)


class PhantomConfig(BaseModel):
    """
    Geometry and randomness of the simulated acquisition. Rectangle sizes and
    anchors left as None are derived from the image size: reference sizes, widths
    scaled down when the image is narrower than the 161-column reference grid.
    """

    nz: int = Field(451, ge=8)
    nx: int = Field(161, ge=8)
    nt: int = Field(400, ge=1)
    rect1: Optional[Tuple[int, int]] = None
    rect2: Optional[Tuple[int, int]] = None
    rect1_anchor: Optional[Tuple[int, int]] = None
    rect2_anchor: Optional[Tuple[int, int]] = None
    vessel_top: Optional[int] = None
    vessel_height: Optional[int] = None
    max_shift: int = Field(3, ge=0, description="Per-frame circular shift range of blood, in samples")
    tissue_density: float = Field(0.5, gt=0, le=1, description="Fraction of tissue pixels holding a scatterer")
    blood_amplitude: Optional[float] = Field(None, ge=0, description="None calibrates to blood_to_tissue_db")
    blood_to_tissue_db: float = -20.0
    psf: PsfSpec = Field(default_factory=PsfSpec)
    seed: int = 0
    # acquisition metadata, not used by the math
    dz: float = 0.0086
    dx: float = 0.0333
    frame_rate: float = 12800.0
    sampling_frequency: float = 9e6

    @classmethod
    def desk_scale(cls, seed: int = 0, **overrides) -> "PhantomConfig":
        values = {"nz": 128, "nx": 64, "nt": 100, "seed": seed}
        values.update(overrides)
        return cls(**values)

    def geometry(self) -> "PhantomGeometry":
        scale = min(1.0, self.nx / REFERENCE_NX)
        rect1 = self.rect1 or (REFERENCE_RECT1[0], max(1, round(REFERENCE_RECT1[1] * scale)))
        rect2 = self.rect2 or (REFERENCE_RECT2[0], max(1, round(REFERENCE_RECT2[1] * scale)))
        vessel_top = self.vessel_top if self.vessel_top is not None else self.nz // 3
        vessel_height = self.vessel_height if self.vessel_height is not None else \
            max(self.nz // 4, rect1[0] + rect2[0] + 6)
        anchor1 = self.rect1_anchor or (vessel_top + vessel_height // 4 - rect1[0] // 2, (self.nx - rect1[1]) // 2)
        anchor2 = self.rect2_anchor or (vessel_top + 3 * vessel_height // 4 - rect2[0] // 2,
                                        (self.nx - rect2[1]) // 2)
        geometry = PhantomGeometry(vessel_top, vessel_height, [(anchor1, rect1), (anchor2, rect2)])
        geometry.check(self.nz, self.nx)
        return geometry


@dataclass(frozen=True)
class PhantomGeometry:
    vessel_top: int
    vessel_height: int
    rects: List[Tuple[Tuple[int, int], Tuple[int, int]]]

    def check(self, nz: int, nx: int) -> None:
        bottom = self.vessel_top + self.vessel_height
        if self.vessel_top < 0 or self.vessel_height < 1 or bottom > nz:
            raise GeometryError(f"Vessel rows [{self.vessel_top}, {bottom}) do not fit in {nz} rows")
        for (top, left), (height, width) in self.rects:
            if height < 1 or width < 1:
                raise GeometryError(f"Rectangle size ({height}, {width}) must be positive")
            if not (self.vessel_top < top and top + height < bottom and 0 < left and left + width < nx):
                raise GeometryError(
                    f"Rectangle at ({top}, {left}) of size ({height}, {width}) is not strictly inside "
                    f"the vessel rows ({self.vessel_top}, {bottom}) and columns (0, {nx})")

    def vessel_mask(self, nz: int, nx: int) -> np.ndarray:
        mask = np.zeros((nz, nx), dtype=bool)
        mask[self.vessel_top:self.vessel_top + self.vessel_height, :] = True
        return mask


@dataclass(frozen=True, eq=False)
class PhantomTruth:
    s_observed: CasoratiMatrix
    x_true: CasoratiMatrix
    t_true: CasoratiMatrix
    psf_true: Psf
    pd_true: PowerDopplerImage
    blood_amplitude: float = 0.0
    shifts: Optional[np.ndarray] = None
    noise_sigma: Optional[float] = None
    bsnr_db: Optional[float] = None
    empirical_bsnr_db: Optional[float] = None

    def blurred_blood(self) -> CasoratiMatrix:
        op = embed_psf(self.psf_true, self.x_true.nz, self.x_true.nx)
        return apply_to_casorati(self.x_true, op)


def _complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def simulate(config: PhantomConfig) -> PhantomTruth:
    geometry = config.geometry()
    nz, nx, nt = config.nz, config.nx, config.nt
    psf = config.psf.build()
    if psf.shape[0] > nz or psf.shape[1] > nx:
        raise GeometryError(f"PSF support {psf.shape} does not fit in ({nz}, {nx})")

    # one stream for tissue, one for blood content, one per frame for motion
    tissue_seq, blood_seq, *frame_seqs = np.random.SeedSequence(config.seed).spawn(nt + 2)
    tissue_rng = np.random.default_rng(tissue_seq)
    occupied = tissue_rng.random((nz, nx)) < config.tissue_density
    tissue_frame = np.where(occupied, _complex_gaussian(tissue_rng, (nz, nx)), 0.0)
    tissue_frame[geometry.vessel_mask(nz, nx)] = 0.0

    blood_rng = np.random.default_rng(blood_seq)
    blood_patterns = [_complex_gaussian(blood_rng, size) for _, size in geometry.rects]
    if config.blood_amplitude is None:
        tissue_energy = float(np.sum(np.abs(tissue_frame) ** 2))
        blood_energy = float(sum(np.sum(np.abs(pattern) ** 2) for pattern in blood_patterns))
        amplitude = math.sqrt(tissue_energy / blood_energy * 10.0 ** (config.blood_to_tissue_db / 10.0))
    else:
        amplitude = config.blood_amplitude

    blood = np.zeros((nz, nx, nt), dtype=np.complex128)
    shifts = np.zeros((nt, len(geometry.rects), 2), dtype=int)
    for t, frame_seq in enumerate(frame_seqs):
        frame_rng = np.random.default_rng(frame_seq)
        for r, ((top, left), (height, width)) in enumerate(geometry.rects):
            offset = frame_rng.integers(-config.max_shift, config.max_shift + 1, size=2)
            shifts[t, r] = offset
            blood[top:top + height, left:left + width, t] = \
                amplitude * np.roll(blood_patterns[r], tuple(offset), axis=(0, 1))

    x_true = CasoratiMatrix(stack_to_matrix(blood), nz, nx)
    op = embed_psf(psf, nz, nx)
    tissue = np.repeat(stack_to_matrix(tissue_frame[:, :, np.newaxis]), nt, axis=1)
    t_true = apply_to_casorati(CasoratiMatrix(tissue, nz, nx), op)
    s_observed = x_true.like(apply_to_casorati(x_true, op).data + t_true.data)

    logger.info("Phantom simulated", extra={"extra_data": {
        "shape": [nz, nx, nt], "seed": config.seed, "blood_amplitude": amplitude,
        "rects": [list(map(list, rect)) for rect in geometry.rects]}})
    return PhantomTruth(s_observed, x_true, t_true, psf, power_doppler(x_true), amplitude, shifts)


def bsnr_statistic(blurred_blood: np.ndarray, noise_variance: float) -> float:
    """10*log10(||HX - E(HX)||^2 / (N * sigma^2))."""
    centered = blurred_blood - np.mean(blurred_blood)
    return 10.0 * math.log10(float(np.sum(np.abs(centered) ** 2)) / (blurred_blood.size * noise_variance))


def bsnr_noise(blurred_blood: np.ndarray, bsnr_db: float, seed: int) -> Tuple[np.ndarray, float, float]:
    """
    Circular complex white noise for a target BSNR on the given H X. Returns
    the realisation, the variance it was drawn with and the empirical BSNR of
    the realisation.
    """
    if not math.isfinite(bsnr_db):
        raise ParameterError(f"BSNR must be finite or +inf, got {bsnr_db}")
    centered_energy = float(np.sum(np.abs(blurred_blood - np.mean(blurred_blood)) ** 2))
    if centered_energy == 0.0:
        raise ParameterError("BSNR is undefined when the blurred blood is constant")
    variance = centered_energy / (blurred_blood.size * 10.0 ** (bsnr_db / 10.0))
    rng = np.random.default_rng(seed)
    noise = _complex_gaussian(rng, blurred_blood.shape) * math.sqrt(variance)
    realized_variance = float(np.mean(np.abs(noise) ** 2))
    return noise, variance, bsnr_statistic(blurred_blood, realized_variance)


def add_noise_bsnr(truth: PhantomTruth, bsnr_db: float, seed: int) -> PhantomTruth:
    """Circular complex white noise with the variance that yields `bsnr_db`; +inf adds nothing."""
    if math.isinf(bsnr_db) and bsnr_db > 0:
        return truth
    noise, variance, empirical = bsnr_noise(truth.blurred_blood().data, bsnr_db, seed)
    logger.info("Noise added", extra={"extra_data": {
        "bsnr_db": bsnr_db, "empirical_bsnr_db": empirical, "noise_sigma": math.sqrt(variance), "seed": seed}})
    return replace(truth, s_observed=truth.s_observed.like(truth.s_observed.data + noise),
                   noise_sigma=math.sqrt(variance), bsnr_db=bsnr_db, empirical_bsnr_db=empirical)
