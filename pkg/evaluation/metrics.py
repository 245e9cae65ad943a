"""
Power Doppler rendering and image quality metrics.

NRMSE and PSNR compare unfloored dB images (clamped at NUMERIC_FLOOR_DB).
Contrast ratios use the display image, floored at max - dynamic_range, and
average linear power inside each patch.
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from separation.casorati import CasoratiMatrix, unflatten_frame
from separation.errors import GeometryError, ShapeError
from separation.linops import fft2, ifft2

NUMERIC_FLOOR_DB = -300.0
DEFAULT_DYNAMIC_RANGE = 35.0


@dataclass(frozen=True, eq=False)
class PowerDopplerImage:
    db: np.ndarray
    dynamic_range: float = DEFAULT_DYNAMIC_RANGE

    def __post_init__(self):
        db = np.array(self.db, dtype=np.float64, copy=True)
        if db.ndim != 2:
            raise ShapeError(f"Power Doppler image must be 2D, got {db.ndim}D")
        db = np.maximum(db, NUMERIC_FLOOR_DB)
        if not np.all(np.isfinite(db)):
            raise ValueError("Power Doppler image contains NaN or +Inf")
        db.flags.writeable = False
        object.__setattr__(self, "db", db)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.db.shape

    def display_db(self) -> np.ndarray:
        """dB image floored at (max - dynamic_range)."""
        return np.maximum(self.db, np.max(self.db) - self.dynamic_range)

    def display_power(self) -> np.ndarray:
        return 10.0 ** (self.display_db() / 10.0)


@dataclass(frozen=True)
class PatchRect:
    top: int
    left: int
    height: int
    width: int

    def check(self, shape: Tuple[int, int]) -> None:
        nz, nx = shape
        if self.height < 1 or self.width < 1:
            raise GeometryError(f"Patch size ({self.height}, {self.width}) must be positive")
        if self.top < 0 or self.left < 0 or self.top + self.height > nz or self.left + self.width > nx:
            raise GeometryError(f"Patch {self} does not fit in a {nz}x{nx} image")

    def slices(self) -> Tuple[slice, slice]:
        return slice(self.top, self.top + self.height), slice(self.left, self.left + self.width)


@dataclass(frozen=True)
class CrSweep:
    values: List[float]
    median: float
    q1: float
    q3: float

    @property
    def count(self) -> int:
        return len(self.values)


def power_doppler(B: CasoratiMatrix, dynamic_range: float = DEFAULT_DYNAMIC_RANGE) -> PowerDopplerImage:
    power = np.mean(np.abs(B.data) ** 2, axis=1)
    floor = 10.0 ** (NUMERIC_FLOOR_DB / 10.0)
    db = 10.0 * np.log10(np.maximum(power, floor))
    return PowerDopplerImage(unflatten_frame(db, B.nz, B.nx), dynamic_range)


def _same_shape(ref: PowerDopplerImage, est: PowerDopplerImage) -> None:
    if ref.shape != est.shape:
        raise ShapeError(f"Image shapes differ: {ref.shape} vs {est.shape}")


def nrmse(ref: PowerDopplerImage, est: PowerDopplerImage) -> float:
    _same_shape(ref, est)
    ref_energy = float(np.sum(ref.db ** 2))
    if ref_energy == 0.0:
        raise ValueError("NRMSE is undefined for an all-zero reference image")
    return math.sqrt(float(np.sum((ref.db - est.db) ** 2)) / ref_energy)


def psnr(ref: PowerDopplerImage, est: PowerDopplerImage, d_max: float = DEFAULT_DYNAMIC_RANGE) -> float:
    """10*log10(d_max^2 / MSE); +inf when the images are identical."""
    _same_shape(ref, est)
    mse = float(np.mean((ref.db - est.db) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(d_max ** 2 / mse)


def _patch_mean(power: np.ndarray, patch: PatchRect) -> float:
    patch.check(power.shape)
    return float(np.mean(power[patch.slices()]))


def contrast_ratio(img: PowerDopplerImage, r1: PatchRect, r2: PatchRect) -> float:
    """20*log10(mean_R2 / mean_R1) on linear display power; R1 is the background patch."""
    power = img.display_power()
    background = _patch_mean(power, r1)
    if background <= 0.0:
        raise ValueError("Background patch has zero mean power")
    return 20.0 * math.log10(_patch_mean(power, r2) / background)


def cr_sweep(img: PowerDopplerImage, r1: PatchRect, patch_h: int = 13, patch_w: int = 12) -> CrSweep:
    """CR of every non-overlapping patch_h x patch_w tile (row-major) against the fixed R1."""
    nz, nx = img.shape
    rows, cols = nz // patch_h, nx // patch_w
    if rows == 0 or cols == 0:
        raise GeometryError(f"A {nz}x{nx} image holds no {patch_h}x{patch_w} patch")
    values = [contrast_ratio(img, r1, PatchRect(i * patch_h, j * patch_w, patch_h, patch_w))
              for i in range(rows) for j in range(cols)]
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    return CrSweep(values, float(median), float(q1), float(q3))


def _zero_pad(a: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    return np.pad(a, ((0, shape[0] - a.shape[0]), (0, shape[1] - a.shape[1])))


def kernel_similarity(estimate: np.ndarray, reference: np.ndarray) -> float:
    """
    Peak normalised cross-correlation magnitude over all relative shifts, so
    kernels are compared up to translation and a global phase.
    """
    a = np.asarray(estimate, dtype=np.complex128)
    b = np.asarray(reference, dtype=np.complex128)
    shape = (a.shape[0] + b.shape[0], a.shape[1] + b.shape[1])
    correlation = ifft2(fft2(_zero_pad(a, shape)) * np.conj(fft2(_zero_pad(b, shape))))
    denominator = np.linalg.norm(a) * np.linalg.norm(b)
    if denominator == 0.0:
        raise ValueError("Kernel similarity is undefined for an all-zero kernel")
    return float(np.max(np.abs(correlation)) / denominator)


def lateral_edge_slope(img: PowerDopplerImage, rows: Tuple[int, int], cols: Tuple[int, int]) -> float:
    """Largest |d/dx| of the display image inside the given row and column window."""
    window = img.display_db()[rows[0]:rows[1], cols[0]:cols[1]]
    if window.shape[1] < 2:
        raise GeometryError("Edge window needs at least two columns")
    return float(np.max(np.abs(np.diff(window, axis=1))))
