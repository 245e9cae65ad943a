"""
FFT-based circular convolution
------------------------------
The blurring operator H is block circulant with circulant blocks, so it is
diagonal in the 2D DFT basis. A `FrequencyOperator` stores that diagonal
(the transfer function) for one image size and is applied frame by frame.

DFT convention: unnormalised forward transform, 1/(nz*nx) on the inverse
(scipy.fft's default "backward" norm).
"""

import os
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import fft as sp_fft

from separation.casorati import CasoratiMatrix, matrix_to_stack, stack_to_matrix
from separation.errors import ParameterError, ShapeError

_fft_workers: Optional[int] = None


def set_fft_workers(workers: Optional[int]) -> None:
    """Thread count for scipy.fft; None falls back to DOPPLER_THREADS or a single thread."""
    global _fft_workers
    _fft_workers = workers


def fft_workers() -> Optional[int]:
    if _fft_workers is not None:
        return _fft_workers
    env = os.getenv("DOPPLER_THREADS")
    return int(env) if env else None


def fft2(a: np.ndarray) -> np.ndarray:
    return sp_fft.fft2(a, axes=(0, 1), workers=fft_workers())


def ifft2(a: np.ndarray) -> np.ndarray:
    return sp_fft.ifft2(a, axes=(0, 1), workers=fft_workers())


@dataclass(frozen=True, eq=False)
class Psf:
    """Small convolution kernel; `center` is the sample that lands on the output pixel."""

    kernel: np.ndarray
    center: Optional[Tuple[int, int]] = None
    normalized: bool = False

    def __post_init__(self):
        kernel = np.array(self.kernel, dtype=np.complex128, copy=True)
        if kernel.ndim != 2 or min(kernel.shape) < 1:
            raise ShapeError(f"PSF kernel must be a non-empty 2D array, got shape {kernel.shape}")
        if not np.all(np.isfinite(kernel)):
            raise ValueError("PSF kernel contains NaN or Inf")
        kh, kw = kernel.shape
        center = self.center if self.center is not None else (kh // 2, kw // 2)
        center = (int(center[0]), int(center[1]))
        if not (0 <= center[0] < kh and 0 <= center[1] < kw):
            raise ParameterError(f"PSF center {center} lies outside the {kh}x{kw} kernel")
        if self.normalized and abs(np.sum(np.abs(kernel) ** 2) - 1.0) > 1e-9:
            raise ParameterError("PSF flagged as normalized but its energy is not 1")
        kernel.flags.writeable = False
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "center", center)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.kernel.shape

    def energy(self) -> float:
        return float(np.sum(np.abs(self.kernel) ** 2))

    def normalized_copy(self) -> "Psf":
        """Same kernel scaled to unit energy."""
        energy = self.energy()
        if energy == 0.0:
            raise ParameterError("Cannot normalize an all-zero PSF")
        return Psf(self.kernel / np.sqrt(energy), self.center, normalized=True)

    @classmethod
    def delta(cls) -> "Psf":
        return cls(np.ones((1, 1)), (0, 0), normalized=True)


@dataclass(frozen=True, eq=False)
class FrequencyOperator:
    """Diagonalised circular convolution on nz x nx images."""

    transfer: np.ndarray

    def __post_init__(self):
        transfer = np.array(self.transfer, dtype=np.complex128, copy=True)
        if transfer.ndim != 2:
            raise ShapeError("Transfer function must be 2D")
        transfer.flags.writeable = False
        object.__setattr__(self, "transfer", transfer)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.transfer.shape

    def lipschitz(self) -> float:
        """Largest eigenvalue of H^H H."""
        return float(np.max(np.abs(self.transfer)) ** 2)


def embed_psf(psf: Psf, nz: int, nx: int) -> FrequencyOperator:
    kh, kw = psf.shape
    if kh > nz or kw > nx:
        raise ShapeError(f"PSF of size {kh}x{kw} does not fit in a {nz}x{nx} image")
    padded = np.zeros((nz, nx), dtype=np.complex128)
    padded[:kh, :kw] = psf.kernel
    padded = np.roll(padded, (-psf.center[0], -psf.center[1]), axis=(0, 1))
    return FrequencyOperator(fft2(padded))


def adjoint_operator(op: FrequencyOperator) -> FrequencyOperator:
    return FrequencyOperator(np.conj(op.transfer))


def compose(first: FrequencyOperator, second: FrequencyOperator) -> FrequencyOperator:
    """Operator applying `first` then `second`."""
    if first.dims != second.dims:
        raise ShapeError(f"Cannot compose operators of dims {first.dims} and {second.dims}")
    return FrequencyOperator(first.transfer * second.transfer)


def flip_conjugate(psf: Psf) -> Psf:
    """Kernel of the adjoint operator: conjugated, flipped, center mirrored."""
    kh, kw = psf.shape
    center = (kh - 1 - psf.center[0], kw - 1 - psf.center[1])
    return Psf(np.conj(psf.kernel[::-1, ::-1]), center, psf.normalized)


def _check_dims(image: np.ndarray, op: FrequencyOperator) -> None:
    if image.shape[:2] != op.dims:
        raise ShapeError(f"Image dims {image.shape[:2]} do not match operator dims {op.dims}")


def conv2_circ(image: np.ndarray, op: FrequencyOperator) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ShapeError(f"conv2_circ expects a 2D image, got {image.ndim}D")
    _check_dims(image, op)
    return ifft2(fft2(image) * op.transfer)


def conv2_circ_adjoint(image: np.ndarray, op: FrequencyOperator) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ShapeError(f"conv2_circ_adjoint expects a 2D image, got {image.ndim}D")
    _check_dims(image, op)
    return ifft2(fft2(image) * np.conj(op.transfer))


def frames_spectrum(data: np.ndarray, nz: int, nx: int) -> np.ndarray:
    """Per-frame 2D DFT of Casorati-form data, shape (nz, nx, nt)."""
    return fft2(matrix_to_stack(data, nz, nx))


def frames_from_spectrum(spectrum: np.ndarray) -> np.ndarray:
    """Inverse of `frames_spectrum`, back to Casorati form."""
    return stack_to_matrix(ifft2(spectrum))


def apply_to_casorati(m: CasoratiMatrix, op: FrequencyOperator, adjoint: bool = False) -> CasoratiMatrix:
    """Convolve every frame with H (or H^H); frames are independent."""
    if (m.nz, m.nx) != op.dims:
        raise ShapeError(f"Matrix frame dims {(m.nz, m.nx)} do not match operator dims {op.dims}")
    transfer = np.conj(op.transfer) if adjoint else op.transfer
    spectrum = frames_spectrum(m.data, m.nz, m.nx) * transfer[:, :, np.newaxis]
    return m.like(frames_from_spectrum(spectrum))
