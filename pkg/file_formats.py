"""
On-disk formats
---------------
* Complex data (IQ stacks, Casorati matrices, PSF kernels): raw little-endian
  32-bit float (real, imag) pairs, z fastest, then x, then t; no header.
* Power Doppler images: raw little-endian float64 dB values (z fastest) plus
  an 8-bit grayscale PNG quantised over the display dynamic range.
* Every raw file has a JSON sidecar `<file>.json` holding shape and metadata
  (see schemas.Sidecar) with a format version.
"""

import hashlib
import json
import os
from typing import Any, Dict, Tuple

import numpy as np
from PIL import Image

from evaluation.metrics import PowerDopplerImage
from schemas import FORMAT_VERSION, Sidecar
from separation.casorati import CasoratiMatrix, IQStack, stack_to_matrix
from separation.errors import ShapeError
from separation.linops import Psf

COMPLEX_ON_DISK = np.dtype("<c8")
FLOAT_ON_DISK = np.dtype("<f8")


def sidecar_path(path: str) -> str:
    return path + ".json"


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(path: str, payload: Dict[str, Any]) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path: str) -> Dict[str, Any]:
    with open(path, "r") as f:
        return json.load(f)


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _write_raw(path: str, array: np.ndarray, dtype: np.dtype, sidecar: Sidecar) -> None:
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(np.asarray(array).astype(dtype).ravel(order="F").tobytes())
    write_json(sidecar_path(path), sidecar.model_dump(exclude_none=True))


def _read_raw(path: str, dtype: np.dtype) -> Tuple[np.ndarray, Sidecar]:
    sidecar = Sidecar(**read_json(sidecar_path(path)))
    if sidecar.format_version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {sidecar.format_version}")
    with open(path, "rb") as f:
        flat = np.frombuffer(f.read(), dtype=dtype)
    expected = int(np.prod(sidecar.shape))
    if flat.size != expected:
        raise ShapeError(f"{path}: holds {flat.size} samples, sidecar declares {sidecar.shape}")
    return np.reshape(flat, sidecar.shape, order="F"), sidecar


def write_stack(path: str, stack: IQStack) -> None:
    sidecar = Sidecar(kind="iq_stack", dtype="complex64-le", shape=list(stack.shape),
                      dz=stack.dz, dx=stack.dx, frame_rate=stack.frame_rate)
    _write_raw(path, stack.data, COMPLEX_ON_DISK, sidecar)


def read_stack(path: str) -> IQStack:
    data, sidecar = _read_raw(path, COMPLEX_ON_DISK)
    if sidecar.kind != "iq_stack" or len(sidecar.shape) != 3:
        raise ShapeError(f"{path}: not an IQ stack")
    return IQStack(data.astype(np.complex128), dz=sidecar.dz, dx=sidecar.dx, frame_rate=sidecar.frame_rate)


def read_casorati(path: str) -> CasoratiMatrix:
    stack = read_stack(path)
    return CasoratiMatrix(stack_to_matrix(stack.data), stack.nz, stack.nx)


def write_psf(path: str, psf: Psf) -> None:
    sidecar = Sidecar(kind="psf", dtype="complex64-le", shape=list(psf.shape), center=psf.center,
                      normalized=psf.normalized)
    _write_raw(path, psf.kernel, COMPLEX_ON_DISK, sidecar)


def read_psf(path: str) -> Psf:
    kernel, sidecar = _read_raw(path, COMPLEX_ON_DISK)
    if sidecar.kind != "psf" or len(sidecar.shape) != 2:
        raise ShapeError(f"{path}: not a PSF kernel")
    # float32 storage breaks the exact unit energy, so the flag is restored by renormalising
    psf = Psf(kernel.astype(np.complex128), sidecar.center)
    return psf.normalized_copy() if sidecar.normalized else psf


def quantize_display(img: PowerDopplerImage) -> np.ndarray:
    """8-bit grayscale over [max - dynamic_range, max]."""
    display = img.display_db()
    low = float(np.max(display)) - img.dynamic_range
    scaled = np.clip((display - low) / img.dynamic_range, 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def write_magnitude_png(path: str, image: np.ndarray) -> None:
    magnitude = np.abs(image)
    peak = float(np.max(magnitude))
    scaled = magnitude / peak if peak > 0 else magnitude
    _ensure_parent(path)
    Image.fromarray(np.round(scaled * 255.0).astype(np.uint8), mode="L").save(path)


def write_power_doppler(stem: str, img: PowerDopplerImage) -> Tuple[str, str]:
    """Writes `<stem>.f64` (+ sidecar) and `<stem>.png`; returns both paths."""
    raw_path = stem + ".f64"
    png_path = stem + ".png"
    sidecar = Sidecar(kind="power_doppler", dtype="float64-le", shape=list(img.shape),
                      dynamic_range=img.dynamic_range)
    _write_raw(raw_path, img.db, FLOAT_ON_DISK, sidecar)
    Image.fromarray(quantize_display(img), mode="L").save(png_path)
    return raw_path, png_path


def read_power_doppler(path: str) -> PowerDopplerImage:
    db, sidecar = _read_raw(path, FLOAT_ON_DISK)
    if sidecar.kind != "power_doppler" or len(sidecar.shape) != 2:
        raise ShapeError(f"{path}: not a power Doppler image")
    return PowerDopplerImage(db, sidecar.dynamic_range or 35.0)
