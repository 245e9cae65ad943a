"""
IQ stacks and Casorati matrices
-------------------------------
An ultrafast acquisition is a cube of complex IQ samples indexed (z, x, t).
Every estimator works on its Casorati form: each frame flattened into one
column, giving a (nz*nx) x nt matrix.

Flattening order is fixed for the whole code base: z varies fastest, so the
row of pixel (z, x) is ``z + nz * x``. Use `flatten_frame` / `unflatten_frame`
rather than reshaping by hand.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from separation.errors import ShapeError

COMPLEX_DTYPE = np.complex128
_MAX_ROWS = np.iinfo(np.intp).max


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=COMPLEX_DTYPE, copy=True)
    out.flags.writeable = False
    return out


def flatten_frame(image: np.ndarray) -> np.ndarray:
    """(nz, nx) image -> length nz*nx vector, z fastest."""
    return np.reshape(image, -1, order="F")


def unflatten_frame(vector: np.ndarray, nz: int, nx: int) -> np.ndarray:
    """Inverse of `flatten_frame`."""
    return np.reshape(vector, (nz, nx), order="F")


def pixel_row(z: int, x: int, nz: int) -> int:
    return z + nz * x


def stack_to_matrix(cube: np.ndarray) -> np.ndarray:
    """(nz, nx, nt) array -> (nz*nx, nt) array in the shared flattening order."""
    nz, nx, nt = cube.shape
    return np.reshape(cube, (nz * nx, nt), order="F")


def matrix_to_stack(matrix: np.ndarray, nz: int, nx: int) -> np.ndarray:
    """(nz*nx, nt) array -> (nz, nx, nt) array; inverse of `stack_to_matrix`."""
    if matrix.shape[0] != nz * nx:
        raise ShapeError(f"Matrix has {matrix.shape[0]} rows, expected nz*nx = {nz * nx}")
    return np.reshape(matrix, (nz, nx, matrix.shape[1]), order="F")


@dataclass(frozen=True, eq=False)
class IQStack:
    """Complex IQ cube with optional acquisition metadata (pitches in cm, frame rate in Hz)."""

    data: np.ndarray
    dz: Optional[float] = None
    dx: Optional[float] = None
    frame_rate: Optional[float] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, np.newaxis]
        if data.ndim != 3:
            raise ShapeError(f"IQ stack must be 3D (z, x, t), got {data.ndim}D")
        if min(data.shape) < 1:
            raise ShapeError(f"IQ stack dimensions must be >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("IQ stack contains NaN or Inf samples")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def nz(self) -> int:
        return self.data.shape[0]

    @property
    def nx(self) -> int:
        return self.data.shape[1]

    @property
    def nt(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class CasoratiMatrix:
    """Space x time matrix; nz and nx are kept so the cube can be rebuilt."""

    data: np.ndarray
    nz: int
    nx: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ShapeError(f"Casorati data must be 2D, got {data.ndim}D")
        if self.nz < 1 or self.nx < 1:
            raise ShapeError(f"Spatial dimensions must be >= 1, got ({self.nz}, {self.nx})")
        if data.shape[0] != self.nz * self.nx:
            raise ShapeError(
                f"Casorati matrix has {data.shape[0]} rows, expected nz*nx = {self.nz * self.nx}"
            )
        if data.shape[1] < 1:
            raise ShapeError("Casorati matrix needs at least one frame")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def nt(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def cube(self) -> np.ndarray:
        """The (nz, nx, nt) view of the data."""
        return matrix_to_stack(self.data, self.nz, self.nx)

    def like(self, data: np.ndarray) -> "CasoratiMatrix":
        """A new matrix with the same spatial dims and different data."""
        return CasoratiMatrix(data, self.nz, self.nx)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


def to_casorati(stack: IQStack) -> CasoratiMatrix:
    if stack.nz * stack.nx > _MAX_ROWS:
        raise ShapeError(f"nz*nx = {stack.nz}*{stack.nx} exceeds the index range")
    return CasoratiMatrix(stack_to_matrix(stack.data), stack.nz, stack.nx)


def from_casorati(m: CasoratiMatrix, dz: Optional[float] = None, dx: Optional[float] = None,
                  frame_rate: Optional[float] = None) -> IQStack:
    return IQStack(matrix_to_stack(m.data, m.nz, m.nx), dz=dz, dx=dx, frame_rate=frame_rate)


def temporal_mean(m: CasoratiMatrix) -> np.ndarray:
    """Mean over frames, returned as an (nz, nx) image."""
    return unflatten_frame(np.mean(m.data, axis=1), m.nz, m.nx)
