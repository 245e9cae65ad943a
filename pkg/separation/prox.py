"""
Proximal operators and penalties shared by the ADMM solvers.

Complex l1 is the sum of moduli; its prox shrinks the modulus and keeps the
phase. Huber acts on moduli as well, and its gradient is returned packed as
d/dRe + i d/dIm (twice the Wirtinger derivative with respect to conj(F)).
"""

from typing import Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy import linalg

from separation.errors import ParameterError


class HuberParams(BaseModel):
    """Weight and knee of the Huber penalty."""

    gamma: float = Field(0.002, gt=0, description="Regularization weight")
    a: float = Field(0.05, gt=0, description="Transition point between quadratic and linear branches")


def _check_tau(tau: float) -> None:
    if tau < 0:
        raise ParameterError(f"Threshold must be non-negative, got {tau}")


def soft_threshold(Z: np.ndarray, tau: float) -> np.ndarray:
    _check_tau(tau)
    Z = np.asarray(Z)
    if tau == 0:
        return Z.copy()
    magnitude = np.abs(Z)
    scale = np.zeros(magnitude.shape)
    np.divide(tau, magnitude, out=scale, where=magnitude > 0)
    shrink = np.maximum(1.0 - scale, 0.0)
    shrink[magnitude == 0] = 0.0
    return Z * shrink


def svt_with_spectrum(Z: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """SVT that also returns the thresholded singular values (for nuclear norms)."""
    _check_tau(tau)
    Z = np.asarray(Z)
    if not np.all(np.isfinite(Z)):
        raise ValueError("SVT input contains NaN or Inf")
    U, s, Vh = linalg.svd(Z, full_matrices=False, lapack_driver="gesdd")
    s = np.maximum(s - tau, 0.0)
    rank = int(np.count_nonzero(s))
    if rank == 0:
        return np.zeros_like(Z, dtype=np.result_type(Z, np.float64)), s
    return (U[:, :rank] * s[:rank]) @ Vh[:rank], s


def svt(Z: np.ndarray, tau: float) -> np.ndarray:
    return svt_with_spectrum(Z, tau)[0]


def huber_value(F: np.ndarray, p: HuberParams) -> float:
    magnitude = np.abs(np.asarray(F))
    quadratic = magnitude <= p.a
    terms = np.where(quadratic, magnitude ** 2, 2.0 * p.a * magnitude - p.a ** 2)
    return float(p.gamma * np.sum(terms))


def huber_gradient(F: np.ndarray, p: HuberParams) -> np.ndarray:
    F = np.asarray(F)
    magnitude = np.abs(F)
    # linear branch: 2*gamma*a*F/|F|; |F| > a > 0 there
    scale = np.where(magnitude <= p.a, 1.0, p.a / np.maximum(magnitude, p.a))
    return 2.0 * p.gamma * scale * F
