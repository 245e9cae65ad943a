"""
RPCA by ADMM
------------
Solves  min lambda*||B||_1 + rho*||T||_*  s.t.  S = B + T  with the scaled
augmented Lagrangian. Each iteration is one soft-threshold B-step, one SVT
T-step and one dual ascent step with a fixed penalty mu.

Also home of the parameter and result types shared by DRPCA and BD-RPCA.
"""

import math
import time
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from logging_config import logger
from separation.casorati import CasoratiMatrix
from separation.errors import ShapeError, SolverDivergenceError
from separation.linops import Psf
from separation.prox import soft_threshold, svt_with_spectrum

RELATIVE_FLOOR = 1e-12


class AdmmParams(BaseModel):
    """Hyperparameters of the ADMM solvers. `lam` is also accepted as "lambda"."""

    model_config = ConfigDict(populate_by_name=True)

    lam: float = Field(..., gt=0, alias="lambda", description="Sparsity weight")
    rho: float = Field(1.0, gt=0, description="Low-rank weight")
    mu: float = Field(..., gt=0, description="Augmented Lagrangian penalty")
    tol: float = Field(1e-6, gt=0, description="Relative change of the sparse term that stops the solver")
    max_iter: int = Field(200, ge=1)
    log_every: int = Field(25, ge=1, description="Iterations between debug log records")

    @classmethod
    def reference(cls, nz: int, nx: int, nt: int, mu0: float, **overrides) -> "AdmmParams":
        lam, mu = reference_hyperparams(nz, nx, nt, mu0)
        values = {"lam": lam, "mu": mu}
        values.update(overrides)
        return cls(**values)


def reference_hyperparams(nz: int, nx: int, nt: int, mu0: float) -> Tuple[float, float]:
    """lambda_ref = 1/sqrt(max(nz*nx, nt)); mu_ref = mu0 * lambda_ref."""
    if min(nz, nx, nt) < 1:
        raise ValueError(f"Dimensions must be >= 1, got ({nz}, {nx}, {nt})")
    if mu0 <= 0:
        raise ValueError(f"mu0 must be positive, got {mu0}")
    lam = 1.0 / math.sqrt(max(nz * nx, nt))
    return lam, mu0 * lam


@dataclass
class IterationRecord:
    iteration: int
    primal_residual: float
    objective: float
    relative_change: float


@dataclass
class OuterRecord:
    """One BD-RPCA alternation."""
    outer_iteration: int
    x_change: float
    inner_iterations: int
    psf_updated: bool


@dataclass(eq=False)
class SeparationResult:
    """Blood (B for RPCA, X for the deconvolutive methods), tissue, optional PSF, convergence trace."""

    blood: CasoratiMatrix
    tissue: CasoratiMatrix
    method: str
    psf: Optional[Psf] = None
    trace: List[IterationRecord] = field(default_factory=list)
    outer_trace: List[OuterRecord] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    # Lagrange multiplier of the S = B + T (or HX + T) constraint, for warm starts
    dual: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def trace_records(self) -> List[dict]:
        return [asdict(record) for record in self.trace]

    def outer_records(self) -> List[dict]:
        return [asdict(record) for record in self.outer_trace]


def check_finite(method: str, iteration: int, value: float, what: str = "primal residual") -> None:
    if not math.isfinite(value):
        raise SolverDivergenceError(method, iteration, f"non-finite {what} (check mu)")


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), RELATIVE_FLOOR))


def initial_state(data: np.ndarray, init: Optional[SeparationResult]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(blood, tissue, multiplier): zeros, or the state of an earlier run."""
    if init is None:
        return np.zeros_like(data), np.zeros_like(data), np.zeros_like(data)
    if init.blood.shape != data.shape or init.tissue.shape != data.shape:
        raise ShapeError(f"Warm start of shape {init.blood.shape} does not match data of shape {data.shape}")
    nu = np.zeros_like(data) if init.dual is None else np.array(init.dual)
    return np.array(init.blood.data), np.array(init.tissue.data), nu


def sparse_update(S: np.ndarray, T: np.ndarray, nu: np.ndarray, p: AdmmParams) -> np.ndarray:
    """B-step: argmin_B lambda*||B||_1 + mu/2*||S - B - T + nu/mu||^2."""
    return soft_threshold(S - T + nu / p.mu, p.lam / p.mu)


def rpca(S: CasoratiMatrix, p: AdmmParams, init: Optional[SeparationResult] = None) -> SeparationResult:
    started = time.perf_counter()
    data = S.data
    if not np.all(np.isfinite(data)):
        raise ValueError("Observed matrix contains NaN or Inf")

    B, T, nu = initial_state(data, init)

    logger.info(f"RPCA started on {S.shape[0]}x{S.shape[1]} matrix",
                extra={"extra_data": {"method": "rpca", "params": p.model_dump()}})

    trace: List[IterationRecord] = []
    converged = False
    for k in range(1, p.max_iter + 1):
        B_new = sparse_update(data, T, nu, p)
        if not np.all(np.isfinite(B_new)):
            raise SolverDivergenceError("rpca", k, "non-finite sparse iterate (check mu)")
        T, singular_values = svt_with_spectrum(data - B_new + nu / p.mu, p.rho / p.mu)
        residual = data - B_new - T
        nu = nu + p.mu * residual

        residual_norm = float(np.linalg.norm(residual))
        check_finite("rpca", k, residual_norm)
        objective = p.lam * float(np.sum(np.abs(B_new))) + p.rho * float(np.sum(singular_values))
        change = relative_change(B_new, B)
        B = B_new
        trace.append(IterationRecord(k, residual_norm, objective, change))

        if k % p.log_every == 0:
            logger.debug(f"rpca iteration {k}", extra={"extra_data": {
                "method": "rpca", "iteration": k, "primal_residual": residual_norm, "relative_change": change}})
        if change < p.tol:
            converged = True
            break

    wall_time = time.perf_counter() - started
    logger.info(f"RPCA finished after {len(trace)} iterations", extra={"extra_data": {
        "method": "rpca", "iterations": len(trace), "converged": converged,
        "primal_residual": trace[-1].primal_residual, "wall_time": wall_time}})
    return SeparationResult(S.like(B), S.like(T), "rpca", trace=trace, converged=converged,
                            wall_time=wall_time, dual=nu)
