"""
BD-RPCA
-------
Alternates a DRPCA separation with a blind re-estimation of the PSF:

1. M = temporal mean of (S - T)           (clutter-filtered data, one 2D image)
2. H_e = blind_deconvolve(M).psf          (the temporal mean of X is not estimated)
3. [X, T] = drpca(S, H_e)                 (warm-started from the previous X, T)

until ||X_new - X||_F <= outer_tol or outer_max passes. X and T are
initialised by RPCA with their own parameter set. Each DRPCA pass resumes
from the previous pass: X, T and the constraint multiplier.

A fixed PSF (`psf_override`) cannot change between passes, so it runs a
single warm-started DRPCA pass.
"""

import time
from typing import List, Optional

import numpy as np

from logging_config import logger
from separation.blind_deconv import BdParams, blind_deconvolve
from separation.casorati import CasoratiMatrix, temporal_mean
from separation.drpca import DEFAULT_INNER_STEPS, DEFAULT_X_STEP, drpca
from separation.errors import ParameterError, SolverDivergenceError
from separation.linops import Psf
from separation.rpca import AdmmParams, IterationRecord, OuterRecord, SeparationResult, rpca

# Temporal means weaker than this (relative to ||S||) carry no PSF information
VANISHING_MEAN = 1e-10


def bdrpca(S: CasoratiMatrix, admm: AdmmParams, bd: BdParams, outer_tol: float = 1e-6, outer_max: int = 10,
           init_admm: Optional[AdmmParams] = None, psf_override: Optional[Psf] = None,
           x_step: str = DEFAULT_X_STEP, inner_steps: int = DEFAULT_INNER_STEPS) -> SeparationResult:
    """
    `init_admm` drives the RPCA initialisation (default: reference values with
    mu0 = 10 and `admm`'s stopping settings). `psf_override` skips the blind
    step: the result is then drpca warm-started from the RPCA initialisation.
    """
    if outer_tol <= 0:
        raise ParameterError(f"outer_tol must be positive, got {outer_tol}")
    if outer_max < 1:
        raise ParameterError(f"outer_max must be >= 1, got {outer_max}")
    started = time.perf_counter()
    if init_admm is None:
        init_admm = AdmmParams.reference(S.nz, S.nx, S.nt, mu0=10.0, rho=admm.rho, tol=admm.tol,
                                         max_iter=admm.max_iter)

    current = rpca(S, init_admm)
    trace: List[IterationRecord] = list(current.trace)
    outer_trace: List[OuterRecord] = []
    psf = psf_override if psf_override is not None else Psf.delta()
    s_norm = S.norm()
    converged = False

    logger.info("BD-RPCA started", extra={"extra_data": {
        "method": "bdrpca", "shape": list(S.shape), "outer_max": outer_max, "outer_tol": outer_tol}})

    for outer in range(1, outer_max + 1):
        psf_updated = False
        if psf_override is None:
            M = temporal_mean(S.like(S.data - current.tissue.data))
            peak = float(np.max(np.abs(M)))
            if np.linalg.norm(M) <= VANISHING_MEAN * max(s_norm, 1e-300):
                logger.warning("Temporal mean of S - T vanishes; keeping the previous PSF",
                               extra={"extra_data": {"outer_iteration": outer}})
            else:
                try:
                    # Huber knee is set for images of unit peak amplitude
                    psf, _ = blind_deconvolve(M / peak, bd, bd.n_outer)
                except SolverDivergenceError as err:
                    raise err.with_outer(outer) from err
                psf_updated = True

        try:
            updated = drpca(S, psf, admm, init=current, x_step=x_step, inner_steps=inner_steps)
        except SolverDivergenceError as err:
            raise err.with_outer(outer) from err

        x_change = float(np.linalg.norm(updated.blood.data - current.blood.data))
        trace.extend(updated.trace)
        outer_trace.append(OuterRecord(outer, x_change, updated.iterations, psf_updated))
        logger.info(f"BD-RPCA outer iteration {outer}", extra={"extra_data": {
            "method": "bdrpca", "outer_iteration": outer, "x_change": x_change,
            "inner_iterations": updated.iterations, "psf_updated": psf_updated}})
        current = updated
        if psf_override is not None:
            converged = updated.converged
            break
        if x_change <= outer_tol:
            converged = True
            break

    wall_time = time.perf_counter() - started
    logger.info(f"BD-RPCA finished after {len(outer_trace)} outer iterations", extra={"extra_data": {
        "method": "bdrpca", "outer_iterations": len(outer_trace), "converged": converged, "wall_time": wall_time}})
    return SeparationResult(current.blood, current.tissue, "bdrpca", psf=current.psf, trace=trace,
                            outer_trace=outer_trace, converged=converged, wall_time=wall_time,
                            dual=current.dual)
