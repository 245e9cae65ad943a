"""
Baseline SVD clutter filter: keep singular components tc..tb (1-based, inclusive).
"""

import time

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy import linalg

from logging_config import logger
from separation.casorati import CasoratiMatrix
from separation.errors import ParameterError


class RankBand(BaseModel):
    """Clutter and blood rank thresholds."""

    tc: int = Field(2, ge=1, description="First kept singular component (clutter threshold)")
    tb: int = Field(15, ge=1, description="Last kept singular component (blood threshold)")

    @model_validator(mode="after")
    def _ordered(self):
        if self.tc > self.tb:
            raise ValueError(f"tc ({self.tc}) must not exceed tb ({self.tb})")
        return self


def svd_filter(S: CasoratiMatrix, band: RankBand) -> CasoratiMatrix:
    max_rank = min(S.shape)
    if band.tb > max_rank:
        raise ParameterError(f"Blood threshold tb={band.tb} exceeds min(nz*nx, nt) = {max_rank}")
    started = time.perf_counter()
    # gesdd returns singular values in descending order
    U, s, Vh = linalg.svd(S.data, full_matrices=False, lapack_driver="gesdd")
    keep = slice(band.tc - 1, band.tb)
    blood = (U[:, keep] * s[keep]) @ Vh[keep]
    logger.info(
        f"SVD filter kept components {band.tc}..{band.tb}",
        extra={"extra_data": {"method": "svd", "shape": list(S.shape),
                              "kept_energy": float(np.sum(s[keep] ** 2) / max(np.sum(s ** 2), 1e-300)),
                              "wall_time": time.perf_counter() - started}},
    )
    return S.like(blood)
