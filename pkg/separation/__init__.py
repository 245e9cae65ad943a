"""
Tissue / blood separation of ultrafast Doppler sequences.

Estimators: SVD clutter filter, RPCA, deconvolutive RPCA with a known PSF and
BD-RPCA, which re-estimates the PSF by blind deconvolution between separations.
"""

from separation.casorati import CasoratiMatrix, IQStack, from_casorati, temporal_mean, to_casorati
from separation.errors import GeometryError, ParameterError, ShapeError, SolverDivergenceError
from separation.linops import FrequencyOperator, Psf, apply_to_casorati, conv2_circ, conv2_circ_adjoint, embed_psf
from separation.rpca import AdmmParams, SeparationResult, reference_hyperparams, rpca
from separation.svd_filter import RankBand, svd_filter
from separation.drpca import drpca
from separation.blind_deconv import BdParams, MagnitudeSpectrum, blind_deconvolve
from separation.bdrpca import bdrpca

__all__ = [
    "AdmmParams", "BdParams", "CasoratiMatrix", "FrequencyOperator", "GeometryError", "IQStack",
    "MagnitudeSpectrum", "ParameterError", "Psf", "RankBand", "SeparationResult", "ShapeError",
    "SolverDivergenceError", "apply_to_casorati", "bdrpca", "blind_deconvolve", "conv2_circ",
    "conv2_circ_adjoint", "drpca", "embed_psf", "from_casorati", "reference_hyperparams", "rpca",
    "svd_filter", "temporal_mean", "to_casorati",
]
