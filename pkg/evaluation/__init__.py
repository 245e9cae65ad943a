"""Power Doppler images and quality metrics."""

from evaluation.metrics import (CrSweep, PatchRect, PowerDopplerImage, contrast_ratio, cr_sweep, nrmse,
                                power_doppler, psnr)

__all__ = ["CrSweep", "PatchRect", "PowerDopplerImage", "contrast_ratio", "cr_sweep", "nrmse",
           "power_doppler", "psnr"]
