"""Simulated acquisitions with known ground truth."""

from simulation.phantom import PhantomConfig, PhantomTruth, add_noise_bsnr, bsnr_noise, simulate, synth_psf

__all__ = ["PhantomConfig", "PhantomTruth", "add_noise_bsnr", "bsnr_noise", "simulate", "synth_psf"]
