import argparse
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from logging_config import logger

import main_pipeline
from file_formats import read_json
from schemas import PsfExportParams, RunConfig, SimulateParams, SweepParams
from separation.errors import SolverDivergenceError
from separation.linops import set_fft_workers
from simulation.phantom import PhantomConfig

load_dotenv()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

PHANTOM_FLAGS = ["nz", "nx", "nt", "seed", "max_shift", "tissue_density", "blood_amplitude",
                 "blood_to_tissue_db"]
PSF_FLAGS = {"psf_fc": "fc_fraction", "psf_sigma_z": "sigma_z", "psf_sigma_x": "sigma_x",
             "psf_support": "support"}
RUN_FLAGS = ["method", "input", "psf", "lam", "mu", "mu0", "rho", "tol", "max_iter", "init_lam", "init_mu",
             "tc", "tb", "gamma", "a", "cepstral_cutoff", "psf_support", "inner_tol", "inner_max_iter",
             "n_outer", "outer_tol", "outer_max", "x_step", "inner_steps", "seed", "bsnr", "snr", "truth", "report"]


def load_config(path: Optional[str]) -> Dict[str, Any]:
    """A plain JSON parameter file, or a manifest of an earlier run (its `parameters` are used)."""
    if not path:
        return {}
    payload = read_json(path)
    if "command" in payload and "parameters" in payload:
        return dict(payload["parameters"])
    return payload


def flags_set(args: argparse.Namespace, names: List[str]) -> Dict[str, Any]:
    """Flags given on the command line; every flag defaults to None so the config file can fill the rest."""
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def _add_phantom_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("phantom")
    group.add_argument("--nz", type=int, help="Axial samples (default 451)")
    group.add_argument("--nx", type=int, help="Lateral samples (default 161)")
    group.add_argument("--nt", type=int, help="Frames (default 400)")
    group.add_argument("--seed", type=int, help="Phantom RNG seed")
    group.add_argument("--max-shift", dest="max_shift", type=int, help="Per-frame blood shift range")
    group.add_argument("--tissue-density", dest="tissue_density", type=float)
    group.add_argument("--blood-amplitude", dest="blood_amplitude", type=float)
    group.add_argument("--blood-to-tissue-db", dest="blood_to_tissue_db", type=float)
    group.add_argument("--desk-scale", action="store_true", help="Start from the 128x64x100 phantom")


def _add_psf_flags(parser: argparse.ArgumentParser, prefix: str = "psf-") -> None:
    group = parser.add_argument_group("synthetic PSF")
    group.add_argument(f"--{prefix}fc", dest="psf_fc", type=float, help="Axial modulation, cycles/sample")
    group.add_argument(f"--{prefix}sigma-z", dest="psf_sigma_z", type=float)
    group.add_argument(f"--{prefix}sigma-x", dest="psf_sigma_x", type=float)
    group.add_argument(f"--{prefix}support", dest="psf_support", type=int, nargs=2, metavar=("KH", "KW"))


def _phantom_values(args: argparse.Namespace, base: Dict[str, Any]) -> Dict[str, Any]:
    values = PhantomConfig.desk_scale().model_dump() if getattr(args, "desk_scale", False) else {}
    values.update(base)
    values.update(flags_set(args, PHANTOM_FLAGS))
    psf = dict(values.get("psf") or {})
    psf.update({field: getattr(args, flag) for flag, field in PSF_FLAGS.items()
                if getattr(args, flag, None) is not None})
    if psf:
        values["psf"] = psf
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doppler-separation",
                                     description="Tissue / blood separation of ultrafast Doppler sequences.")
    parser.add_argument("--threads", type=int, help="FFT worker threads (overrides DOPPLER_THREADS)")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Simulate a phantom with known blood, tissue and PSF")
    simulate.add_argument("--output", "-o", required=True, help="Output directory")
    simulate.add_argument("--config", help="JSON parameter file or manifest to replay")
    simulate.add_argument("--bsnr", type=float, help="Add white noise at this BSNR (dB)")
    simulate.add_argument("--noise-seed", dest="noise_seed", type=int)
    _add_phantom_flags(simulate)
    _add_psf_flags(simulate)

    estimate = commands.add_parser("estimate", help="Separate blood from tissue in an IQ stack")
    estimate.add_argument("--output", "-o", required=True, help="Output directory")
    estimate.add_argument("--config", help="JSON parameter file or manifest to replay")
    estimate.add_argument("--method", choices=["svd", "rpca", "drpca", "bdrpca"])
    estimate.add_argument("--input", "-i", help="Observed stack (.c64 with sidecar)")
    estimate.add_argument("--psf", help="PSF kernel file; required by drpca, fixes the PSF for bdrpca")
    admm = estimate.add_argument_group("ADMM")
    admm.add_argument("--lambda", dest="lam", type=float, help="Sparsity weight (default reference value)")
    admm.add_argument("--mu", type=float, help="Augmented Lagrangian penalty (default mu0 * lambda)")
    admm.add_argument("--mu0", type=float, help="Scale of the reference mu (default 10 RPCA, 2 DRPCA/BD-RPCA)")
    admm.add_argument("--rho", type=float)
    admm.add_argument("--tol", type=float)
    admm.add_argument("--max-iter", dest="max_iter", type=int)
    admm.add_argument("--init-lambda", dest="init_lam", type=float, help="BD-RPCA initialisation lambda")
    admm.add_argument("--init-mu", dest="init_mu", type=float, help="BD-RPCA initialisation mu")
    admm.add_argument("--x-step", dest="x_step", choices=["split", "prox_gradient"], help="DRPCA X-step")
    admm.add_argument("--inner-steps", dest="inner_steps", type=int)
    band = estimate.add_argument_group("SVD filter")
    band.add_argument("--tc", type=int, help="First kept singular value (1-based)")
    band.add_argument("--tb", type=int, help="Last kept singular value")
    bd = estimate.add_argument_group("blind deconvolution")
    bd.add_argument("--gamma", type=float)
    bd.add_argument("--a", type=float, help="Huber knee")
    bd.add_argument("--cepstral-cutoff", dest="cepstral_cutoff", type=float)
    bd.add_argument("--psf-support", dest="psf_support", type=int, nargs=2, metavar=("KH", "KW"))
    bd.add_argument("--inner-tol", dest="inner_tol", type=float)
    bd.add_argument("--inner-max-iter", dest="inner_max_iter", type=int)
    bd.add_argument("--n-outer", dest="n_outer", type=int)
    bd.add_argument("--outer-tol", dest="outer_tol", type=float)
    bd.add_argument("--outer-max", dest="outer_max", type=int)
    estimate.add_argument("--seed", type=int, help="Seed of the noise added by --bsnr or --snr")
    estimate.add_argument("--bsnr", type=float, help="Add white noise at this BSNR (dB) of the --truth blood")
    estimate.add_argument("--snr", type=float, help="Add white noise at this SNR (dB) of the input itself")
    estimate.add_argument("--truth", help="simulate output to evaluate the estimate against")
    estimate.add_argument("--report", help="Evaluation report path (default <output>/evaluation.json)")

    evaluate = commands.add_parser("evaluate", help="Compare an estimate with the simulation truth")
    evaluate.add_argument("--truth", required=True, help="simulate output directory or manifest")
    evaluate.add_argument("--estimate", required=True, help="estimate output directory or manifest")
    evaluate.add_argument("--report", help="Report path (default <estimate>/evaluation.json)")
    evaluate.add_argument("--r1", type=int, nargs=4, metavar=("TOP", "LEFT", "H", "W"),
                          help="Background patch of the contrast ratio")
    evaluate.add_argument("--patch", type=int, nargs=2, metavar=("H", "W"), help="CR tile size (default 13 12)")

    sweep = commands.add_parser("evaluate-sweep", help="NRMSE/PSNR of every method over a BSNR grid")
    sweep.add_argument("--output", "-o", required=True, help="Output directory")
    sweep.add_argument("--config", help="JSON parameter file or manifest to replay")
    sweep.add_argument("--bsnr", help="start:step:stop in dB, e.g. 0:5:60, or a comma list")
    sweep.add_argument("--methods", help="Comma list out of svd,rpca,drpca,bdrpca")
    sweep.add_argument("--seeds", type=int, help="Phantoms averaged per grid point")
    sweep.add_argument("--max-iter", dest="max_iter", type=int)
    sweep.add_argument("--full-scale", action="store_true", help="Start from the 451x161x400 phantom")
    _add_phantom_flags(sweep)

    psf_export = commands.add_parser("psf-export", help="Write a synthetic PSF kernel and its modulus image")
    psf_export.add_argument("--output", "-o", required=True, help="Output directory")
    psf_export.add_argument("--config", help="JSON parameter file or manifest to replay")
    _add_psf_flags(psf_export, prefix="")

    schema = commands.add_parser("report-schema", help="Write the JSON schema of the evaluation report")
    schema.add_argument("--output", "-o", required=True, help="Schema file path")
    return parser


def cmd_simulate(args: argparse.Namespace) -> None:
    base = load_config(args.config)
    values = {key: base[key] for key in ("bsnr", "noise_seed") if key in base}
    values.update(flags_set(args, ["bsnr", "noise_seed"]))
    values["phantom"] = _phantom_values(args, base.get("phantom", {}))
    main_pipeline.run_simulate(SimulateParams(**values), args.output)


def cmd_estimate(args: argparse.Namespace) -> None:
    values = load_config(args.config)
    values.update(flags_set(args, RUN_FLAGS))
    if "method" not in values:
        raise ValueError("estimate needs --method (svd, rpca, drpca or bdrpca)")
    if "input" not in values:
        raise ValueError("estimate needs an input stack (--input)")
    if "psf_support" in values:
        values["psf_support"] = tuple(values["psf_support"])
    run = RunConfig(**values)
    main_pipeline.run_estimate(run, args.output)
    if run.truth:
        main_pipeline.run_evaluate(run.truth, args.output, run.report or os.path.join(args.output, "evaluation.json"))


def cmd_evaluate(args: argparse.Namespace) -> None:
    report_path = args.report or os.path.join(
        args.estimate if os.path.isdir(args.estimate) else os.path.dirname(args.estimate), "evaluation.json")
    main_pipeline.run_evaluate(args.truth, args.estimate, report_path,
                               r1=tuple(args.r1) if args.r1 else main_pipeline.DEFAULT_R1,
                               patch_shape=tuple(args.patch) if args.patch else (13, 12))


def cmd_sweep(args: argparse.Namespace) -> None:
    base = load_config(args.config)
    values = {key: base[key] for key in ("bsnr_grid", "methods", "seeds", "max_iter", "tc", "tb") if key in base}
    if args.bsnr:
        values["bsnr_grid"] = main_pipeline.parse_grid(args.bsnr)
    if args.methods:
        values["methods"] = [method.strip() for method in args.methods.split(",") if method.strip()]
    values.update(flags_set(args, ["seeds", "max_iter"]))
    if args.full_scale:
        phantom = PhantomConfig().model_dump()
    else:
        phantom = PhantomConfig.desk_scale().model_dump()
    phantom.update(base.get("phantom", {}))
    phantom.update(flags_set(args, PHANTOM_FLAGS))
    values["phantom"] = phantom
    main_pipeline.run_sweep(SweepParams(**values), args.output)


def cmd_psf_export(args: argparse.Namespace) -> None:
    base = load_config(args.config)
    psf = dict(base.get("psf", {}))
    psf.update({field: getattr(args, flag) for flag, field in PSF_FLAGS.items()
                if getattr(args, flag, None) is not None})
    main_pipeline.run_psf_export(PsfExportParams(psf=psf), args.output)


def cmd_report_schema(args: argparse.Namespace) -> None:
    main_pipeline.export_report_schema(args.output)
    print(f"Report schema written to {args.output}")


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "evaluate": cmd_evaluate,
    "evaluate-sweep": cmd_sweep,
    "psf-export": cmd_psf_export,
    "report-schema": cmd_report_schema,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        set_fft_workers(args.threads)
    try:
        COMMANDS[args.command](args)
    except SolverDivergenceError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except (ValueError, ValidationError) as e:
        logger.error(f"{args.command} rejected its input: {e}", exc_info=True)
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"{args.command} could not read or write a file: {e}", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
