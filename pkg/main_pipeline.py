import math
import os
import time
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from logging_config import logger

from evaluation.metrics import PatchRect, cr_sweep, nrmse, power_doppler, psnr
from file_formats import (read_casorati, read_json, read_power_doppler, read_psf, read_stack, sha256_file, write_json,
                          write_magnitude_png, write_power_doppler, write_psf, write_stack)
from schemas import (CrQuartiles, EvaluationReport, Manifest, OutputFile, PsfExportParams, RunConfig,
                     SimulateParams, SweepParams, report_json_schema)
from separation.bdrpca import bdrpca
from separation.blind_deconv import BdParams
from separation.casorati import CasoratiMatrix, IQStack, from_casorati, to_casorati
from separation.drpca import drpca
from separation.errors import ParameterError, ShapeError
from separation.linops import apply_to_casorati, embed_psf
from separation.rpca import AdmmParams, SeparationResult, rpca
from separation.svd_filter import RankBand, svd_filter
from simulation.phantom import add_noise_bsnr, bsnr_noise, simulate

MANIFEST_NAME = "manifest.json"
DEFAULT_R1 = (0, 0, 13, 12)


class ArtifactWriter:
    """Writes files under one output directory and records their digests for the manifest."""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        self.outputs: Dict[str, OutputFile] = {}
        os.makedirs(output_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def record(self, key: str, name: str) -> None:
        self.outputs[key] = OutputFile(path=name, sha256=sha256_file(self.path(name)))

    def stack(self, key: str, name: str, stack: IQStack) -> None:
        write_stack(self.path(name), stack)
        self.record(key, name)

    def power_doppler(self, key: str, stem: str, img) -> None:
        write_power_doppler(self.path(stem), img)
        self.record(key, stem + ".f64")
        self.record(key + "_png", stem + ".png")

    def psf(self, key: str, name: str, psf) -> None:
        write_psf(self.path(name), psf)
        self.record(key, name)

    def table(self, key: str, name: str, frame: pd.DataFrame) -> None:
        frame.to_csv(self.path(name), index=False)
        self.record(key, name)

    def manifest(self, command: str, parameters: dict, results: dict, wall_time: float) -> Manifest:
        manifest = Manifest(command=command, parameters=parameters, outputs=self.outputs, results=results,
                            wall_time=wall_time)
        write_json(self.path(MANIFEST_NAME), manifest.model_dump(mode="json"))
        logger.info("COMMAND_COMPLETE", extra={'extra_data': {'manifest': manifest.model_dump(mode="json")}})
        return manifest


def load_manifest(path: str) -> Tuple[Manifest, str]:
    """Accepts a manifest file or the directory holding one; returns it with its directory."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    return Manifest(**read_json(path)), os.path.dirname(os.path.abspath(path))


def _stack_of(m: CasoratiMatrix, like) -> IQStack:
    """`like` is any object with dz, dx and frame_rate (an IQStack or a PhantomConfig)."""
    return from_casorati(m, dz=like.dz, dx=like.dx, frame_rate=like.frame_rate)


def add_white_noise(S: CasoratiMatrix, snr_db: float, seed: int) -> CasoratiMatrix:
    """Circular complex white noise at `snr_db` relative to the centred energy of S itself."""
    centered_energy = float(np.sum(np.abs(S.data - np.mean(S.data)) ** 2))
    if centered_energy == 0.0:
        raise ParameterError("Cannot calibrate noise on a constant input")
    sigma = math.sqrt(centered_energy / (S.data.size * 10.0 ** (snr_db / 10.0)))
    rng = np.random.default_rng(seed)
    noise = (rng.standard_normal(S.shape) + 1j * rng.standard_normal(S.shape)) * (sigma / math.sqrt(2.0))
    return S.like(S.data + noise)


# --- simulate ---

def run_simulate(params: SimulateParams, output_dir: str) -> Manifest:
    started = time.perf_counter()
    config = params.phantom
    print(f"Simulating {config.nz}x{config.nx}x{config.nt} phantom (seed {config.seed})")
    truth = simulate(config)
    if params.bsnr is not None:
        truth = add_noise_bsnr(truth, params.bsnr, params.resolved_noise_seed())

    writer = ArtifactWriter(output_dir)
    writer.stack("observed", "observed.c64", _stack_of(truth.s_observed, config))
    writer.stack("blood_true", "blood_true.c64", _stack_of(truth.x_true, config))
    writer.stack("tissue_true", "tissue_true.c64", _stack_of(truth.t_true, config))
    writer.power_doppler("pd_true", "pd_true", truth.pd_true)
    writer.psf("psf_true", "psf_true.c64", truth.psf_true)

    geometry = config.geometry()
    results = {
        "blood_amplitude": truth.blood_amplitude,
        "noise_sigma": truth.noise_sigma,
        "bsnr_db": truth.bsnr_db,
        "empirical_bsnr_db": truth.empirical_bsnr_db,
        "noise_seed": params.resolved_noise_seed() if params.bsnr is not None else None,
        "vessel": [geometry.vessel_top, geometry.vessel_height],
        "rects": [[list(anchor), list(size)] for anchor, size in geometry.rects],
    }
    return writer.manifest("simulate", params.model_dump(mode="json"), results, time.perf_counter() - started)


# --- estimate ---

def separate(run: RunConfig, S: CasoratiMatrix) -> Tuple[SeparationResult, Dict]:
    """Dispatches to the estimator named by `run.method`; returns the result and the resolved parameters."""
    if run.method == "svd":
        band = run.rank_band()
        started = time.perf_counter()
        B = svd_filter(S, band)
        result = SeparationResult(B, S.like(S.data - B.data), "svd", converged=True,
                                  wall_time=time.perf_counter() - started)
        return result, {"band": band.model_dump()}

    admm = run.admm_params(S)
    resolved = {"admm": admm.model_dump()}
    if run.method == "rpca":
        return rpca(S, admm), resolved
    if run.method == "drpca":
        psf = read_psf(run.psf)
        return drpca(S, psf, admm, x_step=run.x_step, inner_steps=run.inner_steps), resolved

    init_admm = run.init_admm_params(S)
    bd = run.bd_params()
    psf_override = read_psf(run.psf) if run.psf else None
    resolved.update({"init_admm": init_admm.model_dump(), "bd": bd.model_dump()})
    result = bdrpca(S, admm, bd, outer_tol=run.outer_tol, outer_max=run.outer_max, init_admm=init_admm,
                    psf_override=psf_override, x_step=run.x_step, inner_steps=run.inner_steps)
    return result, resolved


def truth_blurred_blood(truth_path: str, S: CasoratiMatrix) -> np.ndarray:
    """H X of a `simulate` run, from its stored blood and PSF."""
    truth, truth_dir = load_manifest(truth_path)
    missing = {"blood_true", "psf_true"} - set(truth.outputs)
    if missing:
        raise ValueError(f"Manifest of '{truth.command}' lacks {sorted(missing)}; --truth must be a simulate run")
    blood = read_casorati(os.path.join(truth_dir, truth.outputs["blood_true"].path))
    if blood.shape != S.shape or (blood.nz, blood.nx) != (S.nz, S.nx):
        raise ShapeError(f"Truth blood {blood.shape} does not match the input {S.shape}")
    psf = read_psf(os.path.join(truth_dir, truth.outputs["psf_true"].path))
    return apply_to_casorati(blood, embed_psf(psf, S.nz, S.nx)).data


def add_input_noise(run: RunConfig, S: CasoratiMatrix) -> Tuple[CasoratiMatrix, Dict]:
    """Applies --bsnr (calibrated on the truth's H X) or --snr (on S itself)."""
    if run.bsnr is not None:
        noise, variance, empirical = bsnr_noise(truth_blurred_blood(run.truth, S), run.bsnr, run.seed)
        return S.like(S.data + noise), {"noise_sigma": math.sqrt(variance), "empirical_bsnr_db": empirical}
    if run.snr is not None:
        return add_white_noise(S, run.snr, run.seed), {}
    return S, {}


def run_estimate(run: RunConfig, output_dir: str) -> Manifest:
    started = time.perf_counter()
    stack = read_stack(run.input)
    S, noise = add_input_noise(run, to_casorati(stack))
    print(f"Estimating with {run.method} on {stack.nz}x{stack.nx}x{stack.nt} stack")

    result, resolved = separate(run, S)

    writer = ArtifactWriter(output_dir)
    writer.stack("blood", "blood.c64", _stack_of(result.blood, stack))
    writer.stack("tissue", "tissue.c64", _stack_of(result.tissue, stack))
    writer.power_doppler("power_doppler", "power_doppler", power_doppler(result.blood))
    if result.psf is not None:
        writer.psf("psf", "psf.c64", result.psf)
    if result.trace:
        writer.table("trace", "trace.csv", pd.DataFrame(result.trace_records()))
    if result.outer_trace:
        writer.table("outer_trace", "outer_trace.csv", pd.DataFrame(result.outer_records()))

    results = {
        "method": result.method,
        "iterations": result.iterations,
        "outer_iterations": len(result.outer_trace),
        "converged": result.converged,
        "solver_wall_time": result.wall_time,
        "input_sha256": sha256_file(run.input),
        **noise,
        **resolved,
    }
    print(f"{run.method} finished: {result.iterations} iterations in {result.wall_time:.2f} s")
    return writer.manifest("estimate", run.model_dump(mode="json"), results, time.perf_counter() - started)


# --- evaluate ---

def _pd_path(manifest: Manifest, directory: str, keys: List[str]) -> str:
    for key in keys:
        if key in manifest.outputs:
            return os.path.join(directory, manifest.outputs[key].path)
    raise ValueError(f"Manifest of '{manifest.command}' lists none of the outputs {keys}")


def evaluate_images(ref, est, r1: PatchRect, patch_shape: Tuple[int, int], method: Optional[str] = None,
                    ) -> EvaluationReport:
    if ref.shape != est.shape:
        raise ShapeError(f"Truth image {ref.shape} and estimate image {est.shape} differ in size")
    sweep = cr_sweep(est, r1, *patch_shape)
    value = psnr(ref, est)
    return EvaluationReport(
        method=method,
        nrmse=nrmse(ref, est),
        psnr=None if math.isinf(value) else value,
        psnr_infinite=math.isinf(value),
        cr_median=sweep.median,
        cr_quartiles=CrQuartiles(q1=sweep.q1, q3=sweep.q3),
        cr_patch_count=sweep.count,
        patch_shape=patch_shape,
        r1=(r1.top, r1.left, r1.height, r1.width),
    )


def run_evaluate(truth_path: str, estimate_path: str, report_path: str,
                 r1: Tuple[int, int, int, int] = DEFAULT_R1, patch_shape: Tuple[int, int] = (13, 12)
                 ) -> EvaluationReport:
    """Compares the truth power Doppler of a `simulate` run with the one of an `estimate` run (or another truth)."""
    truth, truth_dir = load_manifest(truth_path)
    estimate, estimate_dir = load_manifest(estimate_path)
    ref = read_power_doppler(_pd_path(truth, truth_dir, ["pd_true", "power_doppler"]))
    est = read_power_doppler(_pd_path(estimate, estimate_dir, ["power_doppler", "pd_true"]))

    report = evaluate_images(ref, est, PatchRect(*r1), patch_shape, method=estimate.results.get("method"))
    report.truth_manifest_sha256 = sha256_file(os.path.join(truth_dir, MANIFEST_NAME))
    report.estimate_manifest_sha256 = sha256_file(os.path.join(estimate_dir, MANIFEST_NAME))

    report_dir = os.path.dirname(report_path)
    if report_dir:
        os.makedirs(report_dir, exist_ok=True)
    write_json(report_path, report.model_dump(mode="json"))
    logger.info("COMMAND_COMPLETE", extra={'extra_data': {'command': 'evaluate', 'report': report.model_dump()}})
    psnr_text = "inf" if report.psnr_infinite else f"{report.psnr:.3f} dB"
    print(f"NRMSE {report.nrmse:.4f}, PSNR {psnr_text}, CR median {report.cr_median:.2f} dB")
    return report


def export_report_schema(path: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_json(path, report_json_schema())


# --- evaluate-sweep ---

def parse_grid(text: str) -> List[float]:
    """'start:step:stop' (stop included) or a comma separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"Grid '{text}' must read start:step:stop")
        start, step, stop = (float(part) for part in parts)
        if step <= 0 or stop < start:
            raise ValueError(f"Grid '{text}' needs a positive step and stop >= start")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(count)]
    return [float(part) for part in text.split(",") if part.strip()]


def _sweep_estimate(method: str, S: CasoratiMatrix, truth, params: SweepParams) -> CasoratiMatrix:
    if method == "svd":
        return svd_filter(S, RankBand(tc=params.tc, tb=params.tb))
    mu0 = 10.0 if method == "rpca" else 2.0
    admm = AdmmParams.reference(S.nz, S.nx, S.nt, mu0=mu0, max_iter=params.max_iter)
    if method == "rpca":
        return rpca(S, admm).blood
    if method == "drpca":
        return drpca(S, truth.psf_true, admm).blood
    return bdrpca(S, admm, BdParams()).blood


def run_sweep(params: SweepParams, output_dir: str) -> Manifest:
    """NRMSE and PSNR of every method over a BSNR grid, averaged over `seeds` phantoms."""
    started = time.perf_counter()
    rows = []
    for seed_index in range(params.seeds):
        config = params.phantom.model_copy(update={"seed": params.phantom.seed + seed_index})
        clean = simulate(config)
        for bsnr in params.bsnr_grid:
            truth = add_noise_bsnr(clean, bsnr, config.seed + 1)
            for method in params.methods:
                print(f"seed {config.seed}, BSNR {bsnr:g} dB, {method}")
                estimate = power_doppler(_sweep_estimate(method, truth.s_observed, truth, params))
                value = psnr(truth.pd_true, estimate)
                rows.append({"seed": config.seed, "bsnr_db": bsnr, "method": method,
                             "empirical_bsnr_db": truth.empirical_bsnr_db,
                             "nrmse": nrmse(truth.pd_true, estimate), "psnr": value})

    table = pd.DataFrame(rows)
    summary = (table.replace([np.inf], np.nan)
               .groupby(["method", "bsnr_db"], as_index=False)[["nrmse", "psnr"]].mean())

    writer = ArtifactWriter(output_dir)
    writer.table("sweep", "sweep.csv", table)
    writer.table("summary", "sweep_summary.csv", summary)
    _sweep_figure(summary).write_html(writer.path("sweep.html"), include_plotlyjs="cdn", div_id="sweep-figure")
    writer.record("figure", "sweep.html")

    results = {"bsnr_grid": params.bsnr_grid, "rows": len(rows)}
    return writer.manifest("evaluate-sweep", params.model_dump(mode="json"), results,
                           time.perf_counter() - started)


def _sweep_figure(summary: pd.DataFrame) -> go.Figure:
    fig = make_subplots(rows=1, cols=2, subplot_titles=("NRMSE", "PSNR (dB)"))
    for method, group in summary.groupby("method"):
        fig.add_trace(go.Scatter(x=group["bsnr_db"], y=group["nrmse"], mode="lines+markers", name=method,
                                 legendgroup=method), row=1, col=1)
        fig.add_trace(go.Scatter(x=group["bsnr_db"], y=group["psnr"], mode="lines+markers", name=method,
                                 legendgroup=method, showlegend=False), row=1, col=2)
    fig.update_xaxes(title_text="BSNR (dB)")
    fig.update_layout(title_text="Separation quality versus noise level")
    return fig


# --- psf-export ---

def run_psf_export(params: PsfExportParams, output_dir: str) -> Manifest:
    started = time.perf_counter()
    psf = params.psf.build()
    writer = ArtifactWriter(output_dir)
    writer.psf("psf", "psf.c64", psf)
    write_magnitude_png(writer.path("psf.png"), psf.kernel)
    writer.record("psf_png", "psf.png")
    print(f"PSF {psf.shape[0]}x{psf.shape[1]} written to {output_dir}")
    return writer.manifest("psf-export", params.model_dump(mode="json"), {"center": list(psf.center)},
                           time.perf_counter() - started)
