"""
Configuration and report models
-------------------------------
Pydantic models for everything the CLI reads or writes: run configuration,
file sidecars, manifests and the evaluation report. The JSON schema of
`EvaluationReport` is generated from the model (`report_json_schema`) and
shipped as report_schema/evaluation_report.schema.json.
"""

from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, constr, model_validator

from separation.blind_deconv import BdParams
from separation.casorati import CasoratiMatrix
from separation.prox import HuberParams
from separation.rpca import AdmmParams, reference_hyperparams
from separation.svd_filter import RankBand
from simulation.phantom import PhantomConfig, PsfSpec

FORMAT_VERSION = 1
METHODS = ("svd", "rpca", "drpca", "bdrpca")
DEFAULT_MU0 = {"svd": 10.0, "rpca": 10.0, "drpca": 2.0, "bdrpca": 2.0}
Sha256 = constr(pattern=r"^[0-9a-f]{64}$")


class Sidecar(BaseModel):
    """JSON description of a raw binary file."""

    format_version: int = FORMAT_VERSION
    kind: Literal["iq_stack", "psf", "power_doppler"]
    dtype: Literal["complex64-le", "float64-le"]
    order: Literal["z-fastest"] = "z-fastest"
    shape: List[int]
    dz: Optional[float] = None
    dx: Optional[float] = None
    frame_rate: Optional[float] = None
    center: Optional[Tuple[int, int]] = None
    normalized: Optional[bool] = None
    dynamic_range: Optional[float] = None


class OutputFile(BaseModel):
    path: str
    sha256: str


class Manifest(BaseModel):
    """Everything needed to replay a command: pass the manifest back as --config."""

    format_version: int = FORMAT_VERSION
    command: str
    parameters: Dict
    outputs: Dict[str, OutputFile] = Field(default_factory=dict)
    results: Dict = Field(default_factory=dict)
    wall_time: Optional[float] = None


class SimulateParams(BaseModel):
    phantom: PhantomConfig = Field(default_factory=PhantomConfig)
    bsnr: Optional[float] = Field(None, description="Requested BSNR in dB; None leaves the data noiseless")
    noise_seed: Optional[int] = Field(None, description="Noise RNG seed; None derives it from the phantom seed")

    def resolved_noise_seed(self) -> int:
        return self.noise_seed if self.noise_seed is not None else self.phantom.seed + 1


class RunConfig(BaseModel):
    """
    Parameters of `estimate`. lam / mu left as None fall back to the reference
    values with mu0 = 10 (RPCA) or 2 (DRPCA, BD-RPCA).
    """

    method: Literal["svd", "rpca", "drpca", "bdrpca"]
    input: str
    psf: Optional[str] = None
    # ADMM
    lam: Optional[float] = Field(None, gt=0)
    mu: Optional[float] = Field(None, gt=0)
    mu0: Optional[float] = Field(None, gt=0)
    rho: float = Field(1.0, gt=0)
    tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(200, ge=1)
    # BD-RPCA initialisation
    init_lam: Optional[float] = Field(None, gt=0)
    init_mu: Optional[float] = Field(None, gt=0)
    # SVD band
    tc: int = Field(2, ge=1)
    tb: int = Field(15, ge=1)
    # blind deconvolution
    gamma: float = Field(0.002, gt=0)
    a: float = Field(0.05, gt=0)
    cepstral_cutoff: Optional[float] = Field(None, gt=0)
    psf_support: Tuple[int, int] = (15, 15)
    inner_tol: float = Field(1e-6, gt=0)
    inner_max_iter: int = Field(200, ge=1)
    n_outer: int = Field(3, ge=1)
    outer_tol: float = Field(1e-6, gt=0)
    outer_max: int = Field(10, ge=1)
    # DRPCA X-step
    x_step: Literal["split", "prox_gradient"] = "split"
    inner_steps: int = Field(3, ge=1, description="Proximal-gradient steps per X-step (prox_gradient only)")
    seed: int = 0
    bsnr: Optional[float] = Field(None, description="Add white noise at this BSNR (dB), calibrated on the truth's H X")
    snr: Optional[float] = Field(None, description="Add white noise at this SNR (dB) of the input itself")
    truth: Optional[str] = Field(None, description="simulate output to evaluate the estimate against")
    report: Optional[str] = Field(None, description="Evaluation report path (default <output>/evaluation.json)")

    @model_validator(mode="after")
    def _method_inputs(self):
        if self.method == "drpca" and not self.psf:
            raise ValueError("method 'drpca' requires a PSF input (--psf)")
        if self.report and not self.truth:
            raise ValueError("an evaluation report (--report) needs the simulation truth (--truth)")
        if self.bsnr is not None and not self.truth:
            raise ValueError("--bsnr is calibrated on the simulated blood and needs --truth; use --snr otherwise")
        if self.bsnr is not None and self.snr is not None:
            raise ValueError("--bsnr and --snr are exclusive")
        return self

    def admm_params(self, S: CasoratiMatrix) -> AdmmParams:
        mu0 = self.mu0 if self.mu0 is not None else DEFAULT_MU0[self.method]
        lam_ref, mu_ref = reference_hyperparams(S.nz, S.nx, S.nt, mu0)
        return AdmmParams(lam=self.lam or lam_ref, mu=self.mu or mu_ref, rho=self.rho, tol=self.tol,
                          max_iter=self.max_iter)

    def init_admm_params(self, S: CasoratiMatrix) -> AdmmParams:
        lam_ref, mu_ref = reference_hyperparams(S.nz, S.nx, S.nt, DEFAULT_MU0["rpca"])
        return AdmmParams(lam=self.init_lam or lam_ref, mu=self.init_mu or mu_ref, rho=self.rho, tol=self.tol,
                          max_iter=self.max_iter)

    def bd_params(self) -> BdParams:
        return BdParams(huber=HuberParams(gamma=self.gamma, a=self.a), cepstral_cutoff=self.cepstral_cutoff,
                        psf_support=self.psf_support, inner_tol=self.inner_tol,
                        inner_max_iter=self.inner_max_iter, n_outer=self.n_outer)

    def rank_band(self) -> RankBand:
        return RankBand(tc=self.tc, tb=self.tb)


class SweepParams(BaseModel):
    """Noise sweep: phantom, BSNR grid, methods and number of seeds averaged."""

    phantom: PhantomConfig = Field(default_factory=PhantomConfig.desk_scale)
    bsnr_grid: List[float] = Field(default_factory=lambda: [float(v) for v in range(0, 61, 5)])
    methods: List[Literal["svd", "rpca", "drpca", "bdrpca"]] = Field(default_factory=lambda: list(METHODS))
    seeds: int = Field(1, ge=1)
    max_iter: int = Field(200, ge=1)
    tc: int = Field(2, ge=1)
    tb: int = Field(15, ge=1)


class PsfExportParams(BaseModel):
    psf: PsfSpec = Field(default_factory=PsfSpec)


class CrQuartiles(BaseModel):
    model_config = ConfigDict(extra="forbid")

    q1: float
    q3: float


class EvaluationReport(BaseModel):
    """Quality of an estimate against the simulation truth."""

    model_config = ConfigDict(extra="forbid")

    format_version: int = FORMAT_VERSION
    method: Optional[Literal["svd", "rpca", "drpca", "bdrpca"]] = None
    nrmse: float = Field(..., ge=0)
    psnr: Optional[float] = Field(..., description="dB; null when the images are identical (infinite PSNR)")
    psnr_infinite: bool
    cr_median: float
    cr_quartiles: CrQuartiles
    cr_patch_count: int = Field(..., ge=1)
    patch_shape: Tuple[int, int]
    r1: Tuple[int, int, int, int]
    truth_manifest_sha256: Optional[Sha256] = None
    estimate_manifest_sha256: Optional[Sha256] = None


def report_json_schema() -> Dict:
    """JSON schema of `EvaluationReport`, as shipped in report_schema/."""
    return EvaluationReport.model_json_schema()
