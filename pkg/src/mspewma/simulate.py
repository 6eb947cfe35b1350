"""Monte Carlo validation of the exact EWMA moment formulas.

Simulates in-control (optionally shifted) multi-stream indicator data,
pushes it through the same standardization and EWMA recursion the chart
uses, and compares cross-replication sample moments at selected sampling
times against the exact values from ``moments``.

Reproducibility contract: replication m draws from the substream
``SeedSequence(config.seed, spawn_key=(m,))`` and results are reduced in
replication order, so a report is a pure function of (config, checkpoints).
Different implementations of the same study agree statistically, not
bit-for-bit; the theoretical columns are the exact targets.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal as _signal
from scipy import stats as _stats

from .moments import MomentParams, mean_profile, variance_convergence_time, variance_profile

__all__ = [
    "DEFAULT_CHECKPOINTS",
    "MEAN_ABS_TOLERANCE",
    "VARIANCE_BIAS_TOLERANCE",
    "SimConfig",
    "CheckpointRow",
    "Diagnostics",
    "ValidationReport",
    "replication_seed",
    "simulate_replication",
    "simulate_replication_detail",
    "run_validation",
    "empirical_w_covariance",
    "export_report",
    "load_report_json",
    "load_report_csv",
]

DEFAULT_CHECKPOINTS = (10, 50, 100, 500, 1000)

# Acceptance tolerances for an in-control validation run at n_reps = 10000:
# generous multiples of the Monte Carlo standard errors, tight enough to
# catch a wrong formula.
MEAN_ABS_TOLERANCE = 0.03
VARIANCE_BIAS_TOLERANCE = 0.03

REPORT_FORMAT = "mspewma-report"
REPORT_VERSION = 1
CSV_HEADER = (
    "Time,Theoretical Mean,Simulated Mean,"
    "Theoretical Variance,Simulated Variance,Relative Bias"
)


@dataclass(frozen=True)
class SimConfig:
    """Study parameters for one simulation campaign.

    ``shift_p`` switches generation to an out-of-control indicator rate
    while standardization keeps using the in-control p0, which is what a
    live monitor experiences under a shift.  Leave it None for in-control
    validation runs.
    """

    k: int = 10
    p0: float = 0.5
    lam: float = 0.2
    r0: float = 0.0
    t_max: int = 1000
    n_reps: int = 10000
    seed: int = 20240
    shift_p: float | None = None

    def __post_init__(self) -> None:
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "p0", float(self.p0))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "r0", float(self.r0))
        if not 0.0 < self.p0 < 1.0:
            raise ValueError(f"p0 must be in (0, 1), got {self.p0!r}")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lam must be in (0, 1], got {self.lam!r}")
        if not math.isfinite(self.r0):
            raise ValueError(f"r0 must be finite, got {self.r0!r}")
        if int(self.t_max) != self.t_max or self.t_max < 1:
            raise ValueError(f"t_max must be a positive integer, got {self.t_max!r}")
        object.__setattr__(self, "t_max", int(self.t_max))
        if int(self.n_reps) != self.n_reps or self.n_reps < 1:
            raise ValueError(f"n_reps must be a positive integer, got {self.n_reps!r}")
        object.__setattr__(self, "n_reps", int(self.n_reps))
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))
        if self.shift_p is not None:
            object.__setattr__(self, "shift_p", float(self.shift_p))
            # 1.0 is allowed: the fully degenerate generator is useful as a
            # deterministic smoke check.
            if not 0.0 < self.shift_p <= 1.0:
                raise ValueError(f"shift_p must be in (0, 1], got {self.shift_p!r}")

    @property
    def moment_params(self) -> MomentParams:
        return MomentParams(lam=self.lam, r0=self.r0)


@dataclass(frozen=True)
class CheckpointRow:
    """Theoretical vs simulated moments at one sampling time."""

    t: int
    theoretical_mean: float
    simulated_mean: float
    theoretical_var: float
    simulated_var: float
    relative_bias_var: float


@dataclass(frozen=True)
class Diagnostics:
    """Whole-horizon bias summaries plus a final-time shape check."""

    max_abs_bias_mean: float
    rms_bias_mean: float
    max_abs_bias_var: float
    rms_bias_var: float
    skewness_final: float
    excess_kurtosis_final: float


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of ``run_validation``: checkpoint rows plus diagnostics."""

    rows: tuple[CheckpointRow, ...]
    diagnostics: Diagnostics
    convergence_t_99: int
    config: SimConfig
    seed: int

    def within_tolerance(
        self,
        mean_tol: float = MEAN_ABS_TOLERANCE,
        var_bias_tol: float = VARIANCE_BIAS_TOLERANCE,
    ) -> bool:
        """True when every checkpoint is inside the acceptance tolerances."""
        return all(
            abs(row.simulated_mean) <= mean_tol
            and abs(row.relative_bias_var) <= var_bias_tol
            for row in self.rows
        )


def replication_seed(config: SimConfig, rep: int) -> np.random.SeedSequence:
    """Independent substream for replication ``rep`` of this campaign."""
    if rep < 0:
        raise ValueError(f"replication index must be nonnegative, got {rep!r}")
    return np.random.SeedSequence(config.seed, spawn_key=(rep,))


def _ewma_fold(w: np.ndarray, lam: float, r0: float) -> np.ndarray:
    # First-order IIR filter: r_t = lam * w_t + (1 - lam) * r_{t-1}.
    beta = 1.0 - lam
    r, _ = _signal.lfilter([lam], [1.0, -beta], w, zi=np.array([beta * r0]))
    return r


def simulate_replication_detail(
    config: SimConfig, rep_seed
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One replication's period counts, standardized values, and EWMA path.

    Returns arrays (c, w, r), each of length t_max.  Standardization always
    uses the in-control moments, even when ``shift_p`` redirects generation.
    """
    rng = np.random.default_rng(rep_seed)
    p = config.p0 if config.shift_p is None else config.shift_p
    x = rng.binomial(1, p, size=(config.k, config.t_max))
    c = x.sum(axis=0)
    q = np.cumsum(c)
    tv = np.arange(1, config.t_max + 1, dtype=float)
    mu = config.k * config.p0
    sigma2 = config.k * config.p0 * (1.0 - config.p0)
    w = (q - mu * tv) / np.sqrt(sigma2 * tv)
    r = _ewma_fold(w, config.lam, config.r0)
    return c, w, r


def simulate_replication(config: SimConfig, rep_seed) -> np.ndarray:
    """EWMA path of one replication; deterministic given its seed."""
    return simulate_replication_detail(config, rep_seed)[2]


def run_validation(config: SimConfig, checkpoints=DEFAULT_CHECKPOINTS) -> ValidationReport:
    """Cross-replication moment comparison at the requested sampling times.

    Keeps only running sums and sums of squares per time index (never the
    full replication matrix).  Sample variances use the n - 1 divisor.
    Requires n_reps >= 2 so the sample variance exists.
    """
    cps = sorted({int(t) for t in checkpoints})
    if not cps:
        raise ValueError("checkpoints must not be empty")
    if cps[0] < 1 or cps[-1] > config.t_max:
        raise ValueError(f"checkpoints must lie in [1, {config.t_max}], got {cps}")
    if config.n_reps < 2:
        raise ValueError("run_validation needs n_reps >= 2 for sample variances")

    params = config.moment_params
    th_mean = mean_profile(params, config.t_max)
    th_var = variance_profile(params, config.t_max)

    n = config.n_reps
    sum_r = np.zeros(config.t_max)
    sum_r2 = np.zeros(config.t_max)
    finals = np.empty(n)
    for m in range(n):
        r = simulate_replication(config, replication_seed(config, m))
        sum_r += r
        sum_r2 += r * r
        finals[m] = r[-1]

    sim_mean = sum_r / n
    sim_var = (sum_r2 - n * sim_mean * sim_mean) / (n - 1)

    rows = tuple(
        CheckpointRow(
            t=t,
            theoretical_mean=float(th_mean[t - 1]),
            simulated_mean=float(sim_mean[t - 1]),
            theoretical_var=float(th_var[t - 1]),
            simulated_var=float(sim_var[t - 1]),
            relative_bias_var=float((sim_var[t - 1] - th_var[t - 1]) / th_var[t - 1]),
        )
        for t in cps
    )

    bias_mean = sim_mean - th_mean
    bias_var = sim_var - th_var
    diagnostics = Diagnostics(
        max_abs_bias_mean=float(np.max(np.abs(bias_mean))),
        rms_bias_mean=float(np.sqrt(np.mean(bias_mean**2))),
        max_abs_bias_var=float(np.max(np.abs(bias_var))),
        rms_bias_var=float(np.sqrt(np.mean(bias_var**2))),
        skewness_final=float(_stats.skew(finals)),
        excess_kurtosis_final=float(_stats.kurtosis(finals)),
    )

    return ValidationReport(
        rows=rows,
        diagnostics=diagnostics,
        convergence_t_99=variance_convergence_time(params, 0.99),
        config=config,
        seed=config.seed,
    )


def empirical_w_covariance(config: SimConfig, i: int, j: int) -> float:
    """Cross-replication sample covariance of the standardized counts W_i, W_j.

    Uses the same replication substreams as ``run_validation``; symmetric in
    (i, j).  Theory predicts sqrt(min(i, j)) / sqrt(max(i, j)).
    """
    for name, t in (("i", i), ("j", j)):
        if int(t) != t or not 1 <= t <= config.t_max:
            raise ValueError(f"{name} must lie in [1, {config.t_max}], got {t!r}")
    if config.n_reps < 2:
        raise ValueError("empirical_w_covariance needs n_reps >= 2")
    i, j = int(i), int(j)
    si = sj = sij = 0.0
    for m in range(config.n_reps):
        _, w, _ = simulate_replication_detail(config, replication_seed(config, m))
        wi, wj = w[i - 1], w[j - 1]
        si += wi
        sj += wj
        sij += wi * wj
    n = config.n_reps
    return (sij - si * sj / n) / (n - 1)


def _config_dict(config: SimConfig) -> dict:
    return asdict(config)


def report_to_dict(report: ValidationReport) -> dict:
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "config": _config_dict(report.config),
        "seed": report.seed,
        "convergence_t_99": report.convergence_t_99,
        "rows": [asdict(row) for row in report.rows],
        "diagnostics": asdict(report.diagnostics),
    }


def report_from_dict(data: dict) -> ValidationReport:
    if data.get("format") != REPORT_FORMAT:
        raise ValueError("document is not a validation report")
    if data.get("version") != REPORT_VERSION:
        raise ValueError(f"unsupported report version {data.get('version')!r}")
    return ValidationReport(
        rows=tuple(CheckpointRow(**row) for row in data["rows"]),
        diagnostics=Diagnostics(**data["diagnostics"]),
        convergence_t_99=int(data["convergence_t_99"]),
        config=SimConfig(**data["config"]),
        seed=int(data["seed"]),
    )


def export_report(report: ValidationReport, format: str) -> str:
    """Serialize a report, lossless in either format.

    ``"json"`` emits the full document.  ``"csv"`` emits one row per
    checkpoint in the column order Time, Theoretical Mean, Simulated Mean,
    Theoretical Variance, Simulated Variance, Relative Bias, preceded by
    ``#`` comment lines that carry the config, seed, convergence time and
    diagnostics so nothing is lost.  Floats are written with full
    round-trip precision.
    """
    if format == "json":
        return json.dumps(report_to_dict(report), indent=2) + "\n"
    if format == "csv":
        buf = io.StringIO()
        buf.write(f"# {REPORT_FORMAT} version={REPORT_VERSION}\n")
        buf.write(f"# config: {json.dumps(_config_dict(report.config), sort_keys=True)}\n")
        buf.write(f"# seed: {report.seed}\n")
        buf.write(f"# convergence_t_99: {report.convergence_t_99}\n")
        buf.write(f"# diagnostics: {json.dumps(asdict(report.diagnostics), sort_keys=True)}\n")
        buf.write(CSV_HEADER + "\n")
        for row in report.rows:
            buf.write(
                f"{row.t},{row.theoretical_mean!r},{row.simulated_mean!r},"
                f"{row.theoretical_var!r},{row.simulated_var!r},"
                f"{row.relative_bias_var!r}\n"
            )
        return buf.getvalue()
    raise ValueError(f"unknown report format {format!r}")


def load_report_json(text: str) -> ValidationReport:
    """Parse a report written by ``export_report(report, "json")``."""
    return report_from_dict(json.loads(text))


def load_report_csv(text: str) -> ValidationReport:
    """Parse a report written by ``export_report(report, "csv")``."""
    meta: dict[str, str] = {}
    rows = []
    header_seen = False
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if ":" in body:
                key, _, value = body.partition(":")
                meta[key.strip()] = value.strip()
            continue
        if not header_seen:
            if line != CSV_HEADER:
                raise ValueError(f"unexpected CSV header: {line!r}")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ValueError(f"malformed report row: {line!r}")
        rows.append(
            CheckpointRow(
                t=int(parts[0]),
                theoretical_mean=float(parts[1]),
                simulated_mean=float(parts[2]),
                theoretical_var=float(parts[3]),
                simulated_var=float(parts[4]),
                relative_bias_var=float(parts[5]),
            )
        )
    for required in ("config", "seed", "convergence_t_99", "diagnostics"):
        if required not in meta:
            raise ValueError(f"report CSV is missing the {required!r} comment line")
    if not header_seen:
        raise ValueError("report CSV has no header row")
    return ValidationReport(
        rows=tuple(rows),
        diagnostics=Diagnostics(**json.loads(meta["diagnostics"])),
        convergence_t_99=int(meta["convergence_t_99"]),
        config=SimConfig(**json.loads(meta["config"])),
        seed=int(meta["seed"]),
    )
