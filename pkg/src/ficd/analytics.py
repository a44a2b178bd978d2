"""Closed-form oracles, distribution distances, bound checks, and benchmarks.

Everything here is either an independent ground truth (conjugate
posteriors, tilted mixtures, sliced Wasserstein) or a measurement
harness over sampling runs (phase profiles, bound reports, timing
tables). Oracles are pure functions; reports are plain dataclasses with
a text rendering that states pass or fail per assertion.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal, wasserstein_distance

from ficd.guidance import Condition, EnergyFunction, QuadraticEnergy
from ficd.posterior import PosteriorPartStrategy, cramer_rao_bound, fisher_information
from ficd.sampler import RunTrace, SamplerConfig, guided_step, sample
from ficd.schedule import NoiseSchedule
from ficd.scoremodel import GaussianMixture

__all__ = [
    "GaussianPosterior",
    "linear_gaussian_posterior",
    "tilted_gmm_oracle",
    "sliced_wasserstein",
    "BoundReport",
    "bound_verification",
    "phase_profile",
    "deviation_bound",
    "DeviationReport",
    "deviation_bound_check",
    "BenchmarkRow",
    "BenchmarkTable",
    "benchmark_steps",
    "TRACE_COLUMNS",
    "trace_to_csv",
    "trace_from_csv",
    "samples_to_csv",
    "samples_from_csv",
]


@dataclass(frozen=True)
class GaussianPosterior:
    """Exact Gaussian posterior: mean and SPD covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        np.linalg.cholesky(cov)  # raises if not positive-definite
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


def linear_gaussian_posterior(
    prior_mean, prior_cov, A, y, noise_var: float
) -> GaussianPosterior:
    """Conjugate posterior for y = A x + noise with isotropic noise.

    covariance = (prior_cov^-1 + A^T A / noise_var)^-1 and
    mean = covariance (prior_cov^-1 prior_mean + A^T y / noise_var).
    """
    mu0 = np.asarray(prior_mean, dtype=np.float64)
    sigma0 = np.asarray(prior_cov, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if noise_var <= 0:
        raise ValueError("noise_var must be positive")
    prec0 = np.linalg.inv(sigma0)
    precision = prec0 + A.T @ A / noise_var
    covariance = np.linalg.inv(precision)
    covariance = 0.5 * (covariance + covariance.T)
    mean = covariance @ (prec0 @ mu0 + A.T @ y / noise_var)
    return GaussianPosterior(mean=mean, covariance=covariance)


def tilted_gmm_oracle(gmm: GaussianMixture, c, lam: float) -> GaussianMixture:
    """The mixture proportional to p(x) exp(-lam ||x - c||^2), in closed form.

    Each component keeps Gaussian form with precision prec_i + 2 lam I
    and mean solved from prec_i mu_i + 2 lam c; weights are scaled by
    the component evidence N(mu_i; c, cov_i + I / (2 lam)) and
    re-normalized.
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if lam == 0:
        return gmm
    c = np.asarray(c, dtype=np.float64)
    d = gmm.d
    if c.shape != (d,):
        raise ValueError(f"c has shape {c.shape}, expected ({d},)")
    new_means = np.empty_like(gmm.means)
    new_covs = np.empty_like(gmm.covariances)
    log_evidence = np.empty(gmm.K)
    eye = np.eye(d)
    for i in range(gmm.K):
        prec = np.linalg.inv(gmm.covariances[i])
        tilted_prec = prec + 2.0 * lam * eye
        cov = np.linalg.inv(tilted_prec)
        new_covs[i] = 0.5 * (cov + cov.T)
        new_means[i] = new_covs[i] @ (prec @ gmm.means[i] + 2.0 * lam * c)
        evidence_cov = gmm.covariances[i] + eye / (2.0 * lam)
        log_evidence[i] = multivariate_normal.logpdf(gmm.means[i], mean=c, cov=evidence_cov)
    log_w = np.log(np.maximum(gmm.weights, 1e-300)) + log_evidence
    log_w -= log_w.max()
    w = np.exp(log_w)
    return GaussianMixture(weights=w / w.sum(), means=new_means, covariances=new_covs)


def sliced_wasserstein(samples_a, samples_b, n_projections: int = 64, seed: int = 0) -> float:
    """Mean 1-d Wasserstein-1 distance over seeded random unit directions."""
    a = np.atleast_2d(np.asarray(samples_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(samples_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("sample sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("sample sets must share a dimension")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n_projections, a.shape[1]))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    total = 0.0
    for u in directions:
        total += wasserstein_distance(a @ u, b @ u)
    return total / n_projections


# --- Fisher bound verification -----------------------------------------


@dataclass
class BoundReport:
    """Spectral radius of the score Jacobian versus 1 / (1 - alpha_bar_t)."""

    t: np.ndarray
    point_index: np.ndarray
    spectral_radius: np.ndarray
    bound: np.ndarray
    ratio: np.ndarray
    tolerance: float

    @property
    def within(self) -> np.ndarray:
        return self.spectral_radius <= self.bound + self.tolerance

    @property
    def pass_rate(self) -> float:
        return float(np.mean(self.within))

    @property
    def all_pass(self) -> bool:
        return bool(np.all(self.within))

    def to_text(self) -> str:
        lines = ["fisher-bound report"]
        for t in np.unique(self.t):
            mask = self.t == t
            n_bad = int(np.sum(~self.within[mask]))
            status = "PASS" if n_bad == 0 else f"FAIL ({n_bad} points)"
            lines.append(
                f"  t={int(t)}: max ratio {self.ratio[mask].max():.6f} {status}"
            )
        lines.append(
            f"overall: {'PASS' if self.all_pass else 'FAIL'}"
            f" (pass rate {self.pass_rate:.4f}, max ratio {self.ratio.max():.6f})"
        )
        return "\n".join(lines)


def bound_verification(
    model, schedule: NoiseSchedule, x_grid, t_set, tolerance: float = 0.0
) -> BoundReport:
    """Checks spectral_radius(I(x_t)) against the information ceiling per (x, t)."""
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=np.float64))
    t_set = [int(t) for t in t_set]
    rows_t, rows_i, radii, bounds = [], [], [], []
    for t in t_set:
        bound = cramer_rao_bound(schedule, t)
        for i, x in enumerate(x_grid):
            info = fisher_information(model, x, t)
            rows_t.append(t)
            rows_i.append(i)
            radii.append(info.spectral_radius)
            bounds.append(bound)
    radii = np.asarray(radii)
    bounds = np.asarray(bounds)
    return BoundReport(
        t=np.asarray(rows_t, dtype=np.int64),
        point_index=np.asarray(rows_i, dtype=np.int64),
        spectral_radius=radii,
        bound=bounds,
        ratio=radii / bounds,
        tolerance=tolerance,
    )


# --- phase profile -----------------------------------------------------


def phase_profile(trace: RunTrace) -> tuple[float, float, float]:
    """Mean conditional-gradient norm over the early, middle, and late
    thirds of the step range (early = largest t)."""
    if trace.t.size == 0:
        raise ValueError("trace is empty")
    T = int(trace.t.max())
    hi = (2 * T) // 3
    lo = T // 3
    early = trace.t > hi
    late = trace.t <= lo
    mid = ~early & ~late
    return (
        float(np.mean(trace.grad_norm[early])),
        float(np.mean(trace.grad_norm[mid])),
        float(np.mean(trace.grad_norm[late])),
    )


# --- strategy-gap check ------------------------------------------------


def deviation_bound(rho: float, kappa: float, abar_t: float, abar_prev: float) -> float:
    """Claimed per-step ceiling on the FICD/MPGD state gap:
    rho * kappa * (2 sqrt(abar_{t-1}) - sqrt(abar_t)) / sqrt(abar_t)."""
    a = math.sqrt(abar_t)
    b = math.sqrt(abar_prev)
    return rho * kappa * (2.0 * b - a) / a


@dataclass
class DeviationReport:
    """Lock-stepped FICD versus MPGD one-step gaps against the claimed bound."""

    t: np.ndarray
    max_gap: np.ndarray
    bound: np.ndarray

    @property
    def passed(self) -> np.ndarray:
        return self.max_gap < self.bound

    @property
    def all_pass(self) -> bool:
        return bool(np.all(self.passed))

    def offending_steps(self) -> list[int]:
        return [int(t) for t in self.t[~self.passed]]

    def to_text(self) -> str:
        lines = ["deviation-bound report"]
        for i in range(self.t.size):
            if not self.passed[i]:
                lines.append(
                    f"  FAIL t={int(self.t[i])}:"
                    f" gap {self.max_gap[i]:.6f} >= bound {self.bound[i]:.6f}"
                )
        n_bad = len(self.offending_steps())
        lines.append(
            f"overall: {'PASS' if self.all_pass else 'FAIL'}"
            f" ({self.t.size - n_bad}/{self.t.size} steps within bound)"
        )
        return "\n".join(lines)


def deviation_bound_check(
    model,
    energy: EnergyFunction,
    c: Condition,
    rho: float,
    n_chains: int = 64,
    seed: int = 0,
    kappa: float = 1.0,
) -> DeviationReport:
    """Steps FICD and MPGD from shared states with shared noise at every t.

    The carrier trajectory advances with the FICD result; at each step
    the MPGD result is computed from the identical pre-step state, and
    the largest per-chain gap is compared against deviation_bound.
    """
    schedule: NoiseSchedule = model.schedule
    T = schedule.T
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_chains, model.dim))
    ts, gaps, bounds = [], [], []
    for t in range(T, 0, -1):
        noise = rng.standard_normal(x.shape) if t > 1 else np.zeros_like(x)
        x_f = guided_step(
            PosteriorPartStrategy.FICD, model, schedule, energy, x, t, c, rho, 1.0, noise
        )
        x_m = guided_step(
            PosteriorPartStrategy.MPGD, model, schedule, energy, x, t, c, rho, 1.0, noise
        )
        abar = float(schedule.alpha_bars[t - 1])
        abar_prev = 1.0 if t == 1 else float(schedule.alpha_bars[t - 2])
        ts.append(t)
        gaps.append(float(np.linalg.norm(x_f - x_m, axis=1).max()))
        bounds.append(deviation_bound(rho, kappa, abar, abar_prev))
        x = x_f
    return DeviationReport(
        t=np.asarray(ts, dtype=np.int64),
        max_gap=np.asarray(gaps),
        bound=np.asarray(bounds),
    )


# --- benchmarks --------------------------------------------------------


@dataclass
class BenchmarkRow:
    strategy: str
    median_run_s: float
    median_step_s: float
    score_evals_per_step: int
    jacobian_passes_per_step: int


@dataclass
class BenchmarkTable:
    rows: list[BenchmarkRow]
    T: int
    n_chains: int
    repetitions: int

    def row(self, strategy: str) -> BenchmarkRow:
        for r in self.rows:
            if r.strategy == strategy:
                return r
        raise KeyError(strategy)

    def to_text(self) -> str:
        lines = [
            f"benchmark: T={self.T} chains={self.n_chains}"
            f" repetitions={self.repetitions} (medians, warm-up discarded)",
            f"{'strategy':<10} {'run_s':>10} {'step_s':>12} {'score/step':>11} {'jac/step':>9}",
        ]
        for r in self.rows:
            lines.append(
                f"{r.strategy:<10} {r.median_run_s:>10.4f} {r.median_step_s:>12.6f}"
                f" {r.score_evals_per_step:>11d} {r.jacobian_passes_per_step:>9d}"
            )
        return "\n".join(lines)


def benchmark_steps(
    model,
    strategies,
    T: int,
    n_chains: int,
    repetitions: int = 20,
    seed: int = 0,
    energy: EnergyFunction | None = None,
    condition: Condition | None = None,
    rho: float = 0.05,
    threads: int = 1,
) -> BenchmarkTable:
    """Median wall times and exact per-step pass counts per strategy.

    Each strategy gets one discarded warm-up run followed by
    ``repetitions`` timed runs of the full sampler under an identical
    configuration.
    """
    if model.schedule.T != T:
        raise ValueError(f"model schedule has T={model.schedule.T}, expected {T}")
    if energy is None:
        energy = QuadraticEnergy()
    if condition is None:
        condition = Condition.target(np.zeros(model.dim))
    rows = []
    for strategy in strategies:
        config = SamplerConfig(
            T=T, strategy=strategy, rho=rho, n_chains=n_chains, seed=seed
        )
        run_times, step_times = [], []
        trace = None
        for rep in range(repetitions + 1):
            started = time.perf_counter()
            _, trace = sample(config, model, energy, condition, threads=threads)
            elapsed = time.perf_counter() - started
            if rep == 0:
                continue  # warm-up
            run_times.append(elapsed)
            step_times.append(float(np.median(trace.step_wall_time_s)))
        name = strategy.value if strategy is not None else "uncond"
        rows.append(
            BenchmarkRow(
                strategy=name,
                median_run_s=float(np.median(run_times)),
                median_step_s=float(np.median(step_times)),
                score_evals_per_step=int(trace.score_evals[0]),
                jacobian_passes_per_step=int(trace.jacobian_passes[0]),
            )
        )
    return BenchmarkTable(rows=rows, T=T, n_chains=n_chains, repetitions=repetitions)


# --- CSV formats -------------------------------------------------------

TRACE_COLUMNS = [
    "t",
    "grad_norm",
    "fisher_spectral_radius",
    "cr_bound",
    "coefficient_used",
    "step_wall_time_s",
    "score_evals",
    "jacobian_passes",
]


def _fmt(value: float) -> str:
    return repr(float(value))


def trace_to_csv(trace: RunTrace, path) -> None:
    """Writes one row per executed step with the fixed column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for i in range(trace.t.size):
            writer.writerow(
                [
                    int(trace.t[i]),
                    _fmt(trace.grad_norm[i]),
                    _fmt(trace.fisher_spectral_radius[i]),
                    _fmt(trace.cr_bound[i]),
                    _fmt(trace.coefficient_used[i]),
                    _fmt(trace.step_wall_time_s[i]),
                    int(trace.score_evals[i]),
                    int(trace.jacobian_passes[i]),
                ]
            )


def trace_from_csv(path) -> RunTrace:
    """Rebuilds per-step arrays from a trace CSV.

    Chain-level fields are not stored in the CSV, so flagged_chains
    comes back empty and n_chains as 0.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header}")
        rows = [row for row in reader if row]
    cols = list(zip(*rows)) if rows else [[] for _ in TRACE_COLUMNS]
    return RunTrace(
        t=np.asarray([int(v) for v in cols[0]], dtype=np.int64),
        grad_norm=np.asarray([float(v) for v in cols[1]]),
        fisher_spectral_radius=np.asarray([float(v) for v in cols[2]]),
        cr_bound=np.asarray([float(v) for v in cols[3]]),
        coefficient_used=np.asarray([float(v) for v in cols[4]]),
        step_wall_time_s=np.asarray([float(v) for v in cols[5]]),
        score_evals=np.asarray([int(v) for v in cols[6]], dtype=np.int64),
        jacobian_passes=np.asarray([int(v) for v in cols[7]], dtype=np.int64),
        flagged_chains=np.empty(0, dtype=np.int64),
        n_chains=0,
    )


def samples_to_csv(samples: np.ndarray, path) -> None:
    """Writes chain_id plus one dim_j column per coordinate."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    d = samples.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain_id"] + [f"dim_{j}" for j in range(d)])
        for i, row in enumerate(samples):
            writer.writerow([i] + [_fmt(v) for v in row])


def samples_from_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "chain_id" or any(
            h != f"dim_{j}" for j, h in enumerate(header[1:])
        ):
            raise ValueError(f"unexpected samples header {header}")
        rows = [row for row in reader if row]
    return np.asarray([[float(v) for v in row[1:]] for row in rows])
