"""Reverse-process sampling: plain, guided, DDIM, and time-travel loops.

Chains are embarrassingly parallel. Every chain owns a counter-based
random stream keyed by (seed, chain index), and the chain population is
cut into fixed-size blocks that are processed as batches. The block
partition and all reduction orders are independent of the worker-thread
count, so a run is a pure function of its configuration.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ficd.guidance import Condition, EnergyFunction, guidance_gradient_norm
from ficd.posterior import (
    PosteriorPartStrategy,
    cramer_rao_bound,
    fisher_information,
    posterior_coefficient_from_alpha_bars,
    tweedie_from_score,
)
from ficd.schedule import NoiseSchedule

__all__ = [
    "Discretization",
    "TimeTravel",
    "SamplerConfig",
    "ChainState",
    "RunTrace",
    "ChainFailureError",
    "chain_rng",
    "initial_chain_state",
    "euler_step_from_parts",
    "unconditional_step",
    "ddim_sigma",
    "ddim_step",
    "ficd_step",
    "guided_step",
    "time_travel_wrap",
    "sample",
]

# Chains per batch block. Fixed (never derived from the thread count) so
# that the arithmetic, and therefore the output, is identical no matter
# how many workers execute the blocks.
BLOCK_SIZE = 512


class Discretization(Enum):
    SDE_EULER = "sde_euler"
    DDIM = "ddim"


class ChainFailureError(RuntimeError):
    """More than the tolerated share of chains left the finite domain."""

    def __init__(self, message: str, flagged: np.ndarray):
        super().__init__(message)
        self.flagged = flagged


@dataclass(frozen=True)
class TimeTravel:
    """Re-noising repeats applied inside an active step window.

    ``repeats = 0`` disables the mechanism. A window of None selects the
    middle third of the steps, where guidance is known to matter most.
    """

    repeats: int = 0
    t_lo: int | None = None
    t_hi: int | None = None

    def resolve(self, T: int) -> tuple[int, int, int]:
        """Returns (repeats, t_lo, t_hi) with defaults filled in for T steps."""
        if self.repeats < 0:
            raise ValueError("time-travel repeats must be >= 0")
        if self.repeats == 0:
            return 0, 1, 0
        lo = self.t_lo if self.t_lo is not None else T // 3 + 1
        hi = self.t_hi if self.t_hi is not None else (2 * T) // 3
        if not (1 <= lo <= hi <= T):
            raise ValueError(f"time-travel window [{lo}, {hi}] must lie inside [1, {T}]")
        return self.repeats, lo, hi


@dataclass(frozen=True)
class SamplerConfig:
    """Everything a sampling run depends on besides the model and energy.

    ``strategy = None`` runs unconditionally (no energy consulted).
    ``rho`` is a constant or a length-T vector of per-step guidance
    weights. ``double_score_eval`` restores the literal two score
    evaluations per step (drift and denoised mean) instead of reusing
    one. ``final_noise`` keeps the noise injection at t = 1, which is
    suppressed by default to return a clean terminal sample.
    """

    T: int
    strategy: PosteriorPartStrategy | None = PosteriorPartStrategy.FICD
    rho: float | np.ndarray = 1.0
    lam: float = 1.0
    discretization: Discretization = Discretization.SDE_EULER
    ddim_eta: float = 0.0
    time_travel: TimeTravel = field(default_factory=TimeTravel)
    n_chains: int = 1
    seed: int = 0
    double_score_eval: bool = False
    final_noise: bool = False
    trace_fisher: bool = False

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError("T must be positive")
        if self.n_chains < 1:
            raise ValueError("n_chains must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        rho = np.atleast_1d(np.asarray(self.rho, dtype=np.float64))
        if rho.size not in (1, self.T):
            raise ValueError(f"rho must be a scalar or a vector of {self.T} values")
        if not np.all(np.isfinite(rho)) or np.any(rho < 0.0):
            raise ValueError("every rho_t must be finite and >= 0")
        if not math.isfinite(self.lam):
            raise ValueError("lambda must be finite")
        if self.ddim_eta < 0.0:
            raise ValueError("ddim_eta must be >= 0")
        self.time_travel.resolve(self.T)  # validates the window

    def resolved_rho(self) -> np.ndarray:
        """Per-step vector indexed by t - 1."""
        rho = np.atleast_1d(np.asarray(self.rho, dtype=np.float64))
        return np.full(self.T, rho[0]) if rho.size == 1 else rho.copy()


@dataclass
class ChainState:
    """One chain mid-run: position, current step index, and its own stream."""

    x: np.ndarray
    t: int
    rng_stream: np.random.Generator


def chain_rng(seed: int, chain_index: int) -> np.random.Generator:
    """The chain's counter-based stream; pure function of (seed, index)."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(chain_index)]))


def initial_chain_state(config: SamplerConfig, chain_index: int, d: int) -> ChainState:
    rng = chain_rng(config.seed, chain_index)
    return ChainState(x=rng.standard_normal(d), t=config.T, rng_stream=rng)


# --- single steps ------------------------------------------------------


def euler_step_from_parts(
    x: np.ndarray, score: np.ndarray, beta: float, noise: np.ndarray
) -> np.ndarray:
    """(1 + beta/2) x + beta * score + sqrt(beta) * noise."""
    return (1.0 + 0.5 * beta) * x + beta * score + math.sqrt(beta) * noise


def unconditional_step(model, schedule: NoiseSchedule, x, t: int, noise) -> np.ndarray:
    """One reverse Euler step t -> t-1 with externally supplied noise."""
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in 1..{schedule.T}, got {t}")
    x = np.asarray(x, dtype=np.float64)
    out = euler_step_from_parts(x, model.score(x, t), float(schedule.betas[t - 1]), noise)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite state after unconditional step at t={t}")
    return out


def ddim_sigma(schedule: NoiseSchedule, t: int, eta: float) -> float:
    """The usual eta rule: eta * sqrt((1-abar_prev)/(1-abar)) * sqrt(1 - abar/abar_prev)."""
    abar = float(schedule.alpha_bars[t - 1])
    abar_prev = 1.0 if t == 1 else float(schedule.alpha_bars[t - 2])
    inner = max(1.0 - abar / abar_prev, 0.0)
    return eta * math.sqrt((1.0 - abar_prev) / (1.0 - abar)) * math.sqrt(inner)


def ddim_step(model, schedule: NoiseSchedule, x, t: int, sigma_t: float, noise) -> np.ndarray:
    """Denoise-and-redirect step: sqrt(abar_prev) x0_hat + direction + sigma noise."""
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in 1..{schedule.T}, got {t}")
    x = np.asarray(x, dtype=np.float64)
    abar = float(schedule.alpha_bars[t - 1])
    abar_prev = 1.0 if t == 1 else float(schedule.alpha_bars[t - 2])
    det = 1.0 - abar_prev - sigma_t**2
    if det < -1e-12:
        raise ValueError("sigma_t**2 exceeds 1 - alpha_bar_{t-1}")
    s = model.score(x, t)
    eps = -math.sqrt(1.0 - abar) * s
    x0_hat = tweedie_from_score(x, s, abar)
    out = math.sqrt(abar_prev) * x0_hat + math.sqrt(max(det, 0.0)) * eps + sigma_t * noise
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite state after step at t={t}")
    return out


def _guided_update(
    strategy: PosteriorPartStrategy | None,
    model,
    schedule: NoiseSchedule,
    energy: EnergyFunction | None,
    x: np.ndarray,
    t: int,
    c: Condition | None,
    rho_t: float,
    lam: float,
    noise: np.ndarray,
    discretization: Discretization,
    sigma_t: float,
    double_eval: bool,
    counts: dict,
):
    """Shared step body; returns (new state, conditional-gradient norms or None)."""
    beta = float(schedule.betas[t - 1])
    abar = float(schedule.alpha_bars[t - 1])
    abar_prev = 1.0 if t == 1 else float(schedule.alpha_bars[t - 2])
    s = model.score(x, t)
    counts["score_evals"] += 1
    if discretization is Discretization.SDE_EULER:
        y = euler_step_from_parts(x, s, beta, noise)
    else:
        eps = -math.sqrt(1.0 - abar) * s
        det = max(1.0 - abar_prev - sigma_t**2, 0.0)
        y = (
            math.sqrt(abar_prev) * tweedie_from_score(x, s, abar)
            + math.sqrt(det) * eps
            + sigma_t * noise
        )
    if strategy is None:
        return y, None
    if energy is None or c is None:
        raise ValueError("guided sampling needs an energy and a condition")
    if double_eval:
        s_hat = model.score(x, t)
        counts["score_evals"] += 1
    else:
        s_hat = s
    x0_hat = tweedie_from_score(x, s_hat, abar)
    g = lam * energy.grad(x0_hat, c)
    if strategy is PosteriorPartStrategy.EXACT:
        cond = (g + (1.0 - abar) * model.score_vjp(x, t, g)) / math.sqrt(abar)
        counts["jacobian_passes"] += 1
    else:
        cond = posterior_coefficient_from_alpha_bars(strategy, abar, abar_prev) * g
    return y - rho_t * cond, guidance_gradient_norm(cond)


def guided_step(
    strategy: PosteriorPartStrategy | None,
    model,
    schedule: NoiseSchedule,
    energy: EnergyFunction | None,
    x,
    t: int,
    c: Condition | None,
    rho_t: float,
    lam: float,
    noise,
    discretization: Discretization = Discretization.SDE_EULER,
    sigma_t: float = 0.0,
    double_eval: bool = False,
    counts: dict | None = None,
) -> np.ndarray:
    """One guided step t -> t-1 under any posterior-part strategy.

    One score evaluation per step by default (the denoised mean reuses
    the drift score); ``double_eval`` restores the literal second
    evaluation. ``counts``, when given, accrues per-chain
    "score_evals" and "jacobian_passes".
    """
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in 1..{schedule.T}, got {t}")
    x = np.asarray(x, dtype=np.float64)
    if counts is None:
        counts = {"score_evals": 0, "jacobian_passes": 0}
    out, _ = _guided_update(
        strategy, model, schedule, energy, x, t, c, rho_t, lam, np.asarray(noise),
        discretization, sigma_t, double_eval, counts,
    )
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite state after guided step at t={t}")
    return out


def ficd_step(
    model,
    schedule: NoiseSchedule,
    energy: EnergyFunction,
    x,
    t: int,
    c: Condition,
    rho_t: float,
    lam: float,
    noise,
    **kwargs,
) -> np.ndarray:
    """Guided step with the scalar 2 / sqrt(alpha_bar_t) posterior part."""
    return guided_step(
        PosteriorPartStrategy.FICD, model, schedule, energy, x, t, c, rho_t, lam, noise, **kwargs
    )


def time_travel_wrap(step_fn, schedule: NoiseSchedule, x, t: int, r: int, rng) -> np.ndarray:
    """Run step_fn(x, noise) at step t, then r times re-noise and re-run.

    Re-noising applies the one-step forward kernel
    x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps. All noise comes
    from rng in a fixed order: step, then (re-noise, step) per repeat.
    """
    if r < 0:
        raise ValueError("repeat count must be >= 0")
    beta = float(schedule.betas[t - 1])
    x = np.asarray(x, dtype=np.float64)
    y = step_fn(x, rng.standard_normal(x.shape))
    for _ in range(r):
        eps = rng.standard_normal(x.shape)
        renoised = math.sqrt(1.0 - beta) * y + math.sqrt(beta) * eps
        y = step_fn(renoised, rng.standard_normal(x.shape))
    return y


# --- the full loop -----------------------------------------------------


@dataclass
class RunTrace:
    """Per-executed-step diagnostics of one sampling run.

    Arrays share one length: the number of executed steps (T plus any
    time-travel repeats, which appear as extra rows at the same t).
    ``grad_norm`` is the mean conditional-gradient norm over the chains
    still finite at that step (nan for unconditional runs).
    ``fisher_spectral_radius`` is probed at the mean chain state when
    enabled and is nan otherwise; the probe is diagnostic and not part
    of the counted sampling cost. ``score_evals`` and
    ``jacobian_passes`` are per-chain counts for the step.
    """

    t: np.ndarray
    grad_norm: np.ndarray
    fisher_spectral_radius: np.ndarray
    cr_bound: np.ndarray
    coefficient_used: np.ndarray
    step_wall_time_s: np.ndarray
    score_evals: np.ndarray
    jacobian_passes: np.ndarray
    flagged_chains: np.ndarray
    n_chains: int


def _plan_entries(T: int, repeats: int, t_lo: int, t_hi: int):
    """Execution order as (t, renoise_first, tape_slot); slot 0 is the init draw."""
    entries = []
    slot = 1
    for t in range(T, 0, -1):
        entries.append((t, False, slot))
        slot += 1
        if repeats > 0 and t_lo <= t <= t_hi:
            for _ in range(repeats):
                entries.append((t, True, slot))
                slot += 2
    return entries, slot


def sample(
    config: SamplerConfig,
    model,
    energy: EnergyFunction | None = None,
    condition: Condition | None = None,
    threads: int = 1,
):
    """Run every chain from x_T ~ N(0, I) down to x_0.

    Returns (samples, trace) with samples of shape (n_chains, d). The
    output is a pure function of the configuration, model, energy, and
    condition; the thread count changes the wall time only. A chain
    whose state stops being finite is flagged and its row reported as
    nan; the run aborts with ChainFailureError when more than 1% of
    chains are flagged.
    """
    schedule: NoiseSchedule = model.schedule
    if config.T != schedule.T:
        raise ValueError(f"config.T = {config.T} does not match the model schedule T = {schedule.T}")
    if config.strategy is not None and (energy is None or condition is None):
        raise ValueError("guided sampling needs an energy and a condition")
    d = model.dim
    N = config.n_chains
    rho = config.resolved_rho()
    repeats, t_lo, t_hi = config.time_travel.resolve(config.T)
    entries, tape_len = _plan_entries(config.T, repeats, t_lo, t_hi)

    blocks = [(lo, min(lo + BLOCK_SIZE, N)) for lo in range(0, N, BLOCK_SIZE)]
    tapes = []
    for lo, hi in blocks:
        tape = np.empty((hi - lo, tape_len, d))
        for ci in range(lo, hi):
            tape[ci - lo] = chain_rng(config.seed, ci).standard_normal((tape_len, d))
        tapes.append(tape)

    x = np.empty((N, d))
    for bi, (lo, hi) in enumerate(blocks):
        x[lo:hi] = tapes[bi][:, 0]
    flagged = np.zeros(N, dtype=bool)

    n_steps = len(entries)
    trace = RunTrace(
        t=np.empty(n_steps, dtype=np.int64),
        grad_norm=np.full(n_steps, np.nan),
        fisher_spectral_radius=np.full(n_steps, np.nan),
        cr_bound=np.empty(n_steps),
        coefficient_used=np.full(n_steps, np.nan),
        step_wall_time_s=np.empty(n_steps),
        score_evals=np.empty(n_steps, dtype=np.int64),
        jacobian_passes=np.empty(n_steps, dtype=np.int64),
        flagged_chains=np.empty(0, dtype=np.int64),
        n_chains=N,
    )

    def run_block(bi: int, t: int, renoise: bool, slot: int, sigma_t: float):
        lo, hi = blocks[bi]
        xb = x[lo:hi]
        tape = tapes[bi]
        beta = float(schedule.betas[t - 1])
        if renoise:
            xb = math.sqrt(1.0 - beta) * xb + math.sqrt(beta) * tape[:, slot]
            noise_slot = slot + 1
        else:
            noise_slot = slot
        noise = tape[:, noise_slot]
        if t == 1 and not config.final_noise:
            noise = np.zeros_like(noise)
        counts = {"score_evals": 0, "jacobian_passes": 0}
        ok_before = ~flagged[lo:hi]
        state_sum = xb[ok_before].sum(axis=0) if config.trace_fisher else None
        y, cond_norms = _guided_update(
            config.strategy, model, schedule, energy, xb, t, condition,
            float(rho[t - 1]), config.lam, noise,
            config.discretization, sigma_t, config.double_score_eval, counts,
        )
        ok_now = np.all(np.isfinite(y), axis=1)
        newly = np.flatnonzero(ok_before & ~ok_now) + lo
        y[~ok_now] = np.nan
        x[lo:hi] = y
        ok_rows = ok_before & ok_now
        if cond_norms is None:
            grad_sum, n_ok = 0.0, int(np.sum(ok_rows))
        else:
            grad_sum, n_ok = float(np.sum(cond_norms[ok_rows])), int(np.sum(ok_rows))
        return grad_sum, n_ok, newly, counts, state_sum, int(np.sum(ok_before))

    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for si, (t, renoise, slot) in enumerate(entries):
            sigma_t = (
                ddim_sigma(schedule, t, config.ddim_eta)
                if config.discretization is Discretization.DDIM
                else 0.0
            )
            started = time.perf_counter()
            if executor is None:
                results = [run_block(bi, t, renoise, slot, sigma_t) for bi in range(len(blocks))]
            else:
                results = list(
                    executor.map(lambda bi: run_block(bi, t, renoise, slot, sigma_t), range(len(blocks)))
                )
            trace.step_wall_time_s[si] = time.perf_counter() - started

            grad_sum = 0.0
            n_ok = 0
            state_sum = np.zeros(d)
            n_before = 0
            counts0 = results[0][3]
            for grad_b, ok_b, newly_b, counts_b, state_b, before_b in results:
                if counts_b != counts0:
                    raise AssertionError("per-chain cost counts diverged across blocks")
                grad_sum += grad_b
                n_ok += ok_b
                n_before += before_b
                if state_b is not None:
                    state_sum += state_b
                flagged[newly_b] = True

            trace.t[si] = t
            trace.cr_bound[si] = cramer_rao_bound(schedule, t)
            trace.score_evals[si] = counts0["score_evals"]
            trace.jacobian_passes[si] = counts0["jacobian_passes"]
            if config.strategy is not None and n_ok > 0:
                trace.grad_norm[si] = grad_sum / n_ok
            if config.strategy not in (None, PosteriorPartStrategy.EXACT):
                abar = float(schedule.alpha_bars[t - 1])
                abar_prev = 1.0 if t == 1 else float(schedule.alpha_bars[t - 2])
                trace.coefficient_used[si] = posterior_coefficient_from_alpha_bars(
                    config.strategy, abar, abar_prev
                )
            if config.trace_fisher and n_before > 0:
                probe = state_sum / n_before
                trace.fisher_spectral_radius[si] = fisher_information(
                    model, probe, t
                ).spectral_radius
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    trace.flagged_chains = np.flatnonzero(flagged)
    if trace.flagged_chains.size > 0.01 * N:
        raise ChainFailureError(
            f"{trace.flagged_chains.size} of {N} chains left the finite domain",
            trace.flagged_chains,
        )
    return x, trace
