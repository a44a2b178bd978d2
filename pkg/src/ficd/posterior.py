"""Posterior-mean estimation, score-derivative information, and its bound.

The guided samplers split the conditional score into a measurement part
and a posterior part. This module owns the posterior side: the
denoised-mean estimate, the exact derivative of that estimate, the
cheap scalar surrogates that replace it, and the schedule-only bound
the surrogate is built from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ficd.schedule import NoiseSchedule, alpha_bar
from ficd.scoremodel.base import ScoreModel, finite_diff_jacobian

__all__ = [
    "PosteriorPartStrategy",
    "FisherInfo",
    "tweedie_posterior_mean",
    "tweedie_from_score",
    "fisher_information",
    "cramer_rao_bound",
    "posterior_jacobian_exact",
    "posterior_vjp_exact",
    "posterior_coefficient",
    "posterior_coefficient_from_alpha_bars",
    "fisher_info_csv",
]


class PosteriorPartStrategy(Enum):
    """How the derivative of the denoised mean enters the guidance term.

    EXACT uses the full transpose-Jacobian product, FICD the scalar
    2 / sqrt(alpha_bar_t) obtained by substituting the information bound
    for the score derivative, MPGD the scalar sqrt(alpha_bar_{t-1}), and
    UNIT the constant 1 (an ablation).
    """

    EXACT = "exact"
    FICD = "ficd"
    MPGD = "mpgd"
    UNIT = "unit"


@dataclass(frozen=True)
class FisherInfo:
    """Pointwise score derivative with its most conservative scalar summary."""

    matrix: np.ndarray
    spectral_radius: float
    t: int


def tweedie_from_score(x: np.ndarray, score: np.ndarray, abar: float) -> np.ndarray:
    """Denoised-mean estimate from an already computed score value."""
    if abar <= 0.0:
        raise ZeroDivisionError("alpha_bar_t must be positive to denoise")
    return (x + (1.0 - abar) * score) / math.sqrt(abar)


def tweedie_posterior_mean(
    model: ScoreModel, schedule: NoiseSchedule, x: np.ndarray, t: int
) -> np.ndarray:
    """E[x_0 | x_t] via the score: (x + (1 - alpha_bar_t) s(x, t)) / sqrt(alpha_bar_t)."""
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in 1..{schedule.T}, got {t}")
    x = np.asarray(x, dtype=np.float64)
    return tweedie_from_score(x, model.score(x, t), alpha_bar(schedule, t))


def fisher_information(model: ScoreModel, x: np.ndarray, t: int) -> FisherInfo:
    """Score Jacobian at one point plus its spectral radius.

    Uses the model's exact Jacobian when it has one, otherwise the
    central-difference oracle. The radius is the largest eigenvalue
    magnitude; signs are deliberately dropped since the derivative of a
    well-behaved score is negative-definite and the bound applies to
    magnitudes.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("fisher_information expects a single point of shape (d,)")
    if model.has_analytic_jacobian:
        J = model.jacobian(x, t)
    else:
        J = finite_diff_jacobian(model, x, t)
    if not np.all(np.isfinite(J)):
        raise ValueError(f"non-finite score derivative at t={t}")
    radius = float(np.max(np.abs(np.linalg.eigvals(J))))
    return FisherInfo(matrix=J, spectral_radius=radius, t=t)


def cramer_rao_bound(schedule: NoiseSchedule, t: int) -> float:
    """Schedule-only information ceiling 1 / (1 - alpha_bar_t)."""
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in 1..{schedule.T}, got {t}")
    abar = alpha_bar(schedule, t)
    if abar >= 1.0:
        raise ZeroDivisionError("bound undefined at alpha_bar_t = 1")
    return 1.0 / (1.0 - abar)


def posterior_jacobian_exact(
    model: ScoreModel, schedule: NoiseSchedule, x: np.ndarray, t: int
) -> np.ndarray:
    """Derivative of the denoised mean w.r.t. x_t.

    (1 / sqrt(alpha_bar_t)) (I + (1 - alpha_bar_t) J) with J the score
    Jacobian; (d, d) for a point, (N, d, d) for a batch. Intended for
    small-d verification; samplers use posterior_vjp_exact instead.
    """
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in 1..{schedule.T}, got {t}")
    abar = alpha_bar(schedule, t)
    x = np.asarray(x, dtype=np.float64)
    J = model.jacobian(x, t)
    eye = np.eye(model.dim)
    return (eye + (1.0 - abar) * J) / math.sqrt(abar)


def posterior_vjp_exact(
    model: ScoreModel, schedule: NoiseSchedule, x: np.ndarray, t: int, v: np.ndarray
) -> np.ndarray:
    """Transposed action of the exact posterior derivative on v.

    (1 / sqrt(alpha_bar_t)) (v + (1 - alpha_bar_t) J^T v) without
    materializing J, which is how the chain rule consumes it.
    """
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in 1..{schedule.T}, got {t}")
    abar = alpha_bar(schedule, t)
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return (v + (1.0 - abar) * model.score_vjp(x, t, v)) / math.sqrt(abar)


def posterior_coefficient_from_alpha_bars(
    strategy: PosteriorPartStrategy, abar_t: float, abar_prev: float
) -> float:
    """Scalar posterior-part stand-in from raw running-product values."""
    if strategy is PosteriorPartStrategy.EXACT:
        raise ValueError("EXACT has no scalar coefficient; use posterior_vjp_exact")
    if strategy is PosteriorPartStrategy.FICD:
        if abar_t <= 0.0:
            raise ZeroDivisionError("alpha_bar_t must be positive")
        return 2.0 / math.sqrt(abar_t)
    if strategy is PosteriorPartStrategy.MPGD:
        return math.sqrt(abar_prev)
    return 1.0


def posterior_coefficient(
    strategy: PosteriorPartStrategy, schedule: NoiseSchedule, t: int
) -> float:
    """Scalar stand-in at step t; the MPGD value reads alpha_bar at t - 1."""
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in 1..{schedule.T}, got {t}")
    return posterior_coefficient_from_alpha_bars(
        strategy, alpha_bar(schedule, t), alpha_bar(schedule, t - 1)
    )


def fisher_info_csv(
    model: ScoreModel, schedule: NoiseSchedule, x: np.ndarray, ts: list[int]
) -> str:
    """CSV rows (t, spectral_radius, bound, ratio) at a fixed probe point."""
    lines = ["t,spectral_radius,bound,ratio"]
    for t in ts:
        info = fisher_information(model, np.asarray(x, dtype=np.float64), t)
        bound = cramer_rao_bound(schedule, t)
        lines.append(
            f"{t},{info.spectral_radius!r},{bound!r},{info.spectral_radius / bound!r}"
        )
    return "\n".join(lines) + "\n"
