"""Score-model interface, noise/score conversions, and the difference oracle."""

from __future__ import annotations

import math
from abc import ABC, abstractmethod

import numpy as np

from ficd.schedule import NoiseSchedule, alpha_bar

__all__ = ["ScoreModel", "eps_to_score", "score_to_eps", "finite_diff_jacobian"]


class ScoreModel(ABC):
    """A score oracle s(x, t) approximating the gradient of log p(x_t).

    Evaluation is deterministic for fixed (x, t) and instances are
    immutable once built, so one model may serve many sampling chains
    concurrently. ``x`` may be a single point of shape (d,) or a batch
    of shape (N, d); the result matches the input shape. ``t`` is a
    step index in 1..T shared by the whole batch.
    """

    #: True when jacobian() returns the exact derivative of score()
    #: (closed form or exact reverse-mode), False when only the
    #: finite-difference oracle applies.
    has_analytic_jacobian: bool = False

    @property
    @abstractmethod
    def dim(self) -> int:
        """Dimension d of the state space."""

    @abstractmethod
    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        """Score s(x, t) with the same leading shape as x."""

    def jacobian(self, x: np.ndarray, t: int) -> np.ndarray:
        """Derivative of the score w.r.t. x: (d, d), or (N, d, d) for a batch."""
        raise NotImplementedError(f"{type(self).__name__} has no jacobian")

    def score_vjp(self, x: np.ndarray, t: int, v: np.ndarray) -> np.ndarray:
        """Transpose-Jacobian action J(x, t)^T v, shaped like x.

        The default route materializes the full Jacobian; models with a
        cheaper pullback override this.
        """
        J = self.jacobian(x, t)
        if x.ndim == 1:
            return J.T @ v
        return np.einsum("nij,ni->nj", J, v)


def eps_to_score(eps_pred: np.ndarray, schedule: NoiseSchedule, t: int) -> np.ndarray:
    """Convert a noise prediction to a score: -eps_pred / sqrt(1 - alpha_bar_t)."""
    abar = alpha_bar(schedule, t)
    if abar >= 1.0:
        raise ZeroDivisionError("alpha_bar_t = 1 leaves no noise to invert")
    return -np.asarray(eps_pred) / math.sqrt(1.0 - abar)


def score_to_eps(score: np.ndarray, schedule: NoiseSchedule, t: int) -> np.ndarray:
    """Inverse of eps_to_score: -score * sqrt(1 - alpha_bar_t)."""
    abar = alpha_bar(schedule, t)
    if abar >= 1.0:
        raise ZeroDivisionError("alpha_bar_t = 1 leaves no noise to invert")
    return -np.asarray(score) * math.sqrt(1.0 - abar)


def finite_diff_jacobian(
    model: ScoreModel, x: np.ndarray, t: int, h: float | None = None
) -> np.ndarray:
    """Central-difference Jacobian of the score at a single point.

    Column j is (s(x + h e_j, t) - s(x - h e_j, t)) / (2 h). The default
    step h = 1e-4 * (1 + max|x_i|) balances truncation against rounding
    at double precision.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("finite_diff_jacobian expects a single point of shape (d,)")
    d = x.size
    if h is None:
        h = 1e-4 * (1.0 + float(np.max(np.abs(x))))
    if h <= 0.0:
        raise ValueError("h must be positive")
    J = np.empty((d, d), dtype=np.float64)
    for j in range(d):
        bumped = np.tile(x, (2, 1))
        bumped[0, j] += h
        bumped[1, j] -= h
        s_plus = model.score(bumped[0], t)
        s_minus = model.score(bumped[1], t)
        if not (np.all(np.isfinite(s_plus)) and np.all(np.isfinite(s_minus))):
            raise ValueError(f"non-finite score while probing coordinate {j} at t={t}")
        J[:, j] = (s_plus - s_minus) / (2.0 * h)
    return J
