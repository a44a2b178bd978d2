"""Energy functions on the denoised mean and the assembled guidance gradient.

An energy scores how far a denoised estimate sits from the condition;
its gradient, pushed back through the chosen posterior-part strategy,
is the conditional term the samplers subtract. Energies accept a single
point (d,) or a batch (N, d) and return correspondingly shaped values.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ficd.posterior import (
    PosteriorPartStrategy,
    posterior_coefficient,
    posterior_vjp_exact,
    tweedie_posterior_mean,
)
from ficd.schedule import NoiseSchedule
from ficd.scoremodel.base import ScoreModel

__all__ = [
    "Condition",
    "EnergyFunction",
    "QuadraticEnergy",
    "DistanceEnergy",
    "LinearMeasurementEnergy",
    "GramEnergy",
    "apply_posterior_part",
    "conditional_term_gradient",
    "guidance_gradient_norm",
    "condition_to_text",
    "condition_from_text",
]


@dataclass(frozen=True)
class Condition:
    """The c an energy compares against.

    Exactly one payload is populated: a target point y, a measurement
    pair (A, y), or a reference feature matrix.
    """

    kind: str
    y: np.ndarray | None = None
    A: np.ndarray | None = None
    features: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind == "target":
            if self.y is None or self.A is not None or self.features is not None:
                raise ValueError("target condition carries y only")
        elif self.kind == "measurement":
            if self.y is None or self.A is None or self.features is not None:
                raise ValueError("measurement condition carries A and y")
            if np.atleast_2d(self.A).shape[0] != np.atleast_1d(self.y).size:
                raise ValueError("measurement rows of A must match the length of y")
        elif self.kind == "features":
            if self.features is None or self.y is not None or self.A is not None:
                raise ValueError("feature condition carries features only")
        else:
            raise ValueError(f"unknown condition kind {self.kind!r}")
        for name in ("y", "A", "features"):
            value = getattr(self, name)
            if value is not None:
                arr = np.array(value, dtype=np.float64)
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)

    @classmethod
    def target(cls, y) -> "Condition":
        return cls(kind="target", y=np.atleast_1d(np.asarray(y, dtype=np.float64)))

    @classmethod
    def measurement(cls, A, y) -> "Condition":
        return cls(
            kind="measurement",
            A=np.atleast_2d(np.asarray(A, dtype=np.float64)),
            y=np.atleast_1d(np.asarray(y, dtype=np.float64)),
        )

    @classmethod
    def reference_features(cls, features) -> "Condition":
        return cls(kind="features", features=np.atleast_2d(np.asarray(features, dtype=np.float64)))


class EnergyFunction(ABC):
    """Non-negative differentiable mismatch between a denoised point and c.

    ``lipschitz_bound`` is a global ceiling on the gradient norm when one
    exists (None otherwise; callers estimate a per-run value instead).
    """

    lipschitz_bound: float | None = None

    @abstractmethod
    def value(self, x0_hat: np.ndarray, c: Condition) -> float | np.ndarray: ...

    @abstractmethod
    def grad(self, x0_hat: np.ndarray, c: Condition) -> np.ndarray: ...


def _target_diff(x0_hat: np.ndarray, c: Condition) -> np.ndarray:
    if c.kind != "target":
        raise ValueError(f"this energy expects a target condition, got {c.kind!r}")
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    if x0_hat.shape[-1] != c.y.size:
        raise ValueError(f"dimension mismatch: point has {x0_hat.shape[-1]}, target has {c.y.size}")
    return x0_hat - c.y


class QuadraticEnergy(EnergyFunction):
    """Squared distance to a target point: value |x - y|^2, grad 2 (x - y).

    The gradient norm grows without bound, so no global ceiling exists.
    """

    def value(self, x0_hat, c):
        diff = _target_diff(x0_hat, c)
        return np.sum(diff * diff, axis=-1)

    def grad(self, x0_hat, c):
        return 2.0 * _target_diff(x0_hat, c)


class DistanceEnergy(EnergyFunction):
    """Plain distance to a target point; its gradient is unit-norm away from y."""

    lipschitz_bound = 1.0

    def value(self, x0_hat, c):
        diff = _target_diff(x0_hat, c)
        return np.linalg.norm(diff, axis=-1)

    def grad(self, x0_hat, c):
        diff = _target_diff(x0_hat, c)
        norm = np.linalg.norm(diff, axis=-1, keepdims=True)
        return np.divide(diff, norm, out=np.zeros_like(diff), where=norm > 0.0)


class LinearMeasurementEnergy(EnergyFunction):
    """Squared residual of a linear observation: |A x - y|^2."""

    def _residual(self, x0_hat, c):
        if c.kind != "measurement":
            raise ValueError(f"this energy expects a measurement condition, got {c.kind!r}")
        x0_hat = np.asarray(x0_hat, dtype=np.float64)
        if x0_hat.shape[-1] != c.A.shape[1]:
            raise ValueError(
                f"dimension mismatch: point has {x0_hat.shape[-1]}, A has {c.A.shape[1]} columns"
            )
        return x0_hat @ c.A.T - c.y

    def value(self, x0_hat, c):
        r = self._residual(x0_hat, c)
        return np.sum(r * r, axis=-1)

    def grad(self, x0_hat, c):
        return 2.0 * self._residual(x0_hat, c) @ c.A


class GramEnergy(EnergyFunction):
    """Squared Frobenius distance between second-moment (Gram) matrices.

    The point is mapped to a k x n feature matrix F (by an optional
    linear map, then a reshape) and compared to the reference features
    through G = F F^T, which forgets any rotation of the feature rows.
    """

    def __init__(self, feature_shape: tuple[int, int], feature_matrix: np.ndarray | None = None):
        k, n = feature_shape
        if k < 1 or n < 1:
            raise ValueError("feature_shape must be positive")
        self.feature_shape = (int(k), int(n))
        self.feature_matrix = (
            None if feature_matrix is None else np.asarray(feature_matrix, dtype=np.float64)
        )
        if self.feature_matrix is not None and self.feature_matrix.shape[0] != k * n:
            raise ValueError("feature_matrix must have k * n rows")

    def _features(self, x0_hat):
        k, n = self.feature_shape
        x0_hat = np.asarray(x0_hat, dtype=np.float64)
        mapped = x0_hat if self.feature_matrix is None else x0_hat @ self.feature_matrix.T
        if mapped.shape[-1] != k * n:
            raise ValueError(f"cannot reshape {mapped.shape[-1]} values into {k}x{n} features")
        return mapped.reshape(*mapped.shape[:-1], k, n)

    def _reference_gram(self, c):
        if c.kind != "features":
            raise ValueError(f"this energy expects a feature condition, got {c.kind!r}")
        if c.features.shape != self.feature_shape:
            raise ValueError(
                f"reference features {c.features.shape} do not match {self.feature_shape}"
            )
        return c.features @ c.features.T

    def value(self, x0_hat, c):
        F = self._features(x0_hat)
        D = F @ np.swapaxes(F, -1, -2) - self._reference_gram(c)
        return np.sum(D * D, axis=(-2, -1))

    def grad(self, x0_hat, c):
        F = self._features(x0_hat)
        D = F @ np.swapaxes(F, -1, -2) - self._reference_gram(c)
        grad_F = 4.0 * (D @ F)
        flat = grad_F.reshape(*grad_F.shape[:-2], -1)
        if self.feature_matrix is not None:
            flat = flat @ self.feature_matrix
        return flat


def apply_posterior_part(
    strategy: PosteriorPartStrategy,
    model: ScoreModel,
    schedule: NoiseSchedule,
    x: np.ndarray,
    t: int,
    g: np.ndarray,
) -> np.ndarray:
    """Push a measurement-space gradient g back through the posterior part."""
    if strategy is PosteriorPartStrategy.EXACT:
        return posterior_vjp_exact(model, schedule, x, t, g)
    return posterior_coefficient(strategy, schedule, t) * g


def conditional_term_gradient(
    strategy: PosteriorPartStrategy,
    model: ScoreModel,
    schedule: NoiseSchedule,
    energy: EnergyFunction,
    x: np.ndarray,
    t: int,
    c: Condition,
    lam: float = 1.0,
) -> np.ndarray:
    """Gradient of the conditional term at x_t under the given strategy.

    Denoises x, takes lam times the energy gradient there, and applies
    the strategy's posterior part. Linear in lam. A non-finite result
    aborts with the offending step in the message.
    """
    x0_hat = tweedie_posterior_mean(model, schedule, x, t)
    g = lam * energy.grad(x0_hat, c)
    out = apply_posterior_part(strategy, model, schedule, x, t, g)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(
            f"non-finite conditional gradient at t={t} under {strategy.name}"
        )
    return out


def guidance_gradient_norm(gradient: np.ndarray) -> float | np.ndarray:
    """Euclidean norm of a guidance gradient (per row for batches)."""
    gradient = np.asarray(gradient, dtype=np.float64)
    norm = np.linalg.norm(gradient, axis=-1)
    return float(norm) if norm.ndim == 0 else norm


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def condition_to_text(c: Condition) -> str:
    """Flat text record {kind, y, A row-major, features}."""
    lines = [f"kind = {c.kind}"]
    if c.y is not None:
        lines.append(f"y = {_floats(c.y)}")
    if c.A is not None:
        m, d = c.A.shape
        lines.append(f"A_shape = {m} {d}")
        lines.append(f"A = {_floats(c.A)}")
    if c.features is not None:
        k, n = c.features.shape
        lines.append(f"features_shape = {k} {n}")
        lines.append(f"features = {_floats(c.features)}")
    return "\n".join(lines) + "\n"


def condition_from_text(text: str) -> Condition:
    fields: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed condition record line: {raw!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    kind = fields.get("kind")
    if kind == "target":
        return Condition.target([float(v) for v in fields["y"].split()])
    if kind == "measurement":
        m, d = (int(v) for v in fields["A_shape"].split())
        A = np.array([float(v) for v in fields["A"].split()]).reshape(m, d)
        return Condition.measurement(A, [float(v) for v in fields["y"].split()])
    if kind == "features":
        k, n = (int(v) for v in fields["features_shape"].split())
        F = np.array([float(v) for v in fields["features"].split()]).reshape(k, n)
        return Condition.reference_features(F)
    raise ValueError(f"unknown condition kind {kind!r}")
