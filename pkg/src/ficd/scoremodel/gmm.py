"""Gaussian mixtures with closed-form scores under the forward noising process.

The variance-preserving marginal of a mixture is again a mixture with
means sqrt(alpha_bar_t) mu_i and covariances
alpha_bar_t Sigma_i + (1 - alpha_bar_t) I, so the score and its
derivative are available exactly at every noise level. These are the
reference models every approximation in the package is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from ficd.schedule import NoiseSchedule, alpha_bar
from ficd.scoremodel.base import ScoreModel

__all__ = [
    "GaussianMixture",
    "GaussianMixtureScore",
    "marginal_mixture",
    "mixture_logpdf",
    "mixture_score",
    "mixture_score_jacobian",
    "mixture_score_vjp",
    "gmm_marginal_score",
    "gmm_score_jacobian",
    "gmm_score_vjp",
    "gmm_to_text",
    "gmm_from_text",
]


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of K Gaussians in d dimensions.

    weights : (K,), non-negative, summing to 1 within 1e-12
    means : (K, d)
    covariances : (K, d, d), each symmetric positive-definite
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self) -> None:
        w = np.atleast_1d(np.array(self.weights, dtype=np.float64))
        m = np.atleast_2d(np.array(self.means, dtype=np.float64))
        c = np.array(self.covariances, dtype=np.float64)
        if c.ndim == 2:
            c = c[None, :, :]
        K, d = m.shape
        if w.shape != (K,) or c.shape != (K, d, d):
            raise ValueError(
                f"inconsistent mixture shapes: weights {w.shape}, means {m.shape}, covariances {c.shape}"
            )
        if np.any(w < 0.0):
            raise ValueError("mixture weights must be non-negative")
        if abs(float(np.sum(w)) - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1 within 1e-12")
        for i in range(K):
            if not np.allclose(c[i], c[i].T, rtol=0.0, atol=1e-12):
                raise ValueError(f"covariance {i} is not symmetric")
            try:
                np.linalg.cholesky(c[i])
            except np.linalg.LinAlgError:
                raise ValueError(f"covariance {i} is not positive-definite") from None
        for name, arr in (("weights", w), ("means", m), ("covariances", c)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return int(self.weights.size)

    @property
    def d(self) -> int:
        return int(self.means.shape[1])

    @classmethod
    def isotropic(cls, weights, means, variances) -> "GaussianMixture":
        """Shortcut for sigma_i**2 * I covariances."""
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        variances = np.atleast_1d(np.asarray(variances, dtype=np.float64))
        K, d = means.shape
        covs = np.stack([v * np.eye(d) for v in variances])
        return cls(weights=np.asarray(weights, dtype=np.float64), means=means, covariances=covs)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n points; component choices and noise both come from rng."""
        idx = rng.choice(self.K, size=n, p=self.weights)
        z = rng.standard_normal((n, self.d))
        out = np.empty((n, self.d))
        for i in range(self.K):
            sel = idx == i
            if not np.any(sel):
                continue
            L = np.linalg.cholesky(self.covariances[i])
            out[sel] = self.means[i] + z[sel] @ L.T
        return out


def marginal_mixture(gmm: GaussianMixture, abar: float) -> GaussianMixture:
    """Mixture describing x_t when x_0 follows gmm and alpha_bar_t = abar."""
    if not 0.0 <= abar <= 1.0:
        raise ValueError("abar must lie in [0, 1]")
    d = gmm.d
    covs = abar * gmm.covariances + (1.0 - abar) * np.eye(d)
    return GaussianMixture(
        weights=gmm.weights, means=np.sqrt(abar) * gmm.means, covariances=covs
    )


def _responsibilities(mix: GaussianMixture, x: np.ndarray):
    """Per-component responsibilities r (K, N), score terms g (K, N, d),
    inverse covariances (K, d, d), and the mixture log-density (N,)."""
    K, d = mix.K, mix.d
    N = x.shape[0]
    g = np.empty((K, N, d))
    log_joint = np.empty((K, N))
    inv_covs = np.empty((K, d, d))
    log_w = np.log(np.maximum(mix.weights, 1e-300))
    for i in range(K):
        try:
            factor = cho_factor(mix.covariances[i], lower=True)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError(f"component {i} covariance is singular") from None
        diff = x - mix.means[i]
        # check_finite off so nan rows (flagged chains) pass through as nan.
        solved = cho_solve(factor, diff.T, check_finite=False).T
        g[i] = -solved
        log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
        quad = np.einsum("nj,nj->n", diff, solved)
        log_joint[i] = log_w[i] - 0.5 * (quad + log_det + d * np.log(2.0 * np.pi))
        inv_covs[i] = cho_solve(factor, np.eye(d))
    log_norm = logsumexp(log_joint, axis=0)
    r = np.exp(log_joint - log_norm)
    return r, g, inv_covs, log_norm


def _as_batch(x: np.ndarray, d: int):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape != (d,):
            raise ValueError(f"point has dimension {x.shape}, expected ({d},)")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"batch has shape {x.shape}, expected (N, {d})")
    return x, False


def mixture_logpdf(mix: GaussianMixture, x: np.ndarray) -> np.ndarray:
    x, single = _as_batch(x, mix.d)
    _, _, _, log_norm = _responsibilities(mix, x)
    return float(log_norm[0]) if single else log_norm


def mixture_score(mix: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """Gradient of log density: sum_i r_i(x) g_i(x) with g_i = -Sigma_i^{-1}(x - mu_i)."""
    x, single = _as_batch(x, mix.d)
    r, g, _, _ = _responsibilities(mix, x)
    s = np.einsum("kn,knd->nd", r, g)
    return s[0] if single else s


def mixture_score_jacobian(mix: GaussianMixture, x: np.ndarray) -> np.ndarray:
    """Second derivative of log density.

    sum_i r_i (-Sigma_i^{-1}) plus the responsibility-weighted covariance
    of the g_i vectors, which is sum_i r_i g_i g_i^T - s s^T. Symmetric by
    construction.
    """
    x, single = _as_batch(x, mix.d)
    r, g, inv_covs, _ = _responsibilities(mix, x)
    s = np.einsum("kn,knd->nd", r, g)
    J = -np.einsum("kn,kde->nde", r, inv_covs)
    J += np.einsum("kn,knd,kne->nde", r, g, g)
    J -= np.einsum("nd,ne->nde", s, s)
    return J[0] if single else J


def mixture_score_vjp(mix: GaussianMixture, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Jacobian-vector product J v without forming J (J is symmetric here)."""
    x, single = _as_batch(x, mix.d)
    v, _ = _as_batch(v, mix.d)
    if v.shape[0] == 1 and x.shape[0] > 1:
        v = np.broadcast_to(v, x.shape)
    r, g, inv_covs, _ = _responsibilities(mix, x)
    s = np.einsum("kn,knd->nd", r, g)
    out = -np.einsum("kn,kde,ne->nd", r, inv_covs, v)
    out += np.einsum("kn,knd,kne,ne->nd", r, g, g, v)
    out -= s * np.einsum("nd,nd->n", s, v)[:, None]
    return out[0] if single else out


def gmm_marginal_score(
    gmm: GaussianMixture, schedule: NoiseSchedule, x: np.ndarray, t: int
) -> np.ndarray:
    """Exact score of the noised marginal at step t."""
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in 1..{schedule.T}, got {t}")
    return mixture_score(marginal_mixture(gmm, alpha_bar(schedule, t)), x)


def gmm_score_jacobian(
    gmm: GaussianMixture, schedule: NoiseSchedule, x: np.ndarray, t: int
) -> np.ndarray:
    """Exact derivative of the noised-marginal score at step t."""
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in 1..{schedule.T}, got {t}")
    return mixture_score_jacobian(marginal_mixture(gmm, alpha_bar(schedule, t)), x)


def gmm_score_vjp(
    gmm: GaussianMixture, schedule: NoiseSchedule, x: np.ndarray, t: int, v: np.ndarray
) -> np.ndarray:
    if not 1 <= t <= schedule.T:
        raise IndexError(f"t must lie in 1..{schedule.T}, got {t}")
    return mixture_score_vjp(marginal_mixture(gmm, alpha_bar(schedule, t)), x, v)


class GaussianMixtureScore(ScoreModel):
    """ScoreModel adapter over the closed-form mixture score."""

    has_analytic_jacobian = True

    def __init__(self, gmm: GaussianMixture, schedule: NoiseSchedule):
        self.gmm = gmm
        self.schedule = schedule

    @property
    def dim(self) -> int:
        return self.gmm.d

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        return gmm_marginal_score(self.gmm, self.schedule, x, t)

    def jacobian(self, x: np.ndarray, t: int) -> np.ndarray:
        return gmm_score_jacobian(self.gmm, self.schedule, x, t)

    def score_vjp(self, x: np.ndarray, t: int, v: np.ndarray) -> np.ndarray:
        return gmm_score_vjp(self.gmm, self.schedule, x, t, v)


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def gmm_to_text(gmm: GaussianMixture) -> str:
    """Flat text record {weights, means, covariances}; floats via repr."""
    lines = [f"d = {gmm.d}", f"K = {gmm.K}", f"weights = {_floats(gmm.weights)}"]
    for i in range(gmm.K):
        lines.append(f"mean_{i} = {_floats(gmm.means[i])}")
    for i in range(gmm.K):
        lines.append(f"cov_{i} = {_floats(gmm.covariances[i])}")
    return "\n".join(lines) + "\n"


def gmm_from_text(text: str) -> GaussianMixture:
    fields: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"malformed mixture record line: {raw!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        d = int(fields["d"])
        K = int(fields["K"])
        weights = np.array([float(v) for v in fields["weights"].split()])
        means = np.array(
            [[float(v) for v in fields[f"mean_{i}"].split()] for i in range(K)]
        )
        covs = np.array(
            [[float(v) for v in fields[f"cov_{i}"].split()] for i in range(K)]
        ).reshape(K, d, d)
    except KeyError as missing:
        raise ValueError(f"mixture record is missing field {missing}") from None
    if means.shape != (K, d):
        raise ValueError("mixture record means do not match the declared shape")
    return GaussianMixture(weights=weights, means=means, covariances=covs)
