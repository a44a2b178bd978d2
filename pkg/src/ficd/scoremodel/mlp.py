"""Small fully connected noise-prediction network trained by score matching.

The network maps (x, time embedding) to a noise estimate; the score is
the definitional conversion -eps_pred / sqrt(1 - alpha_bar_t). Forward,
weight gradients, and the input pullback are written out against plain
numpy so the exact input Jacobian is available without an autodiff
framework.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ficd.schedule import NoiseSchedule, schedule_from_text, schedule_to_text
from ficd.scoremodel.base import ScoreModel

__all__ = [
    "NetSpec",
    "LearnedScoreModel",
    "TrainingDivergedError",
    "sinusoidal_time_embedding",
    "train_dsm",
    "save_model",
    "load_model",
]


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class NetSpec:
    """Architecture of the noise-prediction net (3 hidden layers of 128 by default)."""

    hidden_width: int = 128
    hidden_layers: int = 3
    time_embed_dim: int = 32

    def __post_init__(self) -> None:
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ValueError("hidden_width and hidden_layers must be positive")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be an even integer >= 2")


def sinusoidal_time_embedding(t01: np.ndarray, dim: int) -> np.ndarray:
    """Sin/cos features of a normalized time in [0, 1], shape (..., dim)."""
    half = dim // 2
    freqs = np.exp(np.linspace(math.log(1.0), math.log(1000.0), half))
    args = np.asarray(t01, dtype=np.float64)[..., None] * freqs
    return np.concatenate([np.sin(args), np.cos(args)], axis=-1)


def _silu(a: np.ndarray) -> np.ndarray:
    return a * expit(a)


def _silu_grad(a: np.ndarray) -> np.ndarray:
    s = expit(a)
    return s * (1.0 + a * (1.0 - s))


class LearnedScoreModel(ScoreModel):
    """Noise-prediction MLP with its schedule, exposed through the score interface.

    Immutable after construction (weight arrays are read-only); safe for
    concurrent evaluation. ``trained`` records whether any optimizer
    steps ran, and ``final_loss`` is the last minibatch objective.
    """

    has_analytic_jacobian = True

    def __init__(
        self,
        spec: NetSpec,
        schedule: NoiseSchedule,
        d: int,
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        trained: bool = False,
        final_loss: float | None = None,
    ):
        if len(weights) != spec.hidden_layers + 1 or len(biases) != len(weights):
            raise ValueError("layer count does not match the architecture spec")
        self.spec = spec
        self.schedule = schedule
        self._d = int(d)
        self.weights = [np.array(W, dtype=np.float64) for W in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for arr in self.weights + self.biases:
            arr.flags.writeable = False
        self.trained = bool(trained)
        self.final_loss = None if final_loss is None else float(final_loss)

    @property
    def dim(self) -> int:
        return self._d

    @classmethod
    def init(
        cls, spec: NetSpec, schedule: NoiseSchedule, d: int, rng: np.random.Generator
    ) -> "LearnedScoreModel":
        """He-style random initialization; the output layer starts small."""
        sizes = [d + spec.time_embed_dim] + [spec.hidden_width] * spec.hidden_layers + [d]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = math.sqrt(2.0 / fan_in)
            weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            biases.append(np.zeros(fan_out))
        weights[-1] = weights[-1] * 0.1
        return cls(spec, schedule, d, weights, biases, trained=False, final_loss=None)

    # forward/backward -------------------------------------------------

    def _embed(self, t, n: int) -> np.ndarray:
        t01 = np.asarray(t, dtype=np.float64) / self.schedule.T
        emb = sinusoidal_time_embedding(t01, self.spec.time_embed_dim)
        if emb.ndim == 1:
            emb = np.broadcast_to(emb, (n, emb.size))
        return emb

    def _forward(self, x: np.ndarray, t):
        """Returns (eps_pred, cache) for x of shape (N, d); t scalar or (N,)."""
        h = np.concatenate([x, self._embed(t, x.shape[0])], axis=1)
        pre_acts, hiddens = [], [h]
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = h @ W + b
            pre_acts.append(a)
            h = _silu(a)
            hiddens.append(h)
        eps = h @ self.weights[-1] + self.biases[-1]
        return eps, (pre_acts, hiddens)

    def _backward_input(self, cache, grad_out: np.ndarray) -> np.ndarray:
        """Pullback of grad_out through the net onto the x part of the input."""
        pre_acts, _ = cache
        g = grad_out @ self.weights[-1].T
        for W, a in zip(reversed(self.weights[:-1]), reversed(pre_acts)):
            g = (g * _silu_grad(a)) @ W.T
        return g[:, : self._d]

    def _backward_weights(self, cache, grad_out: np.ndarray):
        pre_acts, hiddens = cache
        grads_W = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        g = grad_out
        grads_W[-1] = hiddens[-1].T @ g
        grads_b[-1] = g.sum(axis=0)
        g = g @ self.weights[-1].T
        for l in range(len(self.weights) - 2, -1, -1):
            g = g * _silu_grad(pre_acts[l])
            grads_W[l] = hiddens[l].T @ g
            grads_b[l] = g.sum(axis=0)
            if l > 0:
                g = g @ self.weights[l].T
        return grads_W, grads_b

    # score interface --------------------------------------------------

    def eps_pred(self, x: np.ndarray, t) -> np.ndarray:
        x2d = np.atleast_2d(np.asarray(x, dtype=np.float64))
        eps, _ = self._forward(x2d, t)
        return eps[0] if np.asarray(x).ndim == 1 else eps

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        abar = float(self.schedule.alpha_bars[t - 1])
        return -self.eps_pred(x, t) / math.sqrt(1.0 - abar)

    def score_vjp(self, x: np.ndarray, t: int, v: np.ndarray) -> np.ndarray:
        single = np.asarray(x).ndim == 1
        x2d = np.atleast_2d(np.asarray(x, dtype=np.float64))
        v2d = np.atleast_2d(np.asarray(v, dtype=np.float64))
        _, cache = self._forward(x2d, t)
        pulled = self._backward_input(cache, v2d)
        abar = float(self.schedule.alpha_bars[t - 1])
        out = -pulled / math.sqrt(1.0 - abar)
        return out[0] if single else out

    def jacobian(self, x: np.ndarray, t: int) -> np.ndarray:
        """Exact input Jacobian of the score, one pullback per output row."""
        single = np.asarray(x).ndim == 1
        x2d = np.atleast_2d(np.asarray(x, dtype=np.float64))
        N, d = x2d.shape
        _, cache = self._forward(x2d, t)
        abar = float(self.schedule.alpha_bars[t - 1])
        J = np.empty((N, d, d))
        for i in range(d):
            unit = np.zeros((N, d))
            unit[:, i] = 1.0
            J[:, i, :] = -self._backward_input(cache, unit) / math.sqrt(1.0 - abar)
        return J[0] if single else J


def train_dsm(
    dataset: np.ndarray,
    net_spec: NetSpec,
    schedule: NoiseSchedule,
    steps: int,
    learning_rate: float = 1e-3,
    seed: int = 0,
    batch_size: int = 128,
    momentum: float = 0.9,
    loss_history: list[float] | None = None,
) -> LearnedScoreModel:
    """Fit the noise-prediction objective by minibatch SGD with momentum.

    Each step draws data points, uniform step indices t in 1..T, and
    Gaussian noise, forms x_t = sqrt(alpha_bar_t) x_0
    + sqrt(1 - alpha_bar_t) eps, and descends the mean squared error
    between the predicted and the drawn noise. Deterministic given the
    seed; ``steps = 0`` returns the untrained initialization. When a
    list is passed as ``loss_history`` the per-step minibatch losses are
    appended to it.
    """
    dataset = np.atleast_2d(np.asarray(dataset, dtype=np.float64))
    if dataset.size == 0:
        raise ValueError("dataset must be non-empty")
    if not (np.isfinite(learning_rate) and np.isfinite(momentum) and steps >= 0):
        raise ValueError("hyperparameters must be finite and steps non-negative")
    n, d = dataset.shape
    rng = np.random.Generator(np.random.Philox(seed))
    model = LearnedScoreModel.init(net_spec, schedule, d, rng)
    if steps == 0:
        return model

    weights = [W.copy() for W in model.weights]
    biases = [b.copy() for b in model.biases]
    vel_W = [np.zeros_like(W) for W in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    work = LearnedScoreModel(net_spec, schedule, d, weights, biases)
    loss = math.nan
    for step in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        t = rng.integers(1, schedule.T + 1, size=batch_size)
        eps = rng.standard_normal((batch_size, d))
        abar = schedule.alpha_bars[t - 1][:, None]
        x_t = np.sqrt(abar) * dataset[idx] + np.sqrt(1.0 - abar) * eps

        pred, cache = work._forward(x_t, t)
        residual = pred - eps
        with np.errstate(over="ignore"):
            loss = float(np.mean(np.sum(residual**2, axis=1)))
        if not math.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became non-finite at step {step} (lr={learning_rate}, batch={batch_size})"
            )
        if loss_history is not None:
            loss_history.append(loss)
        grads_W, grads_b = work._backward_weights(cache, 2.0 * residual / batch_size)
        for l in range(len(weights)):
            vel_W[l] = momentum * vel_W[l] - learning_rate * grads_W[l]
            vel_b[l] = momentum * vel_b[l] - learning_rate * grads_b[l]
            weights[l] = weights[l] + vel_W[l]
            biases[l] = biases[l] + vel_b[l]
        work = LearnedScoreModel(net_spec, schedule, d, weights, biases)
    return LearnedScoreModel(
        net_spec, schedule, d, weights, biases, trained=True, final_loss=loss
    )


def save_model(model: LearnedScoreModel, path) -> None:
    """Write a flat binary dump (shape-headed arrays plus the schedule record)."""
    arrays = {
        "d": np.array(model.dim),
        "hidden_width": np.array(model.spec.hidden_width),
        "hidden_layers": np.array(model.spec.hidden_layers),
        "time_embed_dim": np.array(model.spec.time_embed_dim),
        "trained": np.array(int(model.trained)),
        "final_loss": np.array(math.nan if model.final_loss is None else model.final_loss),
        "schedule_record": np.array(schedule_to_text(model.schedule)),
    }
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W_{l}"] = W
        arrays[f"b_{l}"] = b
    np.savez(path, **arrays)


def load_model(path) -> LearnedScoreModel:
    with np.load(path, allow_pickle=False) as data:
        spec = NetSpec(
            hidden_width=int(data["hidden_width"]),
            hidden_layers=int(data["hidden_layers"]),
            time_embed_dim=int(data["time_embed_dim"]),
        )
        schedule = schedule_from_text(str(data["schedule_record"]))
        n_layers = spec.hidden_layers + 1
        weights = [data[f"W_{l}"] for l in range(n_layers)]
        biases = [data[f"b_{l}"] for l in range(n_layers)]
        final_loss = float(data["final_loss"])
        return LearnedScoreModel(
            spec,
            schedule,
            int(data["d"]),
            weights,
            biases,
            trained=bool(int(data["trained"])),
            final_loss=None if math.isnan(final_loss) else final_loss,
        )
