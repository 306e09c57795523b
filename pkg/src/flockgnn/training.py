"""Imitation learning: regress controller outputs onto expert actions with ADAM."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .controllers import Arch, ControllerParams, backward, forward, init_params
from .flocking import ConfigurationError, Dataset, TrajectoryRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 20
    learning_rate: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    validation_interval: int = 1
    # trajectories pushed through forward/backward together; bounds memory only
    chunk_size: int = 10
    # per-hop gain of the optimizer coordinates; None means mean degree of the training graphs
    tap_scale: float | None = None

    def __post_init__(self):
        for name in ("epochs", "batch_size", "learning_rate", "validation_interval", "chunk_size"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1)")
        if self.adam_epsilon <= 0:
            raise ConfigurationError("adam_epsilon must be positive")
        if self.tap_scale is not None and self.tap_scale <= 0:
            raise ConfigurationError("tap_scale must be positive")


def imitation_loss(predicted: np.ndarray, expert: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``predicted``."""
    predicted = np.asarray(predicted, dtype=np.float64)
    expert = np.asarray(expert, dtype=np.float64)
    if predicted.shape != expert.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {expert.shape}")
    diff = predicted - expert
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


@dataclass
class OptimizerState:
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ControllerParams) -> "OptimizerState":
        tensors = params.tensors()
        return cls(
            {k: np.zeros_like(v) for k, v in tensors.items()},
            {k: np.zeros_like(v) for k, v in tensors.items()},
        )


def adam_step(
    params: ControllerParams, grads: ControllerParams, state: OptimizerState, config: TrainConfig
) -> tuple[ControllerParams, OptimizerState]:
    p, g = params.tensors(), grads.tensors()
    if p.keys() != g.keys() or p.keys() != state.first_moment.keys():
        raise ValueError("parameter, gradient and optimizer tensors disagree")
    b1, b2 = config.adam_beta1, config.adam_beta2
    step = state.step + 1
    m_new, v_new, p_new = {}, {}, {}
    for name, value in p.items():
        grad = g[name]
        if grad.shape != value.shape or state.first_moment[name].shape != value.shape:
            raise ValueError(f"shape mismatch for {name}")
        m = b1 * state.first_moment[name] + (1 - b1) * grad
        v = b2 * state.second_moment[name] + (1 - b2) * grad * grad
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        p_new[name] = value - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
        m_new[name], v_new[name] = m, v
    return params.with_tensors(p_new), OptimizerState(m_new, v_new, step)


def _tap_factors(params: ControllerParams, scale: float) -> dict[str, np.ndarray]:
    """Per-tensor multipliers ``scale**-k`` on tap k of every filter bank, 1 on the readout."""
    k = np.arange(params.n_taps, dtype=np.float64)
    per_tap = (scale ** -k)[:, None, None]
    return {
        name: (per_tap if name.endswith("_bank") else np.ones(1))
        for name in params.tensors()
    }


def to_coefficients(coords: ControllerParams, scale: float) -> ControllerParams:
    """Map optimizer coordinates to filter coefficients, ``A_k = theta_k / scale**k``.

    With a binary adjacency, tap k aggregates on the order of ``degree**k``
    values, so equal-sized ADAM steps on raw coefficients overdrive the far
    taps. Optimizing ``theta`` instead leaves the function class unchanged.
    """
    f = _tap_factors(coords, scale)
    return coords.with_tensors({k: v * f[k] for k, v in coords.tensors().items()})


def to_coordinates(params: ControllerParams, scale: float) -> ControllerParams:
    f = _tap_factors(params, scale)
    return params.with_tensors({k: v / f[k] for k, v in params.tensors().items()})


def mean_degree(records: list[TrajectoryRecord]) -> float:
    total = sum(float(r.graphs.sum()) for r in records)
    count = sum(r.graphs.shape[0] * r.graphs.shape[1] for r in records)
    return total / count


def _stack(records: list[TrajectoryRecord]):
    """Time-major batch: graphs (T, B, N, N), features (T, B, N, 6), actions (T, B, N, 2)."""
    S = np.stack([r.shift_operators() for r in records], axis=1)
    X = np.stack([r.features for r in records], axis=1)
    U = np.stack([r.actions for r in records], axis=1)
    return S, X, U


def batch_loss_and_grad(
    params: ControllerParams, records: list[TrajectoryRecord], chunk_size: int = 10, need_grad: bool = True
) -> tuple[float, ControllerParams | None]:
    """Mean over trajectories of the per-trajectory loss, with its gradient."""
    total = 0.0
    grad = {k: np.zeros_like(v) for k, v in params.tensors().items()} if need_grad else None
    n = len(records)
    for start in range(0, n, chunk_size):
        chunk = records[start:start + chunk_size]
        S, X, U = _stack(chunk)
        pred, tape = forward(params, S, X)
        loss, d_pred = imitation_loss(pred, U)
        # chunk loss is a mean over its trajectories; reweight to the batch mean
        weight = len(chunk) / n
        total += weight * loss
        if need_grad:
            g = backward(params, tape, weight * d_pred).tensors()
            for k in grad:
                grad[k] += g[k]
    return total, (params.with_tensors(grad) if need_grad else None)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    valid_loss: float | None
    wall_time: float

    def line(self, timing: bool = True) -> str:
        valid = "nan" if self.valid_loss is None else f"{self.valid_loss:.10e}"
        text = f"epoch {self.epoch:3d}  train_loss {self.train_loss:.10e}  valid_loss {valid}"
        if timing:
            text += f"  wall_time {self.wall_time:.3f}s"
        return text


@dataclass
class TrainResult:
    params: ControllerParams
    final_params: ControllerParams
    log: list[EpochLog] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_loss: float = float("inf")
    tap_scale: float = 1.0

    def text_log(self, timing: bool = True) -> str:
        return "".join(entry.line(timing) + "\n" for entry in self.log)


def train(
    arch: Arch | str,
    dataset: Dataset,
    config: TrainConfig,
    G: int,
    K: int,
    init_seed: int | None = None,
) -> TrainResult:
    """Teacher-forced imitation learning with validation-based model selection.

    ADAM runs on tap-rescaled coordinates (see :func:`to_coefficients`); the
    returned parameters are plain filter coefficients. The reported train
    loss of an epoch is the mean of its batch losses, each measured before
    that batch's update.
    """
    if not dataset.train:
        raise ConfigurationError("the dataset has no training trajectories")
    if not dataset.valid:
        raise ConfigurationError("the dataset has no validation trajectories")
    arch = Arch(arch)
    scale = config.tap_scale if config.tap_scale is not None else max(mean_degree(dataset.train), 1.0)
    coords = init_params(arch, G, K, config.seed if init_seed is None else init_seed)
    params = to_coefficients(coords, scale)
    opt = OptimizerState.zeros_like(coords)
    rng = np.random.default_rng(config.seed)

    result = TrainResult(params=params, final_params=params, tap_scale=scale)
    n = len(dataset.train)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        losses, sizes = [], []
        for start in range(0, n, config.batch_size):
            batch = [dataset.train[i] for i in order[start:start + config.batch_size]]
            loss, grad = batch_loss_and_grad(params, batch, config.chunk_size)
            # chain rule: d/dtheta_k = scale**-k d/dA_k, the same factor as the forward map
            coords, opt = adam_step(coords, to_coefficients(grad, scale), opt, config)
            params = to_coefficients(coords, scale)
            losses.append(loss)
            sizes.append(len(batch))
        train_loss = float(np.average(losses, weights=sizes))

        valid_loss = None
        if epoch % config.validation_interval == 0 or epoch == config.epochs:
            valid_loss, _ = batch_loss_and_grad(params, dataset.valid, config.chunk_size, need_grad=False)
            if valid_loss < result.best_valid_loss:
                result.best_valid_loss, result.best_epoch, result.params = valid_loss, epoch, params
        entry = EpochLog(epoch, train_loss, valid_loss, time.perf_counter() - t0)
        result.log.append(entry)
        log.info("%s %s", arch.value, entry.line())
    result.final_params = params
    return result


def finite_difference_gradient(fn, params: ControllerParams, step: float = 1e-6) -> dict[str, np.ndarray]:
    """Central differences of scalar ``fn(params)`` over every parameter entry."""
    tensors = params.tensors()
    out = {}
    for name, value in tensors.items():
        grad = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            plus, minus = value.copy(), value.copy()
            plus[idx] += step
            minus[idx] -= step
            f_plus = fn(params.with_tensors({name: plus}))
            f_minus = fn(params.with_tensors({name: minus}))
            grad[idx] = (f_plus - f_minus) / (2 * step)
        out[name] = grad
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``|a - b| / max(|a|, |b|)`` in the max norm; zero when both vanish."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
    return 0.0 if scale == 0 else float(np.max(np.abs(a - b)) / scale)


def random_instance(N: int, T: int, seed: int, n_features: int = 6, density: float = 0.4):
    """Random symmetric binary graph sequence, features and targets for gradient tests."""
    rng = np.random.default_rng(seed)
    S = (rng.uniform(size=(T, N, N)) < density).astype(np.float64)
    S = np.triu(S, 1)
    S = S + np.swapaxes(S, -1, -2)
    X = rng.normal(size=(T, N, n_features))
    target = rng.normal(size=(T, N, 2))
    return S, X, target


def gradient_check(arch: Arch | str, G: int, K: int, N: int, T: int, seed: int, step: float = 1e-6,
                   grad_fn=backward) -> float:
    """Largest per-tensor relative error between reverse mode and central differences."""
    params = init_params(arch, G, K, seed)
    # nonzero readout bias so every tensor has a generic gradient
    params = params.with_tensors({"readout_bias": np.random.default_rng(seed + 1).normal(size=2)})
    S, X, target = random_instance(N, T, seed)

    def loss(p):
        return imitation_loss(forward(p, S, X)[0], target)[0]

    pred, tape = forward(params, S, X)
    _, d_pred = imitation_loss(pred, target)
    analytic = grad_fn(params, tape, d_pred).tensors()
    numeric = finite_difference_gradient(loss, params, step)
    return max(relative_error(analytic[k], numeric[k]) for k in analytic)
