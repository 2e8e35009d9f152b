"""
Feedforward Q-network with hand-written forward and backward passes.

Layers are stored as (out, in) weight matrices. Hidden layers use ReLU, the
output layer is linear. Inputs may be one feature vector or a (batch, in)
matrix.
"""
from dataclasses import dataclass
from enum import Enum
import json
import logging
from pathlib import Path

import numpy as np

from .envs import Experience, ExperienceBatch
from .errors import ConfigError, DivergenceError, DomainError
from .metrics import MetricFlavor, MetricRecord, metric_records
from .numerics import logsumexp

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = 'ver-lab-mlp'

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


class Optimizer(str, Enum):
    """rule that turns the semi-gradient into a parameter step"""
    SGD = 'sgd'
    ADAM = 'adam'


@dataclass
class MlpParams:
    """weights (out, in) and biases (out,) per layer, input to output"""
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        """(input, hidden..., output)"""
        return (self.weights[0].shape[1], *(w.shape[0] for w in self.weights))

    def copy(self) -> 'MlpParams':
        """independent snapshot"""
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        """W1, b1, W2, b2, ... in layer order"""
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def is_finite(self) -> bool:
        """no NaN or infinity anywhere"""
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass
class ForwardCache:
    """layer inputs and pre-activations kept for the backward pass"""
    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]


@dataclass(frozen=True)
class FaUpdateConfig:
    """network agent hyperparameters"""
    learning_rate: float = 0.005
    gamma: float = 0.99
    batch: int = 16
    buffer_capacity: int = 1000
    total_steps: int = 50000
    beta: float = 0.5
    # 0 means the target is computed from the online parameters
    target_sync_period: int = 100
    hidden: tuple[int, ...] = (256, 256)
    optimizer: Optimizer = Optimizer.SGD
    # 0 feeds the raw TD error to the gradient
    td_clip: float = 0.0

    def __post_init__(self):
        try:
            object.__setattr__(self, 'optimizer', Optimizer(self.optimizer))
        except ValueError as err:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}") from err
        if self.td_clip < 0:
            raise ConfigError("td_clip must be nonnegative")
        if self.learning_rate <= 0 or self.beta <= 0:
            raise ConfigError("learning_rate and beta must be positive")
        if self.batch < 1 or self.buffer_capacity < 1 or self.total_steps < 1:
            raise ConfigError("batch, buffer_capacity and total_steps must be positive")
        if self.target_sync_period < 0:
            raise ConfigError("target_sync_period must be nonnegative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass
class FaSnapshot:
    """parameters an agent acts and bootstraps with at one instant"""
    params: MlpParams
    target_params: MlpParams
    flavor: MetricFlavor
    cfg: FaUpdateConfig


def init_params(layer_sizes, rng: np.random.Generator) -> MlpParams:
    """uniform in +-1/sqrt(fan_in) for weights and biases"""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases)


def forward_cached(params: MlpParams, features) -> tuple[np.ndarray, ForwardCache]:
    """action values and the cache needed by backward"""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != params.layer_sizes[0]:
        raise DomainError(f"expected {params.layer_sizes[0]} features, got {x.shape[-1]}")
    cache = ForwardCache([], [])
    last = len(params.weights) - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(x)
        z = x @ w.T + b
        cache.pre_activations.append(z)
        x = np.maximum(z, 0.0) if layer < last else z
    return x, cache


def forward(params: MlpParams, features) -> np.ndarray:
    """Q(s, .) for one state or a batch"""
    return forward_cached(params, features)[0]


def backward(params: MlpParams, cache: ForwardCache, d_out: np.ndarray) -> MlpParams:
    """
    Gradient of sum(d_out * Q) with respect to every parameter.

    Batch rows are summed, so scale d_out to get a mean.
    """
    d_out = np.atleast_2d(d_out)
    weights, biases = [None] * len(params.weights), [None] * len(params.biases)
    grad = d_out
    for layer in reversed(range(len(params.weights))):
        if layer < len(params.weights) - 1:
            grad = grad * (np.atleast_2d(cache.pre_activations[layer]) > 0.0)
        layer_input = np.atleast_2d(cache.inputs[layer])
        weights[layer] = grad.T @ layer_input
        biases[layer] = grad.sum(axis=0)
        grad = grad @ params.weights[layer]
    return MlpParams(weights, biases)


def grad_q(params: MlpParams, features, action: int) -> MlpParams:
    """gradient of the single output Q(s, action)"""
    q, cache = forward_cached(params, features)
    if not 0 <= action < q.shape[-1]:
        raise DomainError(f"action {action} outside [0, {q.shape[-1]})")
    d_out = np.zeros((1, q.shape[-1]))
    d_out[0, action] = 1.0
    return backward(params, cache, d_out)


def td_target(params_target: MlpParams, e: Experience | ExperienceBatch, gamma: float,
              flavor: MetricFlavor, beta: float | None = None):
    """r + gamma * next-state value (max or soft value); r for terminal"""
    _, _, reward, next_state, terminal = e.fields()
    next_q = forward(params_target, next_state)
    if MetricFlavor(flavor).is_soft:
        next_value = logsumexp(beta, next_q)
    else:
        next_value = next_q.max(axis=-1)
    return reward + np.where(terminal, 0.0, gamma * next_value)


def semi_gradient(params: MlpParams, batch: ExperienceBatch, is_weights, cfg: FaUpdateConfig,
                  flavor: MetricFlavor,
                  target_params: MlpParams | None = None) -> tuple[MlpParams, np.ndarray]:
    """
    Ascent direction mean(w * TD * grad Q(s, a)) and the raw per-sample TD
    errors. With cfg.td_clip set, the TD inside the direction is clipped to
    [-td_clip, td_clip].
    """
    if len(batch) == 0:
        raise DomainError("minibatch is empty")
    states, actions = batch.fields()[:2]
    q, cache = forward_cached(params, states)
    rows = np.arange(len(batch))
    targets = td_target(target_params or params, batch, cfg.gamma, flavor, cfg.beta)
    td = targets - q[rows, actions]
    driven = np.clip(td, -cfg.td_clip, cfg.td_clip) if cfg.td_clip else td
    d_out = np.zeros_like(q)
    d_out[rows, actions] = np.asarray(is_weights) * driven / len(batch)
    return backward(params, cache, d_out), td


def _check_step(grads: MlpParams, updated: MlpParams, td: np.ndarray) -> None:
    if not grads.is_finite() or not updated.is_finite():
        logger.error("non-finite gradient; max |TD| in batch %r", float(np.abs(td).max()))
        raise DivergenceError("non-finite gradient or parameters after update")


def sgd_minibatch_update(params: MlpParams, batch: ExperienceBatch, is_weights,
                         cfg: FaUpdateConfig, flavor: MetricFlavor,
                         target_params: MlpParams | None = None) -> tuple[MlpParams, np.ndarray]:
    """
    One semi-gradient step: theta += lr * mean(w * TD * grad Q(s, a)).

    Returns the new parameters and the per-sample TD errors computed before
    the step.
    """
    grads, td = semi_gradient(params, batch, is_weights, cfg, flavor, target_params)
    updated = MlpParams(
        [w + cfg.learning_rate * g for w, g in zip(params.weights, grads.weights)],
        [b + cfg.learning_rate * g for b, g in zip(params.biases, grads.biases)],
    )
    _check_step(grads, updated, td)
    return updated, td


@dataclass
class AdamState:
    """running first and second moments of the ascent direction"""
    first: MlpParams
    second: MlpParams
    steps: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> 'AdamState':
        """fresh moments shaped like params"""
        def zeros():
            return MlpParams([np.zeros_like(w) for w in params.weights],
                             [np.zeros_like(b) for b in params.biases])
        return cls(zeros(), zeros())


def adam_minibatch_update(params: MlpParams, batch: ExperienceBatch, is_weights,
                          cfg: FaUpdateConfig, flavor: MetricFlavor, state: AdamState,
                          target_params: MlpParams | None = None) -> tuple[MlpParams, np.ndarray]:
    """
    Same direction as sgd_minibatch_update, scaled per parameter by
    bias-corrected moment estimates. Advances state in place.
    """
    grads, td = semi_gradient(params, batch, is_weights, cfg, flavor, target_params)
    state.steps += 1
    first_correction = 1.0 - ADAM_BETA1 ** state.steps
    second_correction = 1.0 - ADAM_BETA2 ** state.steps
    updated = []
    for theta, g, m, v in zip(params.arrays(), grads.arrays(), state.first.arrays(),
                              state.second.arrays()):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        step = (m / first_correction) / (np.sqrt(v / second_correction) + ADAM_EPSILON)
        updated.append(theta + cfg.learning_rate * step)
    updated = MlpParams(updated[0::2], updated[1::2])
    _check_step(grads, updated, td)
    return updated, td


def metrics_fa(params_before: MlpParams, e: Experience | ExperienceBatch, flavor: MetricFlavor,
               cfg: FaUpdateConfig, target_params: MlpParams | None = None) -> list[MetricRecord]:
    """
    Value metrics with the updated network replaced by its target value: the
    new row equals Q(s, .; theta) except the experienced action, which takes
    the TD target.
    """
    states, actions = e.fields()[:2]
    old_rows = np.atleast_2d(forward(params_before, states))
    targets = np.atleast_1d(td_target(target_params or params_before, e, cfg.gamma, flavor, cfg.beta))
    actions = np.atleast_1d(actions)
    rows = np.arange(len(actions))
    new_rows = old_rows.copy()
    new_rows[rows, actions] = targets
    td = targets - old_rows[rows, actions]
    return metric_records(old_rows, new_rows, actions, td, flavor, alpha=1.0, beta=cfg.beta)


def save_checkpoint(params: MlpParams, path: Path) -> None:
    """
    Write parameters as one JSON header line followed by little-endian float64.

    The body holds W1, b1, W2, b2, ... in layer order, each row-major.
    """
    header = {
        'format': CHECKPOINT_MAGIC,
        'dtype': '<f8',
        'order': 'weights then bias per layer, row-major',
        'shapes': [list(a.shape) for a in params.arrays()],
    }
    body = np.concatenate([a.ravel() for a in params.arrays()]).astype('<f8')
    with open(path, 'wb') as f:
        f.write(json.dumps(header).encode('utf-8') + b'\n')
        f.write(body.tobytes())


def load_checkpoint(path: Path) -> MlpParams:
    """read a checkpoint written by save_checkpoint"""
    with open(path, 'rb') as f:
        header = json.loads(f.readline().decode('utf-8'))
        body = np.frombuffer(f.read(), dtype='<f8')
    if header.get('format') != CHECKPOINT_MAGIC:
        raise DomainError(f"{path} is not an MLP checkpoint")
    arrays, offset = [], 0
    for shape in header['shapes']:
        size = int(np.prod(shape))
        arrays.append(body[offset:offset + size].reshape(shape).astype(np.float64))
        offset += size
    return MlpParams(arrays[0::2], arrays[1::2])
