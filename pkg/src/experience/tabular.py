"""
Tabular Q-learning and soft Q-learning.

Update functions never mutate their input table: they return the updated
copy together with the TD error, so callers keep both snapshots for the
value metrics.
"""
from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from .envs import Experience, ExperienceBatch
from .errors import ConfigError
from .numerics import argmax_tiebreak, check_temperature, logsumexp, softmax


@dataclass
class QTable:
    """dense state x action table of estimated action values"""
    values: np.ndarray

    @classmethod
    def zeros(cls, state_count: int, action_count: int) -> 'QTable':
        """all-zero table"""
        return cls(np.zeros((state_count, action_count)))

    @property
    def state_count(self) -> int:
        """rows"""
        return self.values.shape[0]

    @property
    def action_count(self) -> int:
        """columns"""
        return self.values.shape[1]

    def copy(self) -> 'QTable':
        """independent snapshot"""
        return QTable(self.values.copy())


@dataclass(frozen=True)
class EpsilonSchedule:
    """
    Exponential decay from start to end over horizon steps, constant after.

    The per-step factor is (end / start) ** (1 / horizon). start == end gives
    a constant schedule, zero included.
    """
    start: float = 1.0
    end: float = 0.001
    horizon: int = 10000

    def __post_init__(self):
        if not 0.0 <= self.end <= self.start <= 1.0:
            raise ConfigError(f"epsilon needs 0 <= end <= start <= 1, got {self.start}->{self.end}")
        if self.end == 0.0 and self.start > 0.0:
            raise ConfigError("a decaying epsilon needs a positive end")
        if self.horizon < 1:
            raise ConfigError("epsilon horizon must be at least one step")

    @property
    def constant(self) -> bool:
        """no decay"""
        return self.start == self.end

    @property
    def factor(self) -> float:
        """multiplicative decay per step"""
        if self.constant:
            return 1.0
        return (self.end / self.start) ** (1.0 / self.horizon)

    def value(self, step: int) -> float:
        """epsilon after step updates"""
        if self.constant or step >= self.horizon:
            return self.end
        return self.start * self.factor ** step


@dataclass(frozen=True)
class QAgentConfig:
    """tabular Q-learning"""
    alpha: float = 1.0
    gamma: float = 0.99
    epsilon: EpsilonSchedule = EpsilonSchedule()

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass(frozen=True)
class SoftQAgentConfig:
    """tabular soft Q-learning; updates replace the entry, no step size"""
    beta: float = 100.0
    gamma: float = 0.99

    def __post_init__(self):
        if not math.isfinite(self.beta) or self.beta <= 0.0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")


def q_target(q: QTable, e: Experience | ExperienceBatch, gamma: float):
    """r + gamma * max_a' Q(s', a'); r alone for terminal transitions"""
    _, _, reward, next_state, terminal = e.fields()
    bootstrap = gamma * q.values[next_state].max(axis=-1)
    return reward + np.where(terminal, 0.0, bootstrap)


def td_error(q: QTable, e: Experience | ExperienceBatch, gamma: float):
    """Q-learning TD error; vectorised over a batch"""
    state, action = e.fields()[:2]
    return q_target(q, e, gamma) - q.values[state, action]


def q_update(q: QTable, e: Experience, cfg: QAgentConfig) -> tuple[QTable, float]:
    """Q(s,a) += alpha * TD, returning the new table and the TD"""
    td = float(td_error(q, e, cfg.gamma))
    updated = q.copy()
    updated.values[e.state, e.action] += cfg.alpha * td
    return updated, td


def soft_value(q: QTable, state, beta: float):
    """beta * logsumexp(Q(state, .) / beta)"""
    return logsumexp(beta, q.values[state])


def soft_target(q: QTable, e: Experience | ExperienceBatch, beta: float, gamma: float):
    """soft Bellman target r + gamma * V_soft(s')"""
    check_temperature(beta)
    _, _, reward, next_state, terminal = e.fields()
    bootstrap = gamma * soft_value(q, next_state, beta)
    return reward + np.where(terminal, 0.0, bootstrap)


def soft_td_error(q: QTable, e: Experience | ExperienceBatch, beta: float, gamma: float):
    """soft TD error; vectorised over a batch"""
    state, action = e.fields()[:2]
    return soft_target(q, e, beta, gamma) - q.values[state, action]


def soft_q_update(q: QTable, e: Experience, cfg: SoftQAgentConfig) -> tuple[QTable, float]:
    """Q(s,a) is replaced by the soft Bellman target"""
    target = float(soft_target(q, e, cfg.beta, cfg.gamma))
    td = target - float(q.values[e.state, e.action])
    updated = q.copy()
    updated.values[e.state, e.action] = target
    return updated, td


class BehaviorMode(str, Enum):
    """how the behavior policy turns action values into actions"""
    EPSILON_GREEDY = 'epsilon_greedy'
    SOFTMAX = 'softmax'


@dataclass(frozen=True)
class BehaviorPolicy:
    """behavior policy; epsilon is read from the schedule at the current step"""
    mode: BehaviorMode
    epsilon: EpsilonSchedule | None = None
    beta: float | None = None


def select_action(row: np.ndarray, policy: BehaviorPolicy, step: int,
                  rng: np.random.Generator) -> int:
    """Draw one action from a row of action values"""
    if policy.mode == BehaviorMode.SOFTMAX:
        probabilities = softmax(policy.beta, row)
        return int(rng.choice(len(row), p=probabilities))
    if rng.random() < policy.epsilon.value(step):
        return int(rng.integers(len(row)))
    return int(argmax_tiebreak(row))


def behavior_action(q: QTable, state: int, policy: BehaviorPolicy, step: int,
                    rng: np.random.Generator) -> int:
    """behavior action for a tabular state"""
    return select_action(q.values[state], policy, step, rng)
