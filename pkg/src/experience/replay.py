"""
Replay buffers and sampling strategies.

Uniform sampling, the greedy oracle over a tabular buffer, and proportional
prioritised sampling over a sum tree with importance-sampling weights. The
prioritised buffer serves both PER (|TD| priorities) and VER (rho_max * |TD|
priorities); only the raw priority differs.
"""
from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from .envs import Experience, ExperienceBatch
from .errors import ConfigError, DomainError, EmptyBufferError
from .funcapprox import FaSnapshot, forward, td_target
from .metrics import MetricFlavor, evb_q_rows
from .numerics import argmax_tiebreak, softmax
from .tabular import QAgentConfig, QTable, td_error


class ReplayStrategy(str, Enum):
    """how replayed experiences are chosen"""
    UNIFORM = 'uniform'
    ORACLE_TD = 'oracle_td'
    ORACLE_EVB = 'oracle_evb'
    PER = 'per'
    VER = 'ver'

    @property
    def prioritized(self) -> bool:
        """sampled through the sum tree"""
        return self in (ReplayStrategy.PER, ReplayStrategy.VER)


class OracleCriterion(str, Enum):
    """quantity the greedy oracle maximises"""
    ABS_TD = 'abs_td'
    ABS_EVB = 'abs_evb'


class ReplayBuffer:
    """fixed-capacity ring of experiences, oldest evicted first"""
    capacity: int
    entries: list[Experience]
    write_cursor: int

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ConfigError(f"buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.entries = []
        self.write_cursor = 0
        self._stacked = None

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> Experience:
        return self.entries[index]

    def push(self, e: Experience) -> int:
        """Store e and return its slot"""
        slot = self.write_cursor
        if len(self.entries) < self.capacity:
            self.entries.append(e)
        else:
            self.entries[slot] = e
        self.write_cursor = (slot + 1) % self.capacity
        self._stacked = None
        return slot

    def batch(self, indices) -> ExperienceBatch:
        """experiences at the given slots, stacked"""
        return ExperienceBatch.stack(self.entries[i] for i in indices)

    def stacked(self) -> ExperienceBatch:
        """the whole buffer, stacked; cached until the next push"""
        if self._stacked is None:
            self._stacked = ExperienceBatch.stack(self.entries)
        return self._stacked


def buffer_push(buf: ReplayBuffer, e: Experience) -> None:
    """append e, evicting the oldest entry at capacity"""
    buf.push(e)


def sample_uniform(buf: ReplayBuffer, batch: int, rng: np.random.Generator) -> np.ndarray:
    """i.i.d. uniform slots, with replacement"""
    if len(buf) == 0:
        raise EmptyBufferError("cannot sample from an empty buffer")
    return rng.integers(0, len(buf), size=batch)


def oracle_criteria(buf: ReplayBuffer, criterion: OracleCriterion, q: QTable,
                    cfg: QAgentConfig) -> np.ndarray:
    """
    Criterion of every buffered experience against the current table.

    abs_evb is the greedy EVB the experience would produce if it were the
    next update.
    """
    batch = buf.stacked()
    td = td_error(q, batch, cfg.gamma)
    if OracleCriterion(criterion) == OracleCriterion.ABS_TD:
        return np.abs(td)
    old_rows = q.values[batch.states]
    new_rows = old_rows.copy()
    new_rows[np.arange(len(batch)), batch.actions] += cfg.alpha * td
    return np.abs(evb_q_rows(old_rows, new_rows))


def sample_greedy_oracle(buf: ReplayBuffer, criterion: OracleCriterion, q: QTable,
                         cfg: QAgentConfig) -> int:
    """
    Slot with the highest criterion, lowest slot on ties.

    Recomputes every criterion on each draw, O(buffer) per call.
    """
    if len(buf) == 0:
        raise EmptyBufferError("cannot sample from an empty buffer")
    return int(argmax_tiebreak(oracle_criteria(buf, criterion, q, cfg)))


class SumTree:
    """
    Binary tree over leaf priorities; internal nodes hold the sum of their
    children and the root holds the total.

    Leaves are padded to a power of two so leaf order matches the order of
    the cumulative-priority intervals.
    """
    leaf_count: int
    nodes: np.ndarray
    # constants
    capacity_: int

    def __init__(self, leaf_count: int) -> None:
        if leaf_count < 1:
            raise ConfigError("sum tree needs at least one leaf")
        self.leaf_count = leaf_count
        self.capacity_ = 1 << (leaf_count - 1).bit_length()
        self.nodes = np.zeros(2 * self.capacity_ - 1)

    def __len__(self) -> int:
        return self.leaf_count

    @property
    def total(self) -> float:
        """sum of all priorities"""
        return float(self.nodes[0])

    def leaf(self, index: int) -> float:
        """priority stored at a leaf"""
        return float(self.nodes[index + self.capacity_ - 1])

    def update(self, leaf: int, priority: float) -> None:
        """set a leaf and re-sum its ancestors"""
        if not 0 <= leaf < self.leaf_count:
            raise DomainError(f"leaf {leaf} outside [0, {self.leaf_count})")
        if not priority >= 0.0 or not math.isfinite(priority):
            raise DomainError(f"priority must be finite and nonnegative, got {priority}")
        node = leaf + self.capacity_ - 1
        self.nodes[node] = priority
        while node > 0:
            node = (node - 1) // 2
            self.nodes[node] = self.nodes[2 * node + 1] + self.nodes[2 * node + 2]

    def sample(self, prefix: float) -> int:
        """leaf whose cumulative-priority interval contains prefix"""
        if self.total <= 0.0:
            raise EmptyBufferError("cannot sample a sum tree with zero total")
        if prefix < 0.0:
            raise DomainError(f"prefix must be nonnegative, got {prefix}")
        node = 0
        while node < self.capacity_ - 1:
            left = 2 * node + 1
            # second test keeps rounding at the right edge off empty subtrees
            if prefix < self.nodes[left] or self.nodes[left + 1] <= 0.0:
                node = left
            else:
                prefix -= self.nodes[left]
                node = left + 1
        return node - (self.capacity_ - 1)

    def sample_many(self, prefixes) -> np.ndarray:
        """sample for every prefix of an array, descending all of them level by level"""
        if self.total <= 0.0:
            raise EmptyBufferError("cannot sample a sum tree with zero total")
        prefixes = np.array(prefixes, dtype=np.float64)
        if (prefixes < 0.0).any():
            raise DomainError("prefixes must be nonnegative")
        nodes = np.zeros(prefixes.shape, dtype=np.int64)
        for _ in range((self.capacity_ - 1).bit_length()):
            left = 2 * nodes + 1
            go_left = (prefixes < self.nodes[left]) | (self.nodes[left + 1] <= 0.0)
            prefixes = np.where(go_left, prefixes, prefixes - self.nodes[left])
            nodes = np.where(go_left, left, left + 1)
        return nodes - (self.capacity_ - 1)


def sumtree_update(tree: SumTree, leaf: int, priority: float) -> None:
    """set a leaf priority"""
    tree.update(leaf, priority)


def sumtree_sample(tree: SumTree, prefix: float) -> int:
    """prefix-sum lookup"""
    return tree.sample(prefix)


@dataclass(frozen=True)
class PrioritySamplerConfig:
    """proportional prioritisation; beta_is anneals linearly to beta_is_end"""
    alpha_exp: float = 0.6
    beta_is: float = 0.4
    beta_is_end: float = 1.0
    epsilon_prio: float = 1e-6

    def __post_init__(self):
        for name in ('alpha_exp', 'beta_is', 'beta_is_end'):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not self.epsilon_prio > 0.0:
            raise ConfigError("epsilon_prio must be positive")

    def beta_is_at(self, progress: float) -> float:
        """importance-sampling exponent at a fraction of training"""
        progress = min(max(progress, 0.0), 1.0)
        return self.beta_is + (self.beta_is_end - self.beta_is) * progress


def is_weights(probabilities, buffer_size: int, beta_is: float) -> np.ndarray:
    """(N * P(i)) ** -beta, normalised so the largest weight in the batch is 1"""
    raw = (buffer_size * np.asarray(probabilities, dtype=np.float64)) ** (-beta_is)
    return raw / raw.max()


def raw_priority_of(batch: ExperienceBatch, strategy: ReplayStrategy,
                    snapshot: FaSnapshot) -> np.ndarray:
    """
    Priority before shaping: |TD| for PER, rho_max * |TD| for VER.

    rho_max takes the old policy from the current network and the new policy
    from the row with the experienced entry replaced by its TD target.
    """
    states, actions = batch.fields()[:2]
    rows = np.arange(len(batch))
    old_rows = np.atleast_2d(forward(snapshot.params, states))
    targets = td_target(snapshot.target_params, batch, snapshot.cfg.gamma,
                        snapshot.flavor, snapshot.cfg.beta)
    td = targets - old_rows[rows, actions]
    if ReplayStrategy(strategy) != ReplayStrategy.VER:
        return np.abs(td)
    if not MetricFlavor(snapshot.flavor).is_soft:
        raise ConfigError("VER priorities need a soft agent")
    new_rows = old_rows.copy()
    new_rows[rows, actions] = targets
    pi_old = softmax(snapshot.cfg.beta, old_rows)[rows, actions]
    pi_new = softmax(snapshot.cfg.beta, new_rows)[rows, actions]
    return np.maximum(pi_old, pi_new) * np.abs(td)


def shape_priority(raw: np.ndarray, cfg: PrioritySamplerConfig) -> np.ndarray:
    """(raw + epsilon) ** alpha"""
    return (np.asarray(raw) + cfg.epsilon_prio) ** cfg.alpha_exp


def priority_of(e: Experience | ExperienceBatch, strategy: ReplayStrategy,
                snapshot: FaSnapshot, cfg: PrioritySamplerConfig):
    """shaped sampling priority of one experience or a batch"""
    batch = ExperienceBatch.stack([e]) if isinstance(e, Experience) else e
    shaped = shape_priority(raw_priority_of(batch, strategy, snapshot), cfg)
    return float(shaped[0]) if isinstance(e, Experience) else shaped


@dataclass(frozen=True)
class PrioritizedSample:
    """one prioritised draw"""
    indices: np.ndarray
    probabilities: np.ndarray
    weights: np.ndarray


class PrioritizedReplayBuffer(ReplayBuffer):
    """ring buffer whose slots are the leaves of a sum tree"""
    tree: SumTree
    max_priority: float
    sampler: PrioritySamplerConfig

    def __init__(self, capacity: int, sampler: PrioritySamplerConfig) -> None:
        super().__init__(capacity)
        self.tree = SumTree(capacity)
        self.sampler = sampler
        self.max_priority = 1.0

    def push(self, e: Experience) -> int:
        # new experiences enter at the highest priority seen so far
        slot = super().push(e)
        self.tree.update(slot, self.max_priority)
        return slot

    def sample(self, batch: int, rng: np.random.Generator, beta_is: float) -> PrioritizedSample:
        """stratified proportional draw of batch slots"""
        if len(self) == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        total = self.tree.total
        segment = total / batch
        prefixes = (np.arange(batch) + rng.random(batch)) * segment
        indices = self.tree.sample_many(np.minimum(prefixes, np.nextafter(total, 0.0)))
        probabilities = self.tree.nodes[indices + self.tree.capacity_ - 1] / total
        return PrioritizedSample(indices, probabilities,
                                 is_weights(probabilities, len(self), beta_is))

    def update_priorities(self, indices, priorities) -> None:
        """refresh priorities of sampled slots"""
        for index, priority in zip(np.asarray(indices).tolist(), np.asarray(priorities).tolist()):
            self.tree.update(index, priority)
            self.max_priority = max(self.max_priority, priority)
