"""
Value metrics of a single update and their TD-error bounds.

Every metric has a row kernel working on the action values of the updated
state before and after the update. Kernels reduce over the last axis, so the
tabular agents pass one row and the network agents pass a (batch, actions)
matrix through the same code.
"""
from dataclasses import dataclass
from enum import Enum
import logging

import numpy as np

from .envs import Experience
from .errors import DomainError
from .numerics import argmax_tiebreak, entropy, log_softmax, logsumexp, softmax
from .tabular import QAgentConfig, QTable, SoftQAgentConfig, soft_td_error, td_error

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-9
# network agents sum over wide hidden layers before reaching the rows
FA_ADDITIVITY_TOLERANCE = 1e-7


class MetricFlavor(str, Enum):
    """which update rule produced a record"""
    PLAIN = 'plain'
    SOFT = 'soft'
    FA_PLAIN = 'fa_plain'
    FA_SOFT = 'fa_soft'

    @property
    def is_soft(self) -> bool:
        """bounds scale with the policy terms"""
        return self in (MetricFlavor.SOFT, MetricFlavor.FA_SOFT)

    @property
    def is_fa(self) -> bool:
        """metrics built from a target-substituted row"""
        return self in (MetricFlavor.FA_PLAIN, MetricFlavor.FA_SOFT)


def _pick(rows: np.ndarray, index) -> np.ndarray:
    return np.take_along_axis(rows, np.asarray(index)[..., None], axis=-1)[..., 0]


# Q-learning row kernels


def evb_q_rows(old: np.ndarray, new: np.ndarray):
    """max_a new - max_a old"""
    return new.max(axis=-1) - old.max(axis=-1)


def piv_q_rows(old: np.ndarray, new: np.ndarray):
    """max_a new - new[a_old], a_old the greedy action before the update"""
    return new.max(axis=-1) - _pick(new, argmax_tiebreak(old))


def eiv_q_rows(old: np.ndarray, new: np.ndarray):
    """new[a_old] - old[a_old]"""
    a_old = argmax_tiebreak(old)
    return _pick(new, a_old) - _pick(old, a_old)


# soft Q-learning row kernels


def evb_soft_rows(old: np.ndarray, new: np.ndarray, beta: float):
    """change of the soft value"""
    return logsumexp(beta, new) - logsumexp(beta, old)


def eiv_soft_rows(old: np.ndarray, new: np.ndarray, beta: float):
    """value change weighted by the old policy"""
    return (softmax(beta, old) * (new - old)).sum(axis=-1)


def piv_soft_rows(old: np.ndarray, new: np.ndarray, beta: float):
    """policy change on the new values, plus the entropy change"""
    policy_shift = ((softmax(beta, new) - softmax(beta, old)) * new).sum(axis=-1)
    return policy_shift + beta * (entropy(beta, new) - entropy(beta, old))


def evb_soft_definitional_rows(old: np.ndarray, new: np.ndarray, beta: float):
    """
    Soft EVB written out as the expected entropy-augmented value under each
    policy. Agrees with evb_soft_rows; kept as an independent oracle.
    """
    def augmented(rows):
        logp = log_softmax(beta, rows)
        return (np.exp(logp) * (rows - beta * logp)).sum(axis=-1)
    return augmented(new) - augmented(old)


# table-level operations


def evb_q(q_old: QTable, q_new: QTable, state: int) -> float:
    """expected value of backup for a greedy policy"""
    return float(evb_q_rows(q_old.values[state], q_new.values[state]))


def piv_q(q_old: QTable, q_new: QTable, state: int) -> float:
    """policy improvement value for a greedy policy"""
    return float(piv_q_rows(q_old.values[state], q_new.values[state]))


def eiv_q(q_old: QTable, q_new: QTable, state: int) -> float:
    """evaluation improvement value for a greedy policy"""
    return float(eiv_q_rows(q_old.values[state], q_new.values[state]))


def evb_soft(q_old: QTable, q_new: QTable, state: int, beta: float) -> float:
    """expected value of backup for the softmax policy"""
    return float(evb_soft_rows(q_old.values[state], q_new.values[state], beta))


def piv_soft(q_old: QTable, q_new: QTable, state: int, beta: float) -> float:
    """policy improvement value for the softmax policy"""
    return float(piv_soft_rows(q_old.values[state], q_new.values[state], beta))


def eiv_soft(q_old: QTable, q_new: QTable, state: int, beta: float) -> float:
    """evaluation improvement value for the softmax policy"""
    return float(eiv_soft_rows(q_old.values[state], q_new.values[state], beta))


# bounds


def bound_q(td, alpha: float):
    """alpha * |TD|"""
    return alpha * np.abs(td)


def bounds_soft(td, pi_old_ak, pi_new_ak):
    """(rho_min * |TD|, rho_max * |TD|) from the experienced action's probabilities"""
    pi_old_ak = np.asarray(pi_old_ak, dtype=np.float64)
    pi_new_ak = np.asarray(pi_new_ak, dtype=np.float64)
    for p in (pi_old_ak, pi_new_ak):
        if np.any((p < 0.0) | (p > 1.0)):
            raise DomainError("policy probabilities must lie in [0, 1]")
    magnitude = np.abs(td)
    return (np.minimum(pi_old_ak, pi_new_ak) * magnitude,
            np.maximum(pi_old_ak, pi_new_ak) * magnitude)


# records


@dataclass(frozen=True)
class MetricRecord:
    """metrics and bounds of one update"""
    td: float
    evb: float
    piv: float
    eiv: float
    rho_max: float
    rho_min: float
    upper_bound: float
    lower_bound: float
    flavor: MetricFlavor

    def violations(self, tolerance: float) -> tuple[str, ...]:
        """names of the record invariants this record breaks"""
        return record_violations(self, tolerance)


def violation_excess(record) -> dict[str, float]:
    """
    Amount by which each record invariant is exceeded, for one record or a
    trace row with the same fields; an invariant holds when its excess is not
    above the tolerance.

    - upper_bound: |evb|, |piv|, |eiv| <= upper_bound
    - lower_bound: soft flavors only, |evb|, |eiv| >= lower_bound
    - additivity: evb = piv + eiv
    - policy_improvement_sign: piv >= 0
    """
    flavor = MetricFlavor(record.flavor)
    excess = {'upper_bound': max(abs(record.evb), abs(record.piv), abs(record.eiv))
              - record.upper_bound}
    if flavor.is_soft:
        excess['lower_bound'] = record.lower_bound - min(abs(record.evb), abs(record.eiv))
    excess['additivity'] = abs(record.evb - (record.piv + record.eiv))
    excess['policy_improvement_sign'] = -record.piv
    return excess


def invariant_tolerance(name: str, flavor: MetricFlavor, tolerance: float) -> float:
    """tolerance applied to one invariant"""
    if name == 'additivity' and MetricFlavor(flavor).is_fa:
        return max(tolerance, FA_ADDITIVITY_TOLERANCE)
    return tolerance


def record_violations(record, tolerance: float) -> tuple[str, ...]:
    """names of the invariants a record breaks beyond tolerance"""
    return tuple(
        name for name, amount in violation_excess(record).items()
        if amount > invariant_tolerance(name, record.flavor, tolerance)
    )


def metric_records(old_rows: np.ndarray, new_rows: np.ndarray, actions: np.ndarray,
                   td: np.ndarray, flavor: MetricFlavor, alpha: float = 1.0,
                   beta: float | None = None) -> list[MetricRecord]:
    """Build records for a batch of updates given the rows before and after"""
    flavor = MetricFlavor(flavor)
    old_rows = np.atleast_2d(old_rows)
    new_rows = np.atleast_2d(new_rows)
    actions = np.atleast_1d(actions)
    td = np.atleast_1d(np.asarray(td, dtype=np.float64))
    if flavor.is_soft:
        evb = evb_soft_rows(old_rows, new_rows, beta)
        piv = piv_soft_rows(old_rows, new_rows, beta)
        eiv = eiv_soft_rows(old_rows, new_rows, beta)
        pi_old = _pick(softmax(beta, old_rows), actions)
        pi_new = _pick(softmax(beta, new_rows), actions)
        lower, upper = bounds_soft(td, pi_old, pi_new)
    else:
        evb = evb_q_rows(old_rows, new_rows)
        piv = piv_q_rows(old_rows, new_rows)
        eiv = eiv_q_rows(old_rows, new_rows)
        # greedy policies put all their mass on the argmax
        pi_old = (actions == argmax_tiebreak(old_rows)).astype(np.float64)
        pi_new = (actions == argmax_tiebreak(new_rows)).astype(np.float64)
        upper = bound_q(td, alpha)
        lower = np.zeros_like(td)
    rho_max = np.maximum(pi_old, pi_new)
    rho_min = np.minimum(pi_old, pi_new)
    return [
        MetricRecord(*values, flavor=flavor)
        for values in zip(td.tolist(), evb.tolist(), piv.tolist(), eiv.tolist(),
                          rho_max.tolist(), rho_min.tolist(), upper.tolist(), lower.tolist())
    ]


def metric_record_tabular(q_old: QTable, q_new: QTable, e: Experience, flavor: MetricFlavor,
                          cfg: QAgentConfig | SoftQAgentConfig) -> MetricRecord:
    """Record of one tabular update; q_new must be the update of q_old on e"""
    flavor = MetricFlavor(flavor)
    if flavor.is_soft:
        td = soft_td_error(q_old, e, cfg.beta, cfg.gamma)
        record = metric_records(q_old.values[e.state], q_new.values[e.state], e.action,
                                td, flavor, beta=cfg.beta)[0]
    else:
        td = td_error(q_old, e, cfg.gamma)
        record = metric_records(q_old.values[e.state], q_new.values[e.state], e.action,
                                td, flavor, alpha=cfg.alpha)[0]
    broken = record.violations(DEFAULT_TOLERANCE)
    if broken:
        logger.warning("record at state %s action %s breaks %s", e.state, e.action, broken)
    return record
