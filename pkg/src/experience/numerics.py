"""
Scalar and vector helpers shared by every agent.

All reductions work on the last axis, so a single row of action values and a
(batch, actions) matrix go through the same code.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


def check_temperature(beta: float) -> float:
    """Return beta if it is a usable temperature, raise otherwise"""
    if not math.isfinite(beta) or beta <= 0.0:
        raise DomainError(f"temperature must be positive and finite, got {beta}")
    return beta


def _as_values(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] == 0:
        raise DomainError("expected a nonempty vector of values")
    return arr


def logsumexp(beta: float, values):
    """
    beta * log(sum(exp(values / beta))) over the last axis.

    The maximum is shifted out before exponentiating, so entries of order 1e6
    with beta down to 1e-3 do not overflow.
    """
    check_temperature(beta)
    arr = _as_values(values)
    top = arr.max(axis=-1)
    shifted = np.exp((arr - top[..., None]) / beta)
    return top + beta * np.log(shifted.sum(axis=-1))


def softmax(beta: float, values) -> np.ndarray:
    """probabilities proportional to exp(values / beta)"""
    check_temperature(beta)
    arr = _as_values(values)
    shifted = np.exp((arr - arr.max(axis=-1, keepdims=True)) / beta)
    return shifted / shifted.sum(axis=-1, keepdims=True)


def log_softmax(beta: float, values) -> np.ndarray:
    """log of softmax, without taking the log of an underflowed probability"""
    arr = _as_values(values)
    return (arr - np.asarray(logsumexp(beta, arr))[..., None]) / beta


def entropy(beta: float, values):
    """Shannon entropy of softmax(beta, values)"""
    logp = log_softmax(beta, values)
    return -(np.exp(logp) * logp).sum(axis=-1)


def argmax_tiebreak(values):
    """index of the maximum; ties go to the lowest index"""
    arr = _as_values(values)
    # np.argmax returns the first occurrence
    return np.argmax(arr, axis=-1)


@dataclass
class RunStreams:
    """independent random streams of one run"""
    env: np.random.Generator
    action: np.random.Generator
    replay: np.random.Generator
    evaluation: np.random.Generator
    init: np.random.Generator


def make_streams(seed: int) -> RunStreams:
    """Split one 64-bit seed into the per-purpose streams of a run"""
    if not 0 <= seed < 2 ** 64:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    env, action, replay, evaluation, init = np.random.SeedSequence(seed).spawn(5)
    return RunStreams(
        env=np.random.Generator(np.random.PCG64(env)),
        action=np.random.Generator(np.random.PCG64(action)),
        replay=np.random.Generator(np.random.PCG64(replay)),
        evaluation=np.random.Generator(np.random.PCG64(evaluation)),
        init=np.random.Generator(np.random.PCG64(init)),
    )
