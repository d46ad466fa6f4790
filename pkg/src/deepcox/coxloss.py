"""Negative log partial likelihood and its score, with Breslow ties.

Observations are swept in descending time order.  The risk set of a
subject is every subject whose time is at least its own, so tied subjects
share the full risk set of their tie group.  Running log-sum-exp
accumulation keeps the sweep finite for scores of any magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLikelihoodError, InvalidArgumentError


@dataclass(frozen=True)
class RiskOrder:
    """Descending-time ordering with tie bookkeeping.

    ``group_start[k]`` and ``group_end[k]`` give, for sorted position ``k``,
    the first and last sorted positions of its tie group.
    """

    order: np.ndarray
    event_flags: np.ndarray
    group_start: np.ndarray
    group_end: np.ndarray

    @property
    def tie_groups(self):
        starts = np.flatnonzero(self.group_start == np.arange(self.order.size))
        return [(int(s), int(self.group_end[s]) + 1) for s in starts]


def risk_order(times, events) -> RiskOrder:
    times = np.asarray(times, dtype=np.float64)
    order = np.argsort(-times, kind="stable")
    ts = times[order]
    n = ts.size
    new_group = np.ones(n, dtype=bool)
    new_group[1:] = ts[1:] != ts[:-1]
    starts = np.flatnonzero(new_group)
    group_id = np.cumsum(new_group) - 1
    ends = np.append(starts[1:], n) - 1
    return RiskOrder(order, np.asarray(events, dtype=bool)[order], starts[group_id], ends[group_id])


def _validate(scores, times, events):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    events = np.asarray(events).reshape(-1).astype(bool)
    if not (scores.size == times.size == events.size):
        raise InvalidArgumentError(
            f"length mismatch: {scores.size} scores, {times.size} times, {events.size} events"
        )
    if scores.size == 0 or not events.any():
        raise DegenerateLikelihoodError("partial likelihood needs at least one observed event")
    return scores, times, events


def sorted_loss_and_score(s, d, group_start, group_end, with_score=True):
    """Loss and score on arrays already in descending-time order.

    All arguments have shape ``(K, N)``; ``d`` holds 0/1 event weights.
    Returns the per-row loss ``(K,)`` and, optionally, the per-row score
    ``d(-L_n)/d s`` of shape ``(K, N)``.
    """
    n = s.shape[-1]
    lse = np.logaddexp.accumulate(s, axis=-1)
    log_risk = np.take_along_axis(lse, group_end, axis=-1)
    loss = -np.sum(d * (s - log_risk), axis=-1) / n
    if not with_score:
        return loss, None
    # sum over events i with T_i <= T_k of exp(s_k - log_risk_i), via a
    # reversed running log-sum-exp of -log_risk over event positions
    a = np.where(d > 0, -log_risk, -np.inf)
    tail = np.logaddexp.accumulate(a[..., ::-1], axis=-1)[..., ::-1]
    log_c = np.take_along_axis(tail, group_start, axis=-1)
    score = -(d - np.exp(s + log_c)) / n
    return loss, score


def neg_log_partial_likelihood(scores, times, events) -> float:
    """``-L_n(g)`` for scores ``g(X_i)``, averaged over all ``n`` subjects."""
    scores, times, events = _validate(scores, times, events)
    ro = risk_order(times, events)
    loss, _ = sorted_loss_and_score(
        scores[ro.order][None], ro.event_flags[None].astype(np.float64), ro.group_start[None], ro.group_end[None], False
    )
    return float(loss[0])


def partial_likelihood_score(scores, times, events) -> np.ndarray:
    """Gradient of ``neg_log_partial_likelihood`` with respect to the scores."""
    scores, times, events = _validate(scores, times, events)
    ro = risk_order(times, events)
    _, score = sorted_loss_and_score(
        scores[ro.order][None], ro.event_flags[None].astype(np.float64), ro.group_start[None], ro.group_end[None]
    )
    out = np.empty_like(scores)
    out[ro.order] = score[0]
    return out


def brute_force_likelihood(scores, times, events) -> float:
    """Direct O(n^2) evaluation of ``-L_n(g)``; reference only."""
    scores, times, events = _validate(scores, times, events)
    n = scores.size
    total = 0.0
    for i in range(n):
        if not events[i]:
            continue
        risk = 0.0
        for j in range(n):
            if times[j] >= times[i]:
                risk += math.exp(scores[j])
        total += scores[i] - math.log(risk)
    return -total / n
