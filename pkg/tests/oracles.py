"""Independent reference implementations used as test oracles.

Written naively on purpose: no memoization, no shared helpers from the
planner code beyond the state transition and the one-step predictor.
"""

from __future__ import annotations

import itertools

from hybridsim.system_model import (
    ActionKind,
    IssueKind,
    apply_action,
    discharge,
    enlist,
    increase,
    is_applicable,
    predict_eu,
    reduce,
)

_RESOLVES = {
    # issue kind -> (action kinds that fix it, whether the target must be the subject)
    IssueKind.LATE: ({ActionKind.ENLIST, ActionKind.REDUCE}, False),
    IssueKind.OVER_BUDGET: ({ActionKind.DISCHARGE}, False),
    IssueKind.LOW_UTILIZATION: ({ActionKind.DISCHARGE}, True),
    IssueKind.LOW_QUALITY: ({ActionKind.INCREASE}, True),
}


def fixes(action, issue) -> bool:
    kinds, targeted = _RESOLVES[issue.kind]
    return action.kind in kinds and (not targeted or action.target == issue.subject)


def action_universe(state):
    acts = [enlist()]
    for s in state.servers:
        acts += [discharge(s.id), increase(s.id), reduce(s.id)]
    return acts


def valid_sequence(state, seq, issues) -> bool:
    open_ = set(range(len(issues)))
    for a in seq:
        if not is_applicable(state, a):
            return False
        hit = {i for i in open_ if fixes(a, issues[i])}
        if not hit:
            return False
        open_ -= hit
        state = apply_action(state, a)
    return True


def all_sequences(state, issues):
    universe = action_universe(state)
    for length in range(1, len(issues) + 1):
        for seq in itertools.product(universe, repeat=length):
            if valid_sequence(state, seq, issues):
                yield seq


def brute_force_best(state, issues, weights=None):
    """Best sequence under (max EU, shorter, Enlist<Discharge<Increase<Reduce then id)."""
    best = None
    best_key = None
    count = 0
    for seq in all_sequences(state, issues):
        count += 1
        eu = predict_eu(state, seq, weights)
        key = (-eu, len(seq), [(int(a.kind), -1 if a.target is None else a.target) for a in seq])
        if best_key is None or key < best_key:
            best, best_key = seq, key
    return best, (None if best_key is None else -best_key[0]), count


def ewma(values, start, alpha=0.5):
    est = start
    for v in values:
        est = (1 - alpha) * est + alpha * v
    return est


def fluid_step(queue, arrivals, rate, latency=0.0, rt_max=90.0):
    """Hand-rolled single-step queue: returns (served, queue_after, timeouts, rt)."""
    cap = int(rate)
    backlog = queue + arrivals
    served = min(backlog, cap)
    left = backlog - served
    rt = min(rt_max, latency + left / rate)
    limit = 0
    while (limit + 1) / rate + latency < rt_max:  # positions that still make it in time
        limit += 1
    drop = max(0, left - limit)
    return served, left - drop, drop, rt
