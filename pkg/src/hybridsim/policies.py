"""The two black-box adaptation policies.

``StaticPolicy`` maps every issue to a fixed rule action and scores its plan with
design-time utility deltas.  ``DynamicPolicy`` searches every sequence of
issue-resolving actions and keeps the one with the best predicted utility.
Both report a simulated planning time so the loop can feed it back into RT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

from .system_model import (
    HIGH,
    LOW,
    ActionKind,
    AdaptationAction,
    AdaptationIssue,
    IssueKind,
    SystemState,
    apply_action,
    discharge,
    enlist,
    increase,
    is_applicable,
    predict_eu,
    reduce,
)
from .utility import UtilityWeights, utility

STATIC = "Static"
DYNAMIC = "Dynamic"

TAU_STATIC = 0.005  # simulated seconds per issue
KAPPA_DYNAMIC = 0.002  # simulated seconds per search node
EWMA_ALPHA = 0.5


class EmptyPlan(RuntimeError):
    pass


@dataclass(frozen=True)
class PlanningProblem:
    issues: tuple[AdaptationIssue, ...]
    state: SystemState

    def __post_init__(self):
        object.__setattr__(self, "issues", tuple(self.issues))

    def __len__(self) -> int:
        return len(self.issues)

    def prefix(self, size: int) -> "PlanningProblem":
        return PlanningProblem(self.issues[:size], self.state)


@dataclass(frozen=True)
class Plan:
    actions: tuple[AdaptationAction, ...]
    resolves: tuple[frozenset[int], ...]  # indices into ``issues``
    expected_utility: float
    produced_by: str
    planning_time_s: float
    issues: tuple[AdaptationIssue, ...] = ()
    nodes: int = 0

    def __len__(self) -> int:
        return len(self.actions)

    def issues_of(self, start: int) -> list[AdaptationIssue]:
        """Issues resolved by ``actions[start:]``, in first-resolution order."""
        seen: list[int] = []
        for idx in self.resolves[start:]:
            seen.extend(i for i in sorted(idx) if i not in seen)
        return [self.issues[i] for i in seen]


def addresses(action: AdaptationAction, issue: AdaptationIssue) -> bool:
    kind, ik = action.kind, issue.kind
    if ik is IssueKind.LATE:
        return kind is ActionKind.ENLIST or kind is ActionKind.REDUCE
    if ik is IssueKind.OVER_BUDGET:
        return kind is ActionKind.DISCHARGE
    if ik is IssueKind.LOW_UTILIZATION:
        return kind is ActionKind.DISCHARGE and action.target == issue.subject
    return kind is ActionKind.INCREASE and action.target == issue.subject


def newly_resolved(action: AdaptationAction, issues: Sequence[AdaptationIssue], resolved: int) -> int:
    """Bitmask of not-yet-resolved issues that ``action`` resolves."""
    mask = 0
    for i, issue in enumerate(issues):
        if not resolved >> i & 1 and addresses(action, issue):
            mask |= 1 << i
    return mask


def _mask_to_set(mask: int) -> frozenset[int]:
    return frozenset(i for i in range(mask.bit_length()) if mask >> i & 1)


def resolution_sets(actions: Sequence[AdaptationAction],
                    issues: Sequence[AdaptationIssue]) -> tuple[frozenset[int], ...]:
    resolved = 0
    out = []
    for a in actions:
        m = newly_resolved(a, issues, resolved)
        resolved |= m
        out.append(_mask_to_set(m))
    return tuple(out)


def plan_is_valid(plan: Plan, state: SystemState) -> bool:
    """Every action resolves a fresh issue and the sequence applies cleanly."""
    resolved = 0
    for a in plan.actions:
        m = newly_resolved(a, plan.issues, resolved)
        if not m or not is_applicable(state, a):
            return False
        resolved |= m
        state = apply_action(state, a)
    return True


# --- static policy -----------------------------------------------------------

StaticEuTable = Mapping[tuple[IssueKind, ActionKind], float]

RULE_ACTIONS: dict[IssueKind, tuple[ActionKind, ...]] = {
    IssueKind.LATE: (ActionKind.REDUCE, ActionKind.ENLIST),
    IssueKind.OVER_BUDGET: (ActionKind.DISCHARGE,),
    IssueKind.LOW_UTILIZATION: (ActionKind.DISCHARGE,),
    IssueKind.LOW_QUALITY: (ActionKind.INCREASE,),
}


def default_static_table(delta: float = 0.2) -> dict[tuple[IssueKind, ActionKind], float]:
    table = {(ik, ak): 0.0 for ik in IssueKind for ak in ActionKind}
    for ik, kinds in RULE_ACTIONS.items():
        for ak in kinds:
            table[(ik, ak)] = delta
    return table


def static_rule(state: SystemState, issue: AdaptationIssue) -> AdaptationAction:
    kind = issue.kind
    if kind is IssueKind.LATE:
        degradable = [s for s in state.servers if s.active and s.quality > LOW]
        if degradable:
            best = max(degradable, key=lambda s: (s.quality, -s.id))
            return reduce(best.id)
        return enlist()
    if kind is IssueKind.OVER_BUDGET:
        idlest = min((s for s in state.servers if s.active), key=lambda s: (s.utilization, s.id))
        return discharge(idlest.id)
    if kind is IssueKind.LOW_UTILIZATION:
        return discharge(issue.subject)
    return increase(issue.subject)


def static_plan(problem: PlanningProblem, horizon_size: int,
                table: StaticEuTable | None = None, tau: float = TAU_STATIC,
                weights: UtilityWeights | None = None) -> Plan:
    if horizon_size < 1:
        raise ValueError("horizon_size must be >= 1")
    table = default_static_table() if table is None else table
    issues = problem.issues[:horizon_size]
    state = problem.state
    actions: list[AdaptationAction] = []
    resolves: list[frozenset[int]] = []
    resolved = 0
    gain = 0.0
    for i, issue in enumerate(issues):
        if resolved >> i & 1:
            continue
        action = static_rule(state, issue)
        if not is_applicable(state, action):
            continue
        mask = newly_resolved(action, issues, resolved)
        resolved |= mask
        state = apply_action(state, action)
        actions.append(action)
        resolves.append(_mask_to_set(mask))
        gain += table.get((issue.kind, action.kind), 0.0)
    if not actions:
        raise EmptyPlan("no rule action is applicable")
    return Plan(tuple(actions), tuple(resolves), utility(problem.state, weights) + gain,
                STATIC, tau * len(issues), issues, nodes=len(issues))


# --- dynamic policy ----------------------------------------------------------

def candidate_actions(state: SystemState, issues: Sequence[AdaptationIssue],
                      resolved: int) -> list[tuple[AdaptationAction, int]]:
    """Applicable actions that resolve at least one pending issue, in tie-break order."""
    found: dict[AdaptationAction, None] = {}
    for i, issue in enumerate(issues):
        if resolved >> i & 1:
            continue
        kind = issue.kind
        if kind is IssueKind.LATE:
            found[enlist()] = None
            for s in state.servers:
                if s.active and s.quality > LOW:
                    found[reduce(s.id)] = None
        elif kind is IssueKind.OVER_BUDGET:
            for s in state.servers:
                if s.active:
                    found[discharge(s.id)] = None
        elif kind is IssueKind.LOW_UTILIZATION:
            found[discharge(issue.subject)] = None
        else:
            found[increase(issue.subject)] = None
    out = []
    for a in sorted(found, key=lambda a: a.sort_key):
        if is_applicable(state, a):
            out.append((a, newly_resolved(a, issues, resolved)))
    return out


def search_sequences(state: SystemState, issues: Sequence[AdaptationIssue],
                     weights: UtilityWeights | None = None):
    """Best non-empty action sequence under (max EU, shortest, lexicographic).

    Returns ``(actions, eu, nodes)`` where ``nodes`` counts the root plus every
    sequence an exhaustive enumerator would visit.  Subtrees that share a pool
    configuration and resolved-issue set are evaluated once.
    """
    eu_cache: dict = {}
    memo: dict = {}

    def eu_of(st: SystemState) -> float:
        key = st.pool_key()
        v = eu_cache.get(key)
        if v is None:
            v = eu_cache[key] = predict_eu(st, (), weights)
        return v

    def best_below(st: SystemState, resolved: int):
        key = (st.pool_key(), resolved)
        hit = memo.get(key)
        if hit is not None:
            return hit
        best = (-eu_of(st), 0, (), ())
        count = 0
        for action, mask in candidate_actions(st, issues, resolved):
            cb, cc = best_below(apply_action(st, action), resolved | mask)
            count += 1 + cc
            cand = (cb[0], cb[1] + 1, (action.sort_key,) + cb[2], (action,) + cb[3])
            if cand[:3] < best[:3]:
                best = cand
        memo[key] = (best, count)
        return best, count

    best = None
    nodes = 1
    for action, mask in candidate_actions(state, issues, 0):
        cb, cc = best_below(apply_action(state, action), mask)
        nodes += 1 + cc
        cand = (cb[0], cb[1] + 1, (action.sort_key,) + cb[2], (action,) + cb[3])
        if best is None or cand[:3] < best[:3]:
            best = cand
    if best is None:
        return None, float("-inf"), nodes
    return best[3], -best[0], nodes


def dynamic_plan(problem: PlanningProblem, horizon_size: int, kappa: float = KAPPA_DYNAMIC,
                 weights: UtilityWeights | None = None) -> Plan:
    if horizon_size < 1:
        raise ValueError("horizon_size must be >= 1")
    issues = problem.issues[:horizon_size]
    actions, eu, nodes = search_sequences(problem.state, issues, weights)
    if not actions:
        raise EmptyPlan("no applicable action sequence")
    return Plan(tuple(actions), resolution_sets(actions, issues), eu, DYNAMIC,
                kappa * nodes, issues, nodes=nodes)


# --- profiles and estimators -------------------------------------------------

def sequence_count(k: int) -> int:
    """Non-empty ordered selections from k single-option issues."""
    total, term = 0, 1
    for j in range(k):
        term *= k - j
        total += term
    return total


@dataclass(frozen=True)
class PolicyProfile:
    id: str
    et_estimate_s: float
    eu_estimator: Callable[[PlanningProblem, int], float] | None = field(default=None, compare=False)
    switch_setup_done: bool = False
    branching: float = 2.0  # search nodes per single-option sequence (dynamic only)
    alpha: float = EWMA_ALPHA

    def __post_init__(self):
        if self.et_estimate_s < 0:
            raise ValueError("et_estimate_s must be non-negative")

    def predicted_nodes(self, problem_size: int) -> float:
        return 1.0 + self.branching * sequence_count(problem_size)


def estimate_et(profile: PolicyProfile, problem_size: int) -> float:
    if problem_size < 0:
        raise ValueError("problem_size must be non-negative")
    if problem_size == 0:
        return 0.0
    if profile.id == DYNAMIC:
        return profile.et_estimate_s * profile.predicted_nodes(problem_size)
    return profile.et_estimate_s * problem_size


def estimate_eu(profile: PolicyProfile, problem: PlanningProblem, horizon: int) -> float:
    if profile.eu_estimator is None:
        raise ValueError(f"profile {profile.id} has no EU estimator")
    return profile.eu_estimator(problem, horizon)


def record_et(profile: PolicyProfile, observed_s: float, problem_size: int) -> PolicyProfile:
    """EWMA update of the per-unit planning time (issues for static, nodes for dynamic)."""
    if observed_s < 0 or problem_size < 1:
        raise ValueError("need observed_s >= 0 and problem_size >= 1")
    a = profile.alpha
    return replace(profile, et_estimate_s=(1 - a) * profile.et_estimate_s + a * observed_s / problem_size)


def record_branching(profile: PolicyProfile, nodes: int, issues: int) -> PolicyProfile:
    if issues < 1:
        return profile
    return replace(profile, branching=max(1e-9, (nodes - 1) / sequence_count(issues)))


class StaticPolicy:
    id = STATIC

    def __init__(self, table: StaticEuTable | None = None, tau: float = TAU_STATIC,
                 weights: UtilityWeights | None = None):
        self.table = default_static_table() if table is None else dict(table)
        self.tau = tau
        self.weights = weights

    def plan(self, problem: PlanningProblem, horizon_size: int) -> Plan:
        return static_plan(problem, horizon_size, self.table, self.tau, self.weights)

    def estimate_eu(self, problem: PlanningProblem, horizon_size: int) -> float:
        try:
            return self.plan(problem, horizon_size).expected_utility
        except EmptyPlan:
            return float("-inf")

    def profile(self) -> PolicyProfile:
        return PolicyProfile(STATIC, self.tau, self.estimate_eu)


class DynamicPolicy:
    id = DYNAMIC

    def __init__(self, kappa: float = KAPPA_DYNAMIC, weights: UtilityWeights | None = None,
                 initial_branching: float = 2.0):
        self.kappa = kappa
        self.weights = weights
        self.initial_branching = initial_branching
        self._cache: tuple | None = None

    def plan(self, problem: PlanningProblem, horizon_size: int) -> Plan:
        c = self._cache
        issues = problem.issues[:horizon_size]
        if c is not None and c[0] is problem.state and c[1] == issues:
            if isinstance(c[2], Exception):
                raise c[2]
            return c[2]
        try:
            result = dynamic_plan(problem, horizon_size, self.kappa, self.weights)
        except EmptyPlan as exc:
            self._cache = (problem.state, issues, exc)
            raise
        self._cache = (problem.state, issues, result)
        return result

    def estimate_eu(self, problem: PlanningProblem, horizon_size: int) -> float:
        try:
            return self.plan(problem, horizon_size).expected_utility
        except EmptyPlan:
            return float("-inf")

    def profile(self) -> PolicyProfile:
        return PolicyProfile(DYNAMIC, self.kappa, self.estimate_eu, branching=self.initial_branching)
