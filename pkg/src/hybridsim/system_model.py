"""Fluid model of an elastic N-tier web system (server pool behind a load balancer).

Requests are whole units so that conservation can be checked exactly:
every step, ``arrivals == drained + newly_queued + timed_out``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from . import utility as _utility

RT_MAX = 90.0
QUALITY_LEVELS = (0.0, 0.5, 1.0)
LOW, MEDIUM, HIGH = QUALITY_LEVELS


class NoActiveServer(RuntimeError):
    pass


class Inapplicable(ValueError):
    def __init__(self, action: "AdaptationAction", reason: str):
        super().__init__(f"{action}: {reason}")
        self.action = action
        self.reason = reason


class ActionKind(enum.IntEnum):
    # value order is the lexicographic tie-break order used by the planners
    ENLIST = 0
    DISCHARGE = 1
    INCREASE = 2
    REDUCE = 3


class IssueKind(enum.IntEnum):
    # value order is criticality order
    LATE = 0
    OVER_BUDGET = 1
    LOW_UTILIZATION = 2
    LOW_QUALITY = 3


@dataclass(frozen=True, order=False)
class AdaptationAction:
    kind: ActionKind
    target: int | None = None

    @property
    def sort_key(self) -> tuple[int, int]:
        return (int(self.kind), -1 if self.target is None else self.target)

    def __lt__(self, other: "AdaptationAction") -> bool:
        return self.sort_key < other.sort_key

    def __str__(self) -> str:
        name = self.kind.name.title().replace("_", "")
        return name if self.target is None else f"{name}({self.target})"


def enlist() -> AdaptationAction:
    return AdaptationAction(ActionKind.ENLIST)


def discharge(sid: int) -> AdaptationAction:
    return AdaptationAction(ActionKind.DISCHARGE, sid)


def increase(sid: int) -> AdaptationAction:
    return AdaptationAction(ActionKind.INCREASE, sid)


def reduce(sid: int) -> AdaptationAction:
    return AdaptationAction(ActionKind.REDUCE, sid)


@dataclass(frozen=True)
class AdaptationIssue:
    kind: IssueKind
    subject: int | None  # server id, or None for the client aggregate / whole pool
    severity: float
    detected_at_s: float = 0.0

    def __post_init__(self):
        if not self.severity > 0:
            raise ValueError(f"issue severity must be > 0, got {self.severity}")

    @property
    def key(self) -> tuple[int, int]:
        return (int(self.kind), -1 if self.subject is None else self.subject)

    def __str__(self) -> str:
        name = self.kind.name.title().replace("_", "")
        return name if self.subject is None else f"{name}({self.subject})"


def criticality_sorted(issues: Iterable[AdaptationIssue]) -> list[AdaptationIssue]:
    return sorted(issues, key=lambda i: i.key)


@dataclass(frozen=True)
class IssueThresholds:
    rt_late_s: float = 1.0
    budget_per_hour: float = 3 * 3600.0
    util_low: float = 0.3
    rt_optimal_s: float = 0.1

    def __post_init__(self):
        if min(self.rt_late_s, self.budget_per_hour, self.util_low, self.rt_optimal_s) <= 0:
            raise ValueError("issue thresholds must be positive")


@dataclass(frozen=True)
class SystemConfig:
    n_max: int = 10
    base_service_rate: float = 60.0
    cost_per_step: float = 1.0
    rt_max: float = RT_MAX
    rt_window: int = 5  # samples in the RT averaging ring
    initial_active: int = 1
    initial_quality: float = HIGH

    @property
    def max_cost(self) -> float:
        return self.cost_per_step


@dataclass(frozen=True, slots=True)
class ServerState:
    id: int
    active: bool
    quality: float
    cost_per_step: float
    utilization: float
    base_service_rate: float

    @property
    def effective_rate(self) -> float:
        # high quality content halves throughput relative to low
        return self.base_service_rate * (2.0 - self.quality)


@dataclass(frozen=True, slots=True)
class SystemState:
    clock_s: float
    servers: tuple[ServerState, ...]
    queue_len: int
    rt_last: float
    rt_samples: tuple[float, ...]
    budget_spent: float
    config: SystemConfig = field(default_factory=SystemConfig)
    last_arrivals: int = 0
    # running request accounting
    arrivals_total: int = 0
    served_total: int = 0
    timeouts_total: int = 0
    last_timeouts: int = 0

    @property
    def active_servers(self) -> tuple[ServerState, ...]:
        return tuple(s for s in self.servers if s.active)

    @property
    def n_active(self) -> int:
        return sum(1 for s in self.servers if s.active)

    @property
    def avg_rt(self) -> float:
        samples = self.rt_samples
        return sum(samples) / len(samples) if samples else 0.0

    @property
    def total_rate(self) -> float:
        return sum(s.effective_rate for s in self.servers if s.active)

    @property
    def avg_quality(self) -> float:
        act = self.active_servers
        return sum(s.quality for s in act) / len(act) if act else 0.0

    def pool_key(self) -> tuple[tuple[bool, float], ...]:
        return tuple((s.active, s.quality) for s in self.servers)

    def server(self, sid: int) -> ServerState:
        return self.servers[sid]

    def snapshot_row(self) -> tuple:
        return (self.clock_s, self.n_active, round(self.avg_quality, 6), self.queue_len,
                round(self.rt_last, 6), round(self.budget_spent, 6))


SNAPSHOT_HEADER = ("clock_s", "active_servers", "avg_quality", "queue_len", "rt_last", "budget_spent")


def initial_state(config: SystemConfig | None = None) -> SystemState:
    cfg = config or SystemConfig()
    if not 1 <= cfg.initial_active <= cfg.n_max:
        raise ValueError("initial_active must be within [1, n_max]")
    if cfg.initial_quality not in QUALITY_LEVELS:
        raise ValueError(f"initial_quality must be one of {QUALITY_LEVELS}")
    servers = tuple(
        ServerState(i, i < cfg.initial_active, cfg.initial_quality if i < cfg.initial_active else MEDIUM,
                    cfg.cost_per_step, 0.0, cfg.base_service_rate)
        for i in range(cfg.n_max)
    )
    return SystemState(0.0, servers, 0, 0.0, (), 0.0, cfg)


def step(state: SystemState, arrivals: int, dt_s: float = 1.0,
         planner_latency_s: float = 0.0) -> SystemState:
    """Advance the fluid queue by ``dt_s`` seconds."""
    if dt_s <= 0:
        raise ValueError("dt_s must be positive")
    if arrivals < 0:
        raise ValueError("arrivals must be non-negative")
    cfg = state.config
    total_rate = 0.0
    cost = 0.0
    for s in state.servers:
        if s.active:
            total_rate += s.effective_rate
            cost += s.cost_per_step
    if total_rate <= 0:
        raise NoActiveServer("no active server in the pool")

    capacity = total_rate * dt_s
    backlog = state.queue_len + arrivals
    drained = min(backlog, int(capacity))
    remaining = backlog - drained
    util = min(1.0, drained / capacity)

    rt = planner_latency_s + remaining / total_rate
    if rt > cfg.rt_max:
        rt = cfg.rt_max
    # requests at queue position i wait latency + i/rate; drop those reaching rt_max
    headroom = cfg.rt_max - planner_latency_s
    keep = max(0, math.ceil(headroom * total_rate) - 1) if headroom > 0 else 0
    # settle float rounding at the boundary against the waiting-time test itself
    while keep > 0 and planner_latency_s + keep / total_rate >= cfg.rt_max:
        keep -= 1
    while planner_latency_s + (keep + 1) / total_rate < cfg.rt_max:
        keep += 1
    timeouts = remaining - keep if remaining > keep else 0
    remaining -= timeouts

    servers = tuple(
        ServerState(s.id, True, s.quality, s.cost_per_step, util, s.base_service_rate) if s.active else s
        for s in state.servers
    )
    samples = state.rt_samples + (rt,)
    if len(samples) > cfg.rt_window:
        samples = samples[-cfg.rt_window:]
    return SystemState(
        clock_s=state.clock_s + dt_s,
        servers=servers,
        queue_len=remaining,
        rt_last=rt,
        rt_samples=samples,
        budget_spent=state.budget_spent + cost * dt_s,
        config=cfg,
        last_arrivals=arrivals,
        arrivals_total=state.arrivals_total + arrivals,
        served_total=state.served_total + drained,
        timeouts_total=state.timeouts_total + timeouts,
        last_timeouts=timeouts,
    )


def check_applicable(state: SystemState, action: AdaptationAction) -> str | None:
    """Reason the action cannot be applied, or None if it can."""
    kind = action.kind
    if kind is ActionKind.ENLIST:
        if all(s.active for s in state.servers):
            return "server pool is full"
        return None
    sid = action.target
    if sid is None or not 0 <= sid < len(state.servers):
        return "unknown target server"
    srv = state.servers[sid]
    if not srv.active:
        return "target server is inactive"
    if kind is ActionKind.DISCHARGE:
        return "cannot discharge the last active server" if state.n_active < 2 else None
    if kind is ActionKind.INCREASE:
        return "already at high quality" if srv.quality >= HIGH else None
    return "already at low quality" if srv.quality <= LOW else None


def is_applicable(state: SystemState, action: AdaptationAction) -> bool:
    return check_applicable(state, action) is None


def _step_quality(q: float, up: bool) -> float:
    i = QUALITY_LEVELS.index(q)
    return QUALITY_LEVELS[i + 1] if up else QUALITY_LEVELS[i - 1]


def apply_action(state: SystemState, action: AdaptationAction) -> SystemState:
    reason = check_applicable(state, action)
    if reason is not None:
        raise Inapplicable(action, reason)
    servers = list(state.servers)
    kind = action.kind
    if kind is ActionKind.ENLIST:
        slot = next(s for s in servers if not s.active)
        servers[slot.id] = replace(slot, active=True, quality=MEDIUM, utilization=0.0)
    elif kind is ActionKind.DISCHARGE:
        # the queue is shared, so the discharged server's backlog stays with the pool
        servers[action.target] = replace(servers[action.target], active=False, utilization=0.0)
    else:
        srv = servers[action.target]
        servers[action.target] = replace(srv, quality=_step_quality(srv.quality, kind is ActionKind.INCREASE))
    return replace(state, servers=tuple(servers))


def apply_all(state: SystemState, actions: Sequence[AdaptationAction]) -> SystemState:
    for a in actions:
        state = apply_action(state, a)
    return state


def inverse(action: AdaptationAction, enlisted_slot: int | None = None) -> AdaptationAction:
    kind = action.kind
    if kind is ActionKind.ENLIST:
        return discharge(enlisted_slot)
    if kind is ActionKind.DISCHARGE:
        return enlist()
    if kind is ActionKind.INCREASE:
        return reduce(action.target)
    return increase(action.target)


def detect_issues(state: SystemState, thr: IssueThresholds | None = None) -> list[AdaptationIssue]:
    thr = thr or IssueThresholds()
    now = state.clock_s
    issues: list[AdaptationIssue] = []
    avg_rt = state.avg_rt
    if avg_rt > thr.rt_late_s:
        issues.append(AdaptationIssue(IssueKind.LATE, None, avg_rt - thr.rt_late_s, now))
    if state.clock_s > 0:
        hourly = state.budget_spent * 3600.0 / state.clock_s
        if hourly > thr.budget_per_hour:
            issues.append(AdaptationIssue(IssueKind.OVER_BUDGET, None, hourly - thr.budget_per_hour, now))
    active = state.active_servers
    if len(active) > 1:
        for s in active:
            if s.utilization < thr.util_low:
                issues.append(AdaptationIssue(IssueKind.LOW_UTILIZATION, s.id, thr.util_low - s.utilization, now))
    if avg_rt < thr.rt_optimal_s:
        for s in active:
            if s.quality < HIGH:
                issues.append(AdaptationIssue(IssueKind.LOW_QUALITY, s.id, HIGH - s.quality, now))
    return issues  # already in criticality order, ids ascending within a kind


def predict_state(state: SystemState, actions: Sequence[AdaptationAction] = ()) -> SystemState:
    return step(apply_all(state, actions), state.last_arrivals, 1.0, 0.0)


def predict_eu(state: SystemState, actions: Sequence[AdaptationAction] = (),
               weights: "_utility.UtilityWeights | None" = None) -> float:
    """Utility one step after applying ``actions`` at the last observed arrival rate."""
    return _utility.utility(predict_state(state, actions), weights)
