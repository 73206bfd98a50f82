"""Adaptation loop: monitor, analyze, plan, execute over a request trace.

Planner kinds:

* ``StaticOnly`` / ``DynamicOnly`` -- one policy, whole problem, whole plan.
* ``CHP`` -- threshold hybrid consulted every cycle.
* ``HypeZonInternal`` -- receding-horizon hybrid embedded in the loop (I = 1).
* ``HypeZonExternal`` -- the same controller in a meta loop that runs every I
  adaptation cycles; in between, the lower loop keeps executing the standing
  plan or re-plans with the standing policy and horizons.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .hybrid import (
    UNBOUNDED,
    HybridDecision,
    Horizons,
    RtBands,
    SwitchCostMatrix,
    chp_select,
    hypezon_decide,
)
from .policies import (
    DYNAMIC,
    STATIC,
    DynamicPolicy,
    EmptyPlan,
    Plan,
    PlanningProblem,
    StaticPolicy,
    record_branching,
    record_et,
)
from .system_model import (
    AdaptationAction,
    AdaptationIssue,
    IssueThresholds,
    SystemState,
    apply_action,
    criticality_sorted,
    detect_issues,
    initial_state,
    is_applicable,
    step,
)
from .utility import UtilityLedger, UtilityWeights, utility
from .workload import RequestTrace

log = logging.getLogger(__name__)

BUCKET_S = 300


class ConfigInvalid(ValueError):
    pass


class PlannerKind(str, enum.Enum):
    STATIC_ONLY = "StaticOnly"
    DYNAMIC_ONLY = "DynamicOnly"
    CHP = "CHP"
    HZ_INTERNAL = "HypeZonInternal"
    HZ_EXTERNAL = "HypeZonExternal"

    @property
    def is_hypezon(self) -> bool:
        return self in (PlannerKind.HZ_INTERNAL, PlannerKind.HZ_EXTERNAL)


@dataclass(frozen=True)
class LoopConfig:
    planner_kind: PlannerKind = PlannerKind.STATIC_ONLY
    cycle_period_s: int = 1
    meta_interval: int = 1
    duration_s: int = 3600
    seed: int = 0
    thresholds: IssueThresholds = field(default_factory=IssueThresholds)
    bands: RtBands = field(default_factory=RtBands)
    costs: SwitchCostMatrix = field(default_factory=SwitchCostMatrix.default)
    weights: UtilityWeights = field(default_factory=UtilityWeights)
    chp_rt_thr_s: float = 1.0
    rho: float = 0.01  # seconds per utility unit of switch cost
    benefit_horizon: float = 1.0
    max_lookahead: int | None = None
    tau_static: float = 0.005
    kappa_dynamic: float = 0.002
    static_delta: float = 0.2

    def effective(self) -> "LoopConfig":
        kind = PlannerKind(self.planner_kind)
        if self.cycle_period_s < 1 or int(self.cycle_period_s) != self.cycle_period_s:
            raise ConfigInvalid("cycle_period_s must be a positive integer")
        if self.meta_interval < 1:
            raise ConfigInvalid("meta_interval must be >= 1")
        if self.duration_s < 0:
            raise ConfigInvalid("duration_s must be non-negative")
        if self.max_lookahead is not None and self.max_lookahead < 1:
            raise ConfigInvalid("max_lookahead must be >= 1")
        interval = 1 if kind in (PlannerKind.HZ_INTERNAL,) else self.meta_interval
        return replace(self, planner_kind=kind, meta_interval=interval)


@dataclass
class DeferredWork:
    pending_actions: list[AdaptationAction] = field(default_factory=list)
    unresolved_issues: list[AdaptationIssue] = field(default_factory=list)


@dataclass(frozen=True)
class SwitchRecord:
    time_s: float
    from_policy: str
    to_policy: str
    cost: float


@dataclass(frozen=True)
class RtBucket:
    start_s: int
    avg: float
    max: float
    min: float


@dataclass
class RunResult:
    planner: str
    ledger: UtilityLedger
    rt_buckets: list[RtBucket]
    switch_log: list[SwitchRecord]
    decision_log: list[HybridDecision]
    timeouts: int
    arrivals: int
    served: int
    queued: int
    executed: list[tuple[float, AdaptationAction]] = field(default_factory=list)
    superseded: list[tuple[float, AdaptationAction]] = field(default_factory=list)
    skipped: list[tuple[float, AdaptationAction]] = field(default_factory=list)
    deferred_left: list[AdaptationAction] = field(default_factory=list)
    snapshots: list[tuple] = field(default_factory=list)

    @property
    def accumulated_net(self) -> float:
        return self.ledger.net

    @property
    def conserved(self) -> bool:
        return self.arrivals == self.served + self.queued + self.timeouts

    def fingerprint(self) -> tuple:
        """Everything observable about a run, for bit-exact replay comparisons."""
        return (
            self.ledger.accumulated, self.ledger.switch_cost_total, tuple(self.ledger.series),
            tuple(self.rt_buckets), tuple(self.switch_log),
            tuple(decision_row(d) for d in self.decision_log),
            self.timeouts, self.arrivals, self.served, self.queued,
            tuple(self.executed), tuple(self.superseded), tuple(self.skipped),
            tuple(self.deferred_left), tuple(self.snapshots),
        )

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "nau.csv", ("time_s", "accumulated_net"), self.ledger.series)
        _write_csv(out / "rt_buckets.csv", ("bucket_start_s", "avg", "max", "min"),
                   [(b.start_s, b.avg, b.max, b.min) for b in self.rt_buckets])
        _write_csv(out / "switches.csv", ("time_s", "from", "to", "cost"),
                   [(s.time_s, s.from_policy, s.to_policy, s.cost) for s in self.switch_log])
        _write_csv(out / "decisions.csv", DECISION_HEADER, [decision_row(d) for d in self.decision_log])
        _write_csv(out / "state.csv", ("clock_s", "active_servers", "avg_quality", "queue_len",
                                       "rt_last", "budget_spent"), self.snapshots)


DECISION_HEADER = ("time_s", "previous", "chosen", "band", "lookahead", "planning", "execution",
                   "switch_charged", "actions", "expected_utility", "planning_time_s")


def decision_row(d: HybridDecision) -> tuple:
    h = d.horizons
    return (d.time_s, d.previous_policy or "", d.chosen_policy, d.rt_band.value if d.rt_band else "",
            h.lookahead, h.planning, "inf" if h.execution is None else h.execution, d.switch_charged,
            " ".join(str(a) for a in d.plan.actions), d.plan.expected_utility, d.plan.planning_time_s)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def rt_window_average(samples, window_cycles: int) -> float:
    if window_cycles < 1:
        raise ValueError("window must be >= 1")
    tail = list(samples)[-window_cycles:]
    return sum(tail) / len(tail) if tail else 0.0


def merge_issues(carried, detected) -> list[AdaptationIssue]:
    """Deferred issues plus fresh detections; a fresh detection replaces its stale twin."""
    by_key = {i.key: i for i in carried}
    by_key.update((i.key, i) for i in detected)
    return criticality_sorted(by_key.values())


def rt_buckets(times, rts, bucket_s: int = BUCKET_S) -> list[RtBucket]:
    groups: dict[int, list[float]] = {}
    for t, rt in zip(times, rts):
        groups.setdefault(int(t // bucket_s) * bucket_s, []).append(rt)
    return [RtBucket(k, sum(v) / len(v), max(v), min(v)) for k, v in sorted(groups.items())]


class AdaptationLoop:
    """Single-replica MAPE-K engine; ``run`` is deterministic in its inputs."""

    def __init__(self, config: LoopConfig):
        self.config = config.effective()
        c = self.config
        self.policies = {
            STATIC: StaticPolicy(_static_table(c.static_delta), c.tau_static, c.weights),
            DYNAMIC: DynamicPolicy(c.kappa_dynamic, c.weights),
        }
        kind = c.planner_kind
        if kind is PlannerKind.STATIC_ONLY:
            self.active = {STATIC: self.policies[STATIC]}
        elif kind is PlannerKind.DYNAMIC_ONLY:
            self.active = {DYNAMIC: self.policies[DYNAMIC]}
        else:
            self.active = dict(self.policies)
        self.profiles = {n: p.profile() for n, p in self.active.items()}

    # -- helpers ------------------------------------------------------------

    def _observe_plan(self, plan: Plan) -> None:
        prof = self.profiles[plan.produced_by]
        if plan.produced_by == DYNAMIC:
            prof = record_et(prof, plan.planning_time_s, max(1, plan.nodes))
            prof = record_branching(prof, plan.nodes, len(plan.issues))
        else:
            prof = record_et(prof, plan.planning_time_s, max(1, len(plan.issues)))
        self.profiles[plan.produced_by] = prof

    def _lookahead(self, issues: list[AdaptationIssue]):
        cap = self.config.max_lookahead
        if cap is None or len(issues) <= cap:
            return issues, []
        return issues[:cap], issues[cap:]

    def decide_chp(self, state: SystemState, problem: PlanningProblem, current: str | None) -> HybridDecision:
        c = self.config
        return chp_select(state, self.active, self.profiles, problem, state.rt_last,
                          c.chp_rt_thr_s, c.costs, current)

    def decide_hypezon(self, state: SystemState, problem: PlanningProblem, rt_avg_s: float,
                       current: str | None) -> HybridDecision:
        c = self.config
        return hypezon_decide(state, problem, self.active, self.profiles, c.bands, rt_avg_s,
                              c.costs, current, c.rho, c.benefit_horizon)

    # -- main loop ----------------------------------------------------------

    def run(self, trace: RequestTrace, system_init: SystemState | None = None) -> RunResult:
        c = self.config
        kind = c.planner_kind
        if trace.duration_s < c.duration_s:
            raise ConfigInvalid(f"trace covers {trace.duration_s}s, run needs {c.duration_s}s")
        state = system_init if system_init is not None else initial_state()
        period = int(c.cycle_period_s)
        n_cycles = c.duration_s // period
        per_sec = trace.per_second(n_cycles * period)
        if period == 1:
            arrivals_per_cycle = [int(x) for x in per_sec]
        else:
            arrivals_per_cycle = [int(per_sec[k * period:(k + 1) * period].sum()) for k in range(n_cycles)]

        ledger = UtilityLedger()
        deferred = DeferredWork()
        carried_issues: list[AdaptationIssue] = []  # beyond look-ahead or skipped at execution
        switch_log: list[SwitchRecord] = []
        decisions: list[HybridDecision] = []
        executed: list[tuple[float, AdaptationAction]] = []
        superseded: list[tuple[float, AdaptationAction]] = []
        skipped: list[tuple[float, AdaptationAction]] = []
        snapshots: list[tuple] = []
        rts: list[float] = []
        times: list[float] = []

        current: str | None = next(iter(self.active)) if len(self.active) == 1 else None
        standing = Horizons(0, 0, UNBOUNDED)
        latency = 0.0
        I = c.meta_interval

        for k in range(n_cycles):
            t = k * period
            # Monitor
            state = step(state, arrivals_per_cycle[k], period, latency)
            latency = 0.0
            rts.append(state.rt_last)
            times.append(t)
            ledger.record(state.clock_s, utility(state, c.weights))
            snapshots.append(state.snapshot_row())

            # Analyze
            detected = detect_issues(state, c.thresholds)
            merged = merge_issues(deferred.unresolved_issues + carried_issues, detected)
            issues, carried_issues = self._lookahead(merged)
            problem = PlanningProblem(tuple(issues), state)

            # Plan
            plan: Plan | None = None
            to_run: list[AdaptationAction] = []
            owed: dict[AdaptationAction, list[AdaptationIssue]] = {}
            n_exec = UNBOUNDED
            try:
                if kind in (PlannerKind.STATIC_ONLY, PlannerKind.DYNAMIC_ONLY):
                    if issues:
                        plan = self.active[current].plan(problem, len(issues))
                elif kind is PlannerKind.CHP:
                    if issues:
                        d = self.decide_chp(state, problem, current)
                        decisions.append(replace(d, time_s=float(t)))
                        current = self._switch(ledger, switch_log, state, t, current, d)
                        plan = d.plan
                else:
                    if k % I == 0 and issues:
                        rt_I = rt_window_average(rts, I)
                        d = self.decide_hypezon(state, problem, rt_I, current)
                        decisions.append(replace(d, time_s=float(t)))
                        current = self._switch(ledger, switch_log, state, t, current, d)
                        standing = d.horizons
                        superseded.extend((float(t), a) for a in deferred.pending_actions)
                        deferred.pending_actions = []
                        plan = d.plan
                        n_exec = d.horizons.execution
                    elif deferred.pending_actions:
                        n_exec = standing.execution
                        take = len(deferred.pending_actions) if n_exec is None else n_exec
                        to_run = deferred.pending_actions[:take]
                        owed = {a: _issues_for(deferred.unresolved_issues, [a]) for a in to_run}
                        deferred.pending_actions = deferred.pending_actions[take:]
                        # issues stay open until their actions run
                        deferred.unresolved_issues = _issues_for(deferred.unresolved_issues,
                                                                 deferred.pending_actions)
                    elif issues and current is not None:
                        size = len(issues) if standing.planning == 0 else min(standing.planning, len(issues))
                        plan = self.active[current].plan(problem, max(1, size))
                        n_exec = standing.execution
            except EmptyPlan:
                plan = None

            if plan is not None:
                self._observe_plan(plan)
                latency = plan.planning_time_s
                if n_exec is None or n_exec >= len(plan.actions):
                    to_run = list(plan.actions)
                    deferred = DeferredWork()
                else:
                    to_run = list(plan.actions[:n_exec])
                    deferred = DeferredWork(list(plan.actions[n_exec:]), plan.issues_of(n_exec))

            # Execute
            for idx, a in enumerate(to_run):
                if is_applicable(state, a):
                    state = apply_action(state, a)
                    executed.append((float(t), a))
                    continue
                skipped.append((float(t), a))
                if plan is not None:
                    back = [plan.issues[i] for i in sorted(plan.resolves[idx])]
                else:
                    back = owed.get(a, [])
                carried_issues = merge_issues(carried_issues, back)

        return RunResult(
            planner=kind.value,
            ledger=ledger,
            rt_buckets=rt_buckets(times, rts),
            switch_log=switch_log,
            decision_log=decisions,
            timeouts=state.timeouts_total,
            arrivals=state.arrivals_total,
            served=state.served_total,
            queued=state.queue_len,
            executed=executed,
            superseded=superseded,
            skipped=skipped,
            deferred_left=list(deferred.pending_actions),
            snapshots=snapshots,
        )

    def _switch(self, ledger, switch_log, state, t, current, d: HybridDecision):
        if current is not None and d.chosen_policy != current:
            ledger.charge(state.clock_s, d.switch_charged)
            switch_log.append(SwitchRecord(float(t), current, d.chosen_policy, d.switch_charged))
        return d.chosen_policy


def _issues_for(issues: list[AdaptationIssue], actions: list[AdaptationAction]) -> list[AdaptationIssue]:
    from .policies import addresses
    return [i for i in issues if any(addresses(a, i) for a in actions)]


def _static_table(delta: float):
    from .policies import default_static_table
    return default_static_table(delta)


def run(trace: RequestTrace, config: LoopConfig, system_init: SystemState | None = None) -> RunResult:
    return AdaptationLoop(config).run(trace, system_init)
