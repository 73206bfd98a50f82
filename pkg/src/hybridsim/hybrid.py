"""Coordinating hybrid planners over a set of black-box policies.

``chp_select`` is the deterministic threshold baseline.  ``hypezon_decide`` is
the receding-horizon controller: it classifies the sampled response time into
optimal / in-range / high, shrinks the planning horizon until some policy can
plan in time, and picks how many plan actions to execute before re-planning.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

from .policies import STATIC, DYNAMIC, Plan, PlanningProblem, PolicyProfile, estimate_et
from .system_model import SystemState

UNBOUNDED = None  # execution horizon: run the whole plan


class RtBand(str, enum.Enum):
    OPTIMAL = "Optimal"
    IN_RANGE = "InRange"
    HIGH = "High"


@dataclass
class RtBands:
    rt_optimal_s: float = 0.1
    rt_high_s: float = 1.0

    def __post_init__(self):
        if not 0 < self.rt_optimal_s < self.rt_high_s:
            raise ValueError("need 0 < rt_optimal_s < rt_high_s")


@dataclass(frozen=True)
class Horizons:
    lookahead: int
    planning: int
    execution: int | None = UNBOUNDED

    def __post_init__(self):
        if self.lookahead < 0 or self.planning < 0 or self.planning > self.lookahead:
            raise ValueError(f"invalid horizons {self}")
        if self.execution is not None and not 1 <= self.execution <= max(1, self.planning):
            raise ValueError(f"invalid execution horizon {self}")


@dataclass(frozen=True)
class SwitchCostMatrix:
    costs: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        for (a, b), c in self.costs.items():
            if c < 0:
                raise ValueError("switch costs must be non-negative")
            if a == b and c != 0:
                raise ValueError("switching to the same policy must be free")

    def cost(self, from_policy: str | None, to_policy: str) -> float:
        if from_policy is None or from_policy == to_policy:
            return 0.0
        return float(self.costs.get((from_policy, to_policy), 0.0))

    @classmethod
    def default(cls, dynamic_to_static: float = 2.0, static_to_dynamic: float = 200.0) -> "SwitchCostMatrix":
        return cls({(DYNAMIC, STATIC): dynamic_to_static, (STATIC, DYNAMIC): static_to_dynamic})


@dataclass(frozen=True)
class HybridDecision:
    chosen_policy: str
    plan: Plan
    horizons: Horizons
    switch_charged: float
    rt_band: RtBand | None
    previous_policy: str | None = None
    time_s: float = 0.0


def classify_rt(rt_avg_s: float, bands: RtBands) -> RtBand:
    if rt_avg_s < 0:
        raise ValueError("response time must be non-negative")
    if rt_avg_s < bands.rt_optimal_s:
        return RtBand.OPTIMAL
    if rt_avg_s > bands.rt_high_s:
        return RtBand.HIGH
    return RtBand.IN_RANGE


def _argmax(scores: Mapping[str, float]) -> str:
    # first key wins ties, so callers list the static policy first
    best = None
    for k, v in scores.items():
        if best is None or v > scores[best]:
            best = k
    return best


def _argmin(scores: Mapping[str, float]) -> str:
    return _argmax({k: -v for k, v in scores.items()})


def _ordered(policies: Mapping[str, object]) -> list[str]:
    names = list(policies)
    return sorted(names, key=lambda n: (n != STATIC, names.index(n)))


def chp_select(state: SystemState, policies: Mapping[str, object], profiles: Mapping[str, PolicyProfile],
               problem: PlanningProblem, rt_curr_s: float, rt_thr_s: float = 1.0,
               costs: SwitchCostMatrix | None = None, prev_policy: str | None = None) -> HybridDecision:
    if not policies:
        raise ValueError("need at least one policy")
    names = _ordered(policies)
    size = len(problem)
    if len(names) == 1:
        chosen = names[0]
    elif rt_curr_s > rt_thr_s:
        chosen = _argmin({n: estimate_et(profiles[n], size) for n in names})
    else:
        chosen = _argmax({n: profiles[n].eu_estimator(problem, size) for n in names})
    plan = policies[chosen].plan(problem, max(1, size))
    charge = (costs or SwitchCostMatrix()).cost(prev_policy, chosen)
    return HybridDecision(chosen, plan, Horizons(size, size, UNBOUNDED), charge, None, prev_policy, state.clock_s)


def adjust_planning_horizon(current: Horizons, profiles: Mapping[str, PolicyProfile] | None = None,
                            band: RtBand | None = None, problem: PlanningProblem | None = None) -> Horizons:
    """Halve the planning horizon; the problem prefix keeps the most critical issues."""
    if current.planning < 1:
        raise ValueError("planning horizon must be >= 1")
    planning = max(1, math.ceil(current.planning / 2))
    execution = current.execution
    if execution is not None:
        execution = min(execution, planning)
    return Horizons(current.lookahead, planning, execution)


def adjust_execution_horizon(planning_size: int, band: RtBand = RtBand.IN_RANGE) -> int:
    if planning_size < 1:
        raise ValueError("planning_size must be >= 1")
    return math.ceil(planning_size / 2)


def hypezon_decide(state: SystemState, problem: PlanningProblem, policies: Mapping[str, object],
                   profiles: Mapping[str, PolicyProfile], bands: RtBands, rt_window_avg_s: float,
                   costs: SwitchCostMatrix, prev_policy: str | None, rho: float = 0.01,
                   benefit_horizon: float = 1.0) -> HybridDecision:
    """One receding-horizon hybrid planning decision.

    ``rho`` converts switch cost (utility units) into seconds for the in-range
    timing check.  EU comparisons subtract the switch cost spread over
    ``benefit_horizon`` cycles (1 means the raw cost).
    """
    if len(problem) == 0:
        raise ValueError("planning problem is empty")
    names = _ordered(policies)
    l = len(problem)
    horizons = Horizons(l, l, UNBOUNDED)
    band = classify_rt(rt_window_avg_s, bands)

    def net_eu(n: str, size: int) -> float:
        return profiles[n].eu_estimator(problem, size) - costs.cost(prev_policy, n) / benefit_horizon

    chosen = None
    if band is RtBand.OPTIMAL:
        chosen = _argmax({n: net_eu(n, l) for n in names})
    elif band is RtBand.IN_RANGE:
        while True:
            size = horizons.planning
            feasible = [
                n for n in names
                if rho * costs.cost(prev_policy, n) + estimate_et(profiles[n], size) + rt_window_avg_s
                <= bands.rt_high_s
            ]
            if feasible:
                chosen = _argmax({n: net_eu(n, size) for n in feasible})
                horizons = Horizons(l, size, adjust_execution_horizon(size, band))
                break
            if size == 1:
                break
            horizons = adjust_planning_horizon(horizons, profiles, band, problem)
    if chosen is None:
        # high band, or nothing fits even a single-issue horizon
        horizons = Horizons(l, 1, 1)
        chosen = _argmin({n: estimate_et(profiles[n], 1) for n in names})

    plan = policies[chosen].plan(problem, horizons.planning)
    return HybridDecision(chosen, plan, horizons, costs.cost(prev_policy, chosen), band,
                          prev_policy, state.clock_s)
