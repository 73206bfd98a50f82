"""Weighted-sum utility of the simulated news site and the accumulated-utility ledger."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

RT_MAX = 90.0


class OutOfRange(ValueError):
    pass


class NoPositiveMax(ValueError):
    pass


@dataclass(frozen=True)
class UtilityWeights:
    w_r: float = 0.4  # response time
    w_q: float = 0.2  # content quality
    w_u: float = 0.1  # server utilization
    w_c: float = 0.3  # server cost

    def __post_init__(self):
        if min(self.w_r, self.w_q, self.w_u, self.w_c) < 0:
            raise ValueError("utility weights must be non-negative")


DEFAULT_WEIGHTS = UtilityWeights()


def u_response(rt_s: float, rt_max: float = RT_MAX) -> float:
    if not 0.0 <= rt_s <= rt_max:
        raise OutOfRange(f"response time {rt_s} outside [0, {rt_max}]")
    return 1.0 - rt_s / rt_max


def utility(state, weights: UtilityWeights | None = None) -> float:
    """Utility of a system snapshot.

    One aggregate client contributes the response-time term (windowed average
    RT); every active server contributes quality + utilization - normalized cost.
    Inactive servers contribute nothing.
    """
    w = weights or DEFAULT_WEIGHTS
    cfg = state.config
    max_cost = cfg.max_cost
    total = w.w_r * u_response(state.avg_rt, cfg.rt_max)
    for s in state.servers:
        if s.active:
            u_c = s.cost_per_step / max_cost if max_cost > 0 else 0.0
            total += w.w_q * s.quality + w.w_u * s.utilization - w.w_c * u_c
    return total


@dataclass
class UtilityLedger:
    accumulated: float = 0.0
    switch_cost_total: float = 0.0
    series: list[tuple[float, float]] = field(default_factory=list)

    @property
    def net(self) -> float:
        return self.accumulated - self.switch_cost_total

    def _sample(self, time_s: float) -> None:
        if self.series and self.series[-1][0] == time_s:
            self.series[-1] = (time_s, self.net)
        elif self.series and self.series[-1][0] > time_s:
            raise ValueError(f"ledger time went backwards: {time_s} < {self.series[-1][0]}")
        else:
            self.series.append((time_s, self.net))

    def record(self, time_s: float, value: float) -> None:
        self.accumulated += value
        self._sample(time_s)

    def charge(self, time_s: float, cost: float) -> None:
        if cost < 0:
            raise ValueError("switch cost must be non-negative")
        self.switch_cost_total += cost
        self._sample(time_s)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(("time_s", "net_accumulated_utility"))
            wr.writerows(self.series)


def charge_switch(ledger: UtilityLedger, cost: float, time_s: float | None = None) -> UtilityLedger:
    """Charge a policy-switch cost; the ledger is modified in place and returned."""
    if time_s is None:
        time_s = ledger.series[-1][0] if ledger.series else 0.0
    ledger.charge(time_s, cost)
    return ledger


def normalize_nau(finals: Mapping[str, float]) -> dict[str, float]:
    if not finals:
        raise NoPositiveMax("no planners to normalize")
    best = max(finals.values())
    if not best > 0:
        raise NoPositiveMax(f"maximum accumulated utility {best} is not positive")
    return {k: v / best for k, v in finals.items()}
