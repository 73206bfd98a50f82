"""Hybrid planning simulator for a self-adaptive elastic web system."""

from .hybrid import RtBands, SwitchCostMatrix, chp_select, hypezon_decide
from .loop import LoopConfig, PlannerKind, RunResult, run
from .policies import DynamicPolicy, StaticPolicy
from .system_model import SystemConfig, SystemState, initial_state, step
from .utility import UtilityLedger, UtilityWeights, normalize_nau, utility
from .workload import RequestTrace, SlashdotParams, parse_trace, synthesize_slashdot

__all__ = [
    "RtBands", "SwitchCostMatrix", "chp_select", "hypezon_decide",
    "LoopConfig", "PlannerKind", "RunResult", "run",
    "DynamicPolicy", "StaticPolicy",
    "SystemConfig", "SystemState", "initial_state", "step",
    "UtilityLedger", "UtilityWeights", "normalize_nau", "utility",
    "RequestTrace", "SlashdotParams", "parse_trace", "synthesize_slashdot",
]
