"""Experiment runner: config loading, replica averaging, NAU tables, interval sweeps.

Config files are flat ``section.key = value`` lines; ``#`` and ``;`` start
comments.  See README.md for the full key list.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .hybrid import RtBands, SwitchCostMatrix
from .loop import ConfigInvalid, LoopConfig, PlannerKind, RunResult, run
from .policies import DYNAMIC, STATIC
from .system_model import IssueThresholds, SystemConfig, initial_state
from .utility import UtilityWeights, normalize_nau
from .workload import RequestTrace, SlashdotParams, TraceFormat, parse_trace, synthesize_slashdot

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


PLANNER_ALIASES = {
    "static": PlannerKind.STATIC_ONLY,
    "staticonly": PlannerKind.STATIC_ONLY,
    "dynamic": PlannerKind.DYNAMIC_ONLY,
    "dynamiconly": PlannerKind.DYNAMIC_ONLY,
    "chp": PlannerKind.CHP,
    "hzi": PlannerKind.HZ_INTERNAL,
    "hz_i": PlannerKind.HZ_INTERNAL,
    "hypezoninternal": PlannerKind.HZ_INTERNAL,
    "hze": PlannerKind.HZ_EXTERNAL,
    "hz_e": PlannerKind.HZ_EXTERNAL,
    "hypezonexternal": PlannerKind.HZ_EXTERNAL,
}

ALL_PLANNERS = tuple(PlannerKind)


def parse_planner(name: str) -> PlannerKind:
    try:
        return PLANNER_ALIASES[name.strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown planner {name!r}") from None


@dataclass(frozen=True)
class TraceSource:
    path: str | None = None
    format: TraceFormat = TraceFormat.PER_SECOND_CSV
    synth: SlashdotParams | None = None
    label: str = "slashdot"

    def load(self, seed: int) -> RequestTrace:
        """The replica's trace: a file is fixed, a synthetic trace is re-drawn per seed."""
        if self.path is not None:
            return parse_trace(self.path, self.format, self.label)
        return synthesize_slashdot(dataclasses.replace(self.synth, seed=seed), self.label)


@dataclass(frozen=True)
class ExperimentConfig:
    trace: TraceSource = field(default_factory=lambda: TraceSource(
        synth=SlashdotParams(10.0, 3, 10.0, 300, 3600)))
    planners: tuple[PlannerKind, ...] = ALL_PLANNERS
    replicas: int = 25
    seed: int = 0
    duration_s: int = 3600
    cycle_period_s: int = 1
    meta_interval: int = 5
    meta_intervals: tuple[int, ...] = (1, 2, 3, 4, 5, 10, 15)
    weights: UtilityWeights = field(default_factory=UtilityWeights)
    thresholds: IssueThresholds = field(default_factory=IssueThresholds)
    bands: RtBands = field(default_factory=RtBands)
    costs: SwitchCostMatrix = field(default_factory=SwitchCostMatrix.default)
    system: SystemConfig = field(default_factory=SystemConfig)
    rho: float = 0.01
    benefit_horizon: float = 1.0
    chp_rt_thr_s: float = 1.0
    max_lookahead: int | None = None
    tau_static: float = 0.005
    kappa_dynamic: float = 0.002
    static_delta: float = 0.2
    out_dir: str | None = None

    def __post_init__(self):
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if not self.planners:
            raise ConfigError("planner list is empty")
        if any(i < 1 for i in self.meta_intervals):
            raise ConfigError("meta intervals must be positive")

    def loop_config(self, kind: PlannerKind, seed: int, meta_interval: int | None = None) -> LoopConfig:
        return LoopConfig(
            planner_kind=kind,
            cycle_period_s=self.cycle_period_s,
            meta_interval=self.meta_interval if meta_interval is None else meta_interval,
            duration_s=self.duration_s,
            seed=seed,
            thresholds=self.thresholds,
            bands=self.bands,
            costs=self.costs,
            weights=self.weights,
            chp_rt_thr_s=self.chp_rt_thr_s,
            rho=self.rho,
            benefit_horizon=self.benefit_horizon,
            max_lookahead=self.max_lookahead,
            tau_static=self.tau_static,
            kappa_dynamic=self.kappa_dynamic,
            static_delta=self.static_delta,
        )


# --- config file -------------------------------------------------------------

def _floats(text: str) -> float:
    return float(text)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "inf", "unbounded") else int(text)


_SYSTEM_KEYS = {f.name: f.type for f in dataclasses.fields(SystemConfig)}


def parse_config_text(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case
    try:
        cp.read_string("[root]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    raw = dict(cp["root"])
    kw: dict = {}
    synth: dict = {"base_rate": 10.0, "surge_count": 3, "surge_amplitude": 10.0,
                   "surge_duration_s": 300, "duration_s": 3600}
    trace_kw: dict = {}
    weights: dict = {}
    thresholds: dict = {}
    bands: dict = {}
    costs = {"dynamic_to_static": 2.0, "static_to_dynamic": 200.0}
    system: dict = {}

    scalar = {
        "run.replicas": ("replicas", int), "run.seed": ("seed", int),
        "run.duration_s": ("duration_s", int), "run.cycle_period_s": ("cycle_period_s", int),
        "run.meta_interval": ("meta_interval", int), "run.max_lookahead": ("max_lookahead", _opt_int),
        "run.out": ("out_dir", str), "sweep.intervals": ("meta_intervals", _ints),
        "hybrid.rho": ("rho", float), "hybrid.benefit_horizon": ("benefit_horizon", float),
        "hybrid.chp_rt_thr_s": ("chp_rt_thr_s", float),
        "policies.tau_static": ("tau_static", float), "policies.kappa_dynamic": ("kappa_dynamic", float),
        "policies.static_delta": ("static_delta", float),
    }
    try:
        for key, value in raw.items():
            section, _, name = key.partition(".")
            if key in scalar:
                attr, conv = scalar[key]
                kw[attr] = conv(value)
            elif key == "run.planners":
                kw["planners"] = tuple(parse_planner(p) for p in value.split(",") if p.strip())
            elif section == "trace" and name in ("base_rate", "surge_amplitude"):
                synth[name] = float(value)
            elif section == "trace" and name in ("surge_count", "surge_duration_s", "duration_s"):
                synth[name] = int(value)
            elif key == "trace.file":
                p = Path(value)
                trace_kw["path"] = str(p if p.is_absolute() or base_dir is None else base_dir / p)
            elif key == "trace.format":
                trace_kw["format"] = TraceFormat(value)
            elif key == "trace.label":
                trace_kw["label"] = value
            elif section == "weights" and name in ("w_r", "w_q", "w_u", "w_c"):
                weights[name] = float(value)
            elif section == "thresholds" and name in ("rt_late_s", "budget_per_hour", "util_low", "rt_optimal_s"):
                thresholds[name] = float(value)
            elif section == "bands" and name in ("rt_optimal_s", "rt_high_s"):
                bands[name] = float(value)
            elif section == "costs" and name in costs:
                costs[name] = float(value)
            elif section == "system" and name in _SYSTEM_KEYS:
                system[name] = int(value) if name in ("n_max", "rt_window", "initial_active") else float(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        trace = TraceSource(synth=SlashdotParams(**synth), **trace_kw)
        if trace.path is None:
            trace.synth.validate()
        return ExperimentConfig(
            trace=trace,
            weights=UtilityWeights(**weights),
            thresholds=IssueThresholds(**thresholds),
            bands=RtBands(**bands),
            costs=SwitchCostMatrix.default(costs["dynamic_to_static"], costs["static_to_dynamic"]),
            system=SystemConfig(**system),
            **kw,
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config_text(text, p.parent)


# --- tables ------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    trace: str
    planner: str
    mean_net: float
    stderr: float
    replicas: int
    nau: float


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow]

    def value(self, planner: str, trace: str | None = None) -> float:
        for r in self.rows:
            if r.planner == planner and (trace is None or r.trace == trace):
                return r.nau
        raise KeyError(planner)

    def row(self, planner: str) -> ComparisonRow:
        return next(r for r in self.rows if r.planner == planner)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("trace", "planner", "mean_net", "stderr", "replicas", "nau"))
            for r in self.rows:
                w.writerow((r.trace, r.planner, repr(r.mean_net), repr(r.stderr), r.replicas, repr(r.nau)))

    @classmethod
    def from_csv(cls, path: str | Path) -> "ComparisonTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [ComparisonRow(d["trace"], d["planner"], float(d["mean_net"]), float(d["stderr"]),
                                  int(d["replicas"]), float(d["nau"])) for d in csv.DictReader(fh)]
        return cls(rows)

    def format(self) -> str:
        lines = [f"{'trace':<12}{'planner':<18}{'mean_net':>12}{'stderr':>10}{'NAU':>8}"]
        for r in self.rows:
            lines.append(f"{r.trace:<12}{r.planner:<18}{r.mean_net:>12.2f}{r.stderr:>10.2f}{r.nau:>8.3f}")
        return "\n".join(lines)


def stderr(values: Sequence[float]) -> float:
    return statistics.stdev(values) / math.sqrt(len(values)) if len(values) > 1 else 0.0


@dataclass
class ReplicaSet:
    """Per-replica net utilities for one planner, in replica order."""
    planner: str
    nets: list[float]
    first: RunResult | None = None

    @property
    def mean(self) -> float:
        return statistics.fmean(self.nets)


def run_replicas(config: ExperimentConfig, kind: PlannerKind, meta_interval: int | None = None,
                 on_result: Callable[[int, RunResult], None] | None = None) -> ReplicaSet:
    nets = []
    first = None
    for r in range(config.replicas):
        seed = config.seed + r
        trace = config.trace.load(seed)
        result = run(trace, config.loop_config(kind, seed, meta_interval), initial_state(config.system))
        if not result.conserved:
            raise RuntimeError(f"request conservation violated in {kind.value} replica {r}")
        nets.append(result.ledger.net)
        if first is None:
            first = result
        if on_result is not None:
            on_result(r, result)
    return ReplicaSet(kind.value, nets, first)


def planner_label(kind: PlannerKind) -> str:
    return kind.value


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> ComparisonTable:
    out = Path(out_dir) if out_dir is not None else (Path(config.out_dir) if config.out_dir else None)
    sets: dict[str, ReplicaSet] = {}
    replica_fh = None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        replica_fh = open(out / "replicas.csv", "w", newline="", encoding="utf-8")
        writer = csv.writer(replica_fh)
        writer.writerow(("planner", "replica", "seed", "net", "accumulated", "switch_cost", "timeouts"))
    try:
        for kind in config.planners:
            label = planner_label(kind)

            def flush(r: int, res: RunResult, label=label) -> None:
                if writer is not None:
                    writer.writerow((label, r, config.seed + r, repr(res.ledger.net), repr(res.ledger.accumulated),
                                     repr(res.ledger.switch_cost_total), res.timeouts))
                    replica_fh.flush()

            sets[label] = run_replicas(config, kind, on_result=flush)
            if out is not None:
                sets[label].first.write(out / label)
            log.info("%s: mean net %.3f", label, sets[label].mean)
    finally:
        if replica_fh is not None:
            replica_fh.close()
    table = comparison_from_sets(config.trace.label, sets)
    if out is not None:
        table.to_csv(out / "comparison.csv")
        (out / "summary.txt").write_text(table.format() + "\n", encoding="utf-8")
    return table


def comparison_from_sets(trace_label: str, sets: dict[str, ReplicaSet]) -> ComparisonTable:
    nau = normalize_nau({k: s.mean for k, s in sets.items()})
    return ComparisonTable([
        ComparisonRow(trace_label, k, s.mean, stderr(s.nets), len(s.nets), nau[k]) for k, s in sets.items()
    ])


@dataclass
class SweepRow:
    means: dict[int, float]
    nau: dict[int, float]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("interval", "mean_net", "nau"))
            for i in self.means:
                w.writerow((i, repr(self.means[i]), repr(self.nau[i])))

    @classmethod
    def from_csv(cls, path: str | Path) -> "SweepRow":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls({int(r["interval"]): float(r["mean_net"]) for r in rows},
                   {int(r["interval"]): float(r["nau"]) for r in rows})


def sensitivity_sweep(config: ExperimentConfig, intervals: Sequence[int] | None = None,
                      out_dir: str | Path | None = None) -> SweepRow:
    """HypeZonExternal at each sampling interval; I = 1 is the internal design."""
    intervals = tuple(config.meta_intervals if intervals is None else intervals)
    if not intervals or any(i < 1 for i in intervals):
        raise ConfigError("intervals must be positive integers")
    means = {i: run_replicas(config, PlannerKind.HZ_EXTERNAL, meta_interval=i).mean for i in intervals}
    row = SweepRow(means, normalize_nau(means))
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        row.to_csv(Path(out_dir) / "sweep.csv")
    return row


__all__ = [
    "ConfigError", "ConfigInvalid", "ExperimentConfig", "TraceSource", "ComparisonRow", "ComparisonTable",
    "SweepRow", "ReplicaSet", "load_config", "parse_config_text", "run_experiment", "run_replicas",
    "sensitivity_sweep", "parse_planner", "STATIC", "DYNAMIC",
]
