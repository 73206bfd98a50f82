import dataclasses

import pytest

from hybridsim.cli import main
from hybridsim.harness import (
    ComparisonTable,
    ConfigError,
    ExperimentConfig,
    SweepRow,
    TraceSource,
    load_config,
    parse_config_text,
    parse_planner,
    run_experiment,
    run_replicas,
    sensitivity_sweep,
)
from hybridsim.loop import PlannerKind
from hybridsim.workload import SlashdotParams

SMALL = ExperimentConfig(
    trace=TraceSource(synth=SlashdotParams(10, 2, 10, 120, 900)),
    replicas=2,
    duration_s=900,
)


def test_parse_config_text_full():
    cfg = parse_config_text("""
# comment
trace.base_rate = 12
trace.surge_count = 2
trace.surge_duration_s = 100
trace.duration_s = 1200
run.planners = Static, HZe
run.replicas = 3
run.seed = 7
run.duration_s = 1200
run.meta_interval = 4   ; inline comment
sweep.intervals = 1, 3, 9
weights.w_r = 0.5
thresholds.util_low = 0.25
bands.rt_high_s = 2.0
costs.static_to_dynamic = 150
hybrid.rho = 0.02
policies.kappa_dynamic = 0.001
system.base_service_rate = 40
system.n_max = 6
""")
    assert cfg.trace.synth.base_rate == 12 and cfg.trace.synth.surge_count == 2
    assert cfg.planners == (PlannerKind.STATIC_ONLY, PlannerKind.HZ_EXTERNAL)
    assert (cfg.replicas, cfg.seed, cfg.meta_interval) == (3, 7, 4)
    assert cfg.meta_intervals == (1, 3, 9)
    assert cfg.weights.w_r == 0.5 and cfg.thresholds.util_low == 0.25
    assert cfg.bands.rt_high_s == 2.0 and cfg.costs.cost("Static", "Dynamic") == 150
    assert cfg.rho == 0.02 and cfg.kappa_dynamic == 0.001
    assert cfg.system.base_service_rate == 40 and cfg.system.n_max == 6


@pytest.mark.parametrize("text", [
    "run.replicas = 0",
    "bogus.key = 1",
    "run.planners = Nope",
    "run.replicas = many",
    "trace.surge_amplitude = 1.0",
    "this line has no separator",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_config_trace_file_relative(tmp_path):
    (tmp_path / "t.csv").write_text("0,1\n1,2\n")
    (tmp_path / "c.cfg").write_text("trace.file = t.csv\nrun.duration_s = 2\n")
    cfg = load_config(tmp_path / "c.cfg")
    assert cfg.trace.load(0).total_arrivals == 3


def test_planner_aliases():
    assert parse_planner("hz_i") is PlannerKind.HZ_INTERNAL
    assert parse_planner("DynamicOnly") is PlannerKind.DYNAMIC_ONLY


def test_singleton_table(tmp_path):
    cfg = dataclasses.replace(SMALL, planners=(PlannerKind.STATIC_ONLY,), replicas=1)
    table = run_experiment(cfg, tmp_path)
    assert table.value("StaticOnly") == 1.0
    assert (tmp_path / "StaticOnly" / "nau.csv").exists()
    assert (tmp_path / "summary.txt").read_text().startswith("trace")


def test_identical_seeds_identical_replicas():
    cfg = dataclasses.replace(SMALL, trace=TraceSource(path=None, synth=SlashdotParams(10, 2, 10, 120, 900)))
    a = run_replicas(cfg, PlannerKind.CHP)
    b = run_replicas(cfg, PlannerKind.CHP)
    assert a.nets == b.nets


def test_file_trace_replicas_identical(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("".join(f"{i},{5 if i < 50 else 90}\n" for i in range(120)))
    cfg = dataclasses.replace(SMALL, trace=TraceSource(path=str(p)), duration_s=120, replicas=3)
    nets = run_replicas(cfg, PlannerKind.DYNAMIC_ONLY).nets
    assert nets[0] == nets[1] == nets[2]


def test_table_roundtrip_and_normalization(tmp_path):
    table = run_experiment(SMALL, tmp_path)
    back = ComparisonTable.from_csv(tmp_path / "comparison.csv")
    assert back == table
    assert max(r.nau for r in table.rows) == 1.0
    replicas = (tmp_path / "replicas.csv").read_text().splitlines()
    assert len(replicas) == 1 + len(SMALL.planners) * SMALL.replicas


def test_sweep_single_interval_and_roundtrip(tmp_path):
    row = sensitivity_sweep(dataclasses.replace(SMALL, replicas=1), [1], tmp_path)
    assert row.nau == {1: 1.0}
    assert SweepRow.from_csv(tmp_path / "sweep.csv") == row


def test_sweep_interval_one_matches_internal():
    cfg = dataclasses.replace(SMALL, replicas=2)
    row = sensitivity_sweep(cfg, [1, 4])
    internal = run_replicas(cfg, PlannerKind.HZ_INTERNAL).mean
    assert row.means[1] == internal


def test_sweep_rejects_bad_intervals():
    with pytest.raises(ConfigError):
        sensitivity_sweep(SMALL, [0])


# --- CLI ---------------------------------------------------------------------

def _cfg_file(tmp_path, extra=""):
    p = tmp_path / "exp.cfg"
    p.write_text("trace.surge_count = 1\ntrace.surge_duration_s = 60\ntrace.duration_s = 300\n"
                 "run.duration_s = 300\nrun.replicas = 1\n" + extra)
    return p


def test_cli_run(tmp_path, capsys):
    cfg = _cfg_file(tmp_path)
    rc = main(["run", "--config", str(cfg), "--planner", "StaticOnly", "--planner", "CHP",
               "--out", str(tmp_path / "out"), "--seed", "3"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "StaticOnly" in out and "CHP" in out
    assert (tmp_path / "out" / "comparison.csv").exists()


def test_cli_sweep(tmp_path, capsys):
    rc = main(["sweep", "--config", str(_cfg_file(tmp_path)), "--intervals", "1,2"])
    assert rc == 0
    assert "NAU" in capsys.readouterr().out


def test_cli_synth(tmp_path):
    out = tmp_path / "trace.csv"
    assert main(["synth", "--base-rate", "5", "--surges", "2", "--surge-duration", "30",
                 "--duration", "200", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 200


def test_cli_config_error_exit_code(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["run", "--config", str(_cfg_file(tmp_path, "nonsense.key = 3\n"))]) == 2
    assert main(["synth", "--base-rate", "5", "--surges", "1", "--amplitude", "1", "--out",
                 str(tmp_path / "x.csv")]) == 2


def test_cli_trace_shorter_than_run_is_config_error(tmp_path):
    bad = _cfg_file(tmp_path, "run.duration_s = 600\n")
    assert main(["run", "--config", str(bad)]) == 2


def test_cli_runtime_error_exit_code(tmp_path):
    (tmp_path / "broken.csv").write_text("0,1\n1,x\n")
    cfg = tmp_path / "b.cfg"
    cfg.write_text("trace.file = broken.csv\nrun.duration_s = 2\nrun.replicas = 1\n")
    assert main(["run", "--config", str(cfg)]) == 3


def test_cli_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--config", "x", "--intervals", "0"])
    assert exc.value.code == 2
