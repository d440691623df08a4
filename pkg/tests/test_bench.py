import csv
import dataclasses
from importlib.resources import files

import numpy as np
import pytest

from scenario_irl.bench import (ExperimentConfig, SweepResult, aggregate, build_context, certify_report,
                                emit_outputs, empirical_confidence, read_records, run_sweep, theory_curves,
                                wilson_interval, write_records)
from scenario_irl.cli import main
from scenario_irl.complexity import scenario_mass, scenario_size_campi

SMOKE = files("scenario_irl") / "configs" / "smoke.toml"


@pytest.fixture(scope="module")
def smoke_cfg():
    return dataclasses.replace(ExperimentConfig.load(SMOKE), N=[100, 300], repetitions=2)


@pytest.fixture(scope="module")
def smoke_ctx(smoke_cfg):
    return build_context(smoke_cfg)


@pytest.fixture(scope="module")
def smoke_result(smoke_cfg, smoke_ctx):
    return run_sweep(smoke_cfg, smoke_ctx)


def _records_without_time(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    t = rows[0].index("wall_time")
    return [r[:t] + r[t + 1:] for r in rows]


def test_single_cell_gives_one_record(smoke_cfg, smoke_ctx):
    cfg = dataclasses.replace(smoke_cfg, N=[100], repetitions=1)
    res = run_sweep(cfg, smoke_ctx)
    assert len(res.records) == 1
    rec = res.records[0]
    assert rec["status"] == "optimal" and rec["N"] == 100 and rec["rep"] == 0


def test_record_count_and_columns(smoke_result, smoke_cfg):
    assert len(smoke_result.records) == len(smoke_cfg.settings()) * smoke_cfg.repetitions
    cols = smoke_result.columns()
    assert cols[-1] == "wall_time" and "member@1e-06" in cols and "certified@1e-05" in cols
    for r in smoke_result.records:
        assert r["eps_tilde"] >= 0 and r["l1_alpha"] <= smoke_cfg.theta + 1e-8


def test_nested_eps_tilde_per_repetition(smoke_result):
    by_rep = {}
    for r in smoke_result.records:
        by_rep.setdefault(r["rep"], []).append((r["N"], r["eps_tilde"]))
    for rows in by_rep.values():
        vals = [e for _, e in sorted(rows)]
        assert all(b >= a - 1e-10 for a, b in zip(vals, vals[1:]))


def test_deterministic_records(smoke_cfg, smoke_ctx, smoke_result, tmp_path):
    again = run_sweep(smoke_cfg, smoke_ctx)
    a = write_records(smoke_result, tmp_path / "a.csv")
    b = write_records(again, tmp_path / "b.csv")
    assert _records_without_time(a) == _records_without_time(b)


def test_workers_do_not_change_records(smoke_cfg, smoke_ctx, smoke_result, tmp_path):
    par = run_sweep(dataclasses.replace(smoke_cfg, workers=2), smoke_ctx)
    a = write_records(smoke_result, tmp_path / "a.csv")
    b = write_records(par, tmp_path / "b.csv")
    assert _records_without_time(a) == _records_without_time(b)


def test_confidence_extremes(smoke_result):
    recs = [dict(r, **{"member@1e-06": True}) for r in smoke_result.records]
    assert empirical_confidence(recs, 100, 1e-6)["fraction"] == 1.0
    recs = [dict(r, **{"member@1e-06": False}) for r in smoke_result.records]
    c = empirical_confidence(recs, 100, 1e-6)
    assert c["fraction"] == 0.0 and c["wilson_low"] == 0.0 and c["wilson_high"] > 0
    with pytest.raises(ValueError):
        empirical_confidence(smoke_result, 12345, 1e-6)
    with pytest.raises(KeyError):
        empirical_confidence(smoke_result, 100, 0.5)
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


def test_wilson_interval_values():
    lo, hi = wilson_interval(90, 100)
    assert lo == pytest.approx(0.8256, abs=1e-4) and hi == pytest.approx(0.9448, abs=1e-4)


def test_outputs(smoke_result, smoke_cfg, tmp_path):
    out = emit_outputs(smoke_result, smoke_cfg, tmp_path / "out")
    names = sorted(p.name for p in out)
    assert names == ["aggregate.csv", "confidence_vs_N.svg", "eps_tilde_vs_N.svg", "records.csv",
                     "summary.json", "theory_N_vs_eps.svg", "value_gap.svg"]
    agg = read_records(tmp_path / "out" / "aggregate.csv")
    assert len(agg) == len(smoke_cfg.settings())
    assert len(read_records(tmp_path / "out" / "records.csv")) == len(smoke_result.records)
    svg = (tmp_path / "out" / "theory_N_vs_eps.svg").read_bytes()
    emit_outputs(smoke_result, smoke_cfg, tmp_path / "again")
    assert (tmp_path / "again" / "theory_N_vs_eps.svg").read_bytes() == svg
    assert (tmp_path / "again" / "aggregate.csv").read_bytes() == (tmp_path / "out" / "aggregate.csv").read_bytes()


def test_empty_result_writes_headers_only(smoke_cfg, tmp_path):
    empty = SweepResult(smoke_cfg, smoke_cfg.settings(), smoke_cfg.probe_eps())
    out = emit_outputs(empty, smoke_cfg, tmp_path)
    assert not any(p.suffix == ".svg" for p in out)
    lines = (tmp_path / "records.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("mode,N,k")
    assert len((tmp_path / "aggregate.csv").read_text().splitlines()) == 1
    assert aggregate(empty) == []


def test_theory_curves_are_scenario_bounds(smoke_cfg):
    eps = np.array([0.2, 0.5, 0.99])
    curves = theory_curves(smoke_cfg, eps, deltas=(0.05, 0.1))
    for d, (ev, nv) in curves.items():
        for e, n in zip(ev, nv):
            inp = smoke_cfg.certificate_inputs(float(e), d)
            assert n == scenario_size_campi(13, scenario_mass(inp), d)
        assert np.all(np.diff(nv) <= 0)


def test_campi_setting_resolution(smoke_cfg):
    cfg = dataclasses.replace(smoke_cfg, N=[100, "campi"])
    assert cfg.resolved_N() == [100, cfg.campi_N()]
    assert cfg.campi_N() == certify_report(cfg)["N_campi"]
    assert 0.99 in cfg.probe_eps()


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"sweep": {"N": [10], "bogus": 1}})
    with pytest.raises(ValueError):
        ExperimentConfig(repetitions=0)
    with pytest.raises(ValueError):
        ExperimentConfig(mode="sampled")
    with pytest.raises(KeyError):
        ExperimentConfig(cost_basis="missing")
    cfg = ExperimentConfig.load(SMOKE).paper_scale()
    assert cfg.gamma == 0.99 and cfg.repetitions == 1000


def test_sampled_mode_smoke(smoke_cfg, tmp_path):
    cfg = dataclasses.replace(smoke_cfg, mode="sampled", N=[], sampled_pairs=[[50, 5], [100, 10]],
                              repetitions=1, horizon=30)
    res = run_sweep(cfg)
    assert [(r["N"], r["k"], r["m"], r["n"]) for r in res.records] == [(50, 5, 5, 5), (100, 10, 10, 10)]
    assert all(r["status"] == "optimal" for r in res.records)
    assert res.records[0]["eps_tilde"] <= res.records[1]["eps_tilde"] + 1e-10


def test_cli_round_trip(smoke_result, smoke_cfg, tmp_path, capsys):
    emit_outputs(smoke_result, smoke_cfg, tmp_path)
    assert main(["bench", "confidence", str(tmp_path), "--eps", "1e-6"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("N,k,eps,fraction") and len(out) == 1 + len(smoke_cfg.settings())
    assert main(["bench", "confidence", str(tmp_path / "records.csv"), "--eps", "1e-5", "--N", "100",
                 "--certified"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 2


def test_cli_certify_and_errors(tmp_path, capsys):
    assert main(["certify", str(SMOKE), "--eps", "0.99"]) == 0
    out = capsys.readouterr().out
    assert "N_campi" in out and "key,value" in out
    assert main(["certify", str(SMOKE), "--csv", str(tmp_path / "c.csv")]) == 0
    assert (tmp_path / "c.csv").read_text().startswith("key,value")
    capsys.readouterr()
    assert main(["certify", str(tmp_path / "missing.toml")]) == 2
    assert "irl: error:" in capsys.readouterr().err
    assert main(["bench", "confidence", str(tmp_path), "--eps", "1e-6"]) == 2


def test_cli_tabular_fuzz(capsys):
    assert main(["tabular", "fuzz", "--seeds", "30"]) == 0
    assert capsys.readouterr().out.startswith("instances=30 agree=30")


def test_cli_bench_run(smoke_cfg, tmp_path, capsys):
    assert main(["bench", "run", str(SMOKE), "--repetitions", "1", "--out", str(tmp_path), "-q"]) == 0
    assert (tmp_path / "records.csv").exists()
    assert len(read_records(tmp_path / "records.csv")) == len(smoke_cfg.settings())


def test_members_are_certified(smoke_result):
    for r in smoke_result.records:
        for e in smoke_result.probe_eps:
            if r[f"member@{e:g}"]:
                assert r[f"certified@{e:g}"]
