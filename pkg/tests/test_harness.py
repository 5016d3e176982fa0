import csv
import json
from pathlib import Path

import numpy as np
import pytest

from cimsim.cli import main
from cimsim.ensemble import EnsembleConfig, run_ensemble
from cimsim.errors import ConfigInvalid, IOFailure
from cimsim.harness import (
    CSV_HEADER,
    ResultRow,
    config_from_dict,
    emit_observables,
    emit_results,
    load_config,
    load_observables,
    run_sweep,
    with_overrides,
)
from cimsim.integrator import TimeGrid
from cimsim.ising import ground_states_bruteforce, pairwise_afm, ring_afm, save_coupling
from cimsim.model import DOPOParams, PumpSchedule

BASE_PARAMS = {"gamma": 1.1, "gamma_p": 100, "gamma_m": 0.1, "kappa": 0.316227}
HEADER_LINE = "problem,variant,zeta,t_max,n_steps,success_rate,success_stderr,diverged,seed,wall_s\n"


def base_doc(**over):
    doc = {
        "problem": "pairwise-afm",
        "params": dict(BASE_PARAMS),
        "zeta": [0.3],
        "t_max": [4.0],
        "grid": {"dt": 0.01},
        "ensemble": {"n_sub": 2, "n_per_sub": 8},
        "seed": 11,
        "output": "out",
    }
    doc.update(over)
    return doc


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc, indent=2))
    return path


def test_ring_sweep_config_is_accepted():
    cfg = load_config(Path(__file__).parents[1] / "configs" / "ring16_sweep.json")
    assert cfg.problem == "ring:16" and len(cfg.zeta) == 9 and cfg.t_max == (100.0, 500.0, 2000.0)
    assert cfg.dopo_params(0.3) == DOPOParams()
    assert cfg.grid(2000.0).n_steps == 1_000_000
    n_steps = config_from_dict(base_doc(grid={"n_steps": 50000}, t_max=[100, 500]))
    assert n_steps.grid(500.0).n_steps == 50000


@pytest.mark.parametrize(
    "change,field",
    [
        ({"zeta": []}, "zeta"),
        ({"t_max": [100, -1]}, "t_max"),
        ({"params": dict(BASE_PARAMS, gamma_p=-100)}, "params.gamma_p"),
        ({"params": dict(BASE_PARAMS, gamma_p=0)}, "params"),
        ({"params": {"gamma": 1.1}}, "params.gamma_m"),
        ({"ensemble": {"n_sub": 1, "n_per_sub": 8}}, "ensemble.n_sub"),
        ({"grid": {"dt": 0.1, "n_steps": 10}}, "grid"),
        ({"grid": {"dt": 0}}, "grid.dt"),
        ({"variant": "wigner"}, "variant"),
        ({"problem": "ring:2"}, "problem"),
        ({"seed": -1}, "seed"),
        ({"zetas": [0.1]}, "zetas"),
        ({"variant": "full-ito", "scheme": "rk4"}, "scheme"),
    ],
)
def test_invalid_configs_name_the_field(tmp_path, change, field):
    path = write_config(tmp_path, base_doc(**change))
    with pytest.raises(ConfigInvalid) as exc:
        load_config(path)
    assert exc.value.field == field
    if field in ("zeta", "t_max", "variant", "problem", "seed", "zetas"):
        text = path.read_text().splitlines()
        assert f'"{field}"' in text[exc.value.line - 1]


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "problem": "pairwise-afm",\n  "zeta": [0.1,, 0.2]\n}\n')
    with pytest.raises(ConfigInvalid) as exc:
        load_config(path)
    assert exc.value.line == 3
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "missing.json")


def test_file_problem_is_resolved_against_config_dir(tmp_path):
    save_coupling(ring_afm(5), tmp_path / "ring5.json")
    cfg = load_config(write_config(tmp_path, base_doc(problem="file:ring5.json")))
    rows = run_sweep(cfg)
    assert rows[0].problem == "file:ring5.json"


def test_sweep_rows_are_ordered_and_complete():
    cfg = config_from_dict(base_doc(zeta=[0.5, 0.1, 0.3], t_max=[3.0, 2.0], ensemble={"n_sub": 2, "n_per_sub": 2}))
    rows = run_sweep(cfg)
    assert len(rows) == 6
    assert [(r.t_max, r.zeta) for r in rows] == [(t, z) for t in (2.0, 3.0) for z in (0.1, 0.3, 0.5)]
    for r in rows:
        assert not r.failed and 0 <= r.success_rate <= 1 and r.success_stderr >= 0


def test_single_point_sweep_equals_direct_run():
    cfg = config_from_dict(base_doc())
    row = run_sweep(cfg)[0]
    J = pairwise_afm()
    direct = run_ensemble(
        J, DOPOParams(), PumpSchedule(4.0), TimeGrid.from_dt(4.0, 0.01),
        EnsembleConfig(2, 8, 11), ground_states_bruteforce(J),
    )
    assert row.success_rate == direct.success_rate_mean
    assert row.success_stderr == direct.success_rate_stderr
    np.testing.assert_array_equal(row.stats.x_mean, direct.x_mean)


def test_failed_point_is_marked_not_raised():
    doc = base_doc(variant="linear", eps_final_ratio=1000.0, params=dict(BASE_PARAMS), zeta=[0.0, 0.3])
    rows = run_sweep(config_from_dict(doc))
    assert all(r.failed and r.success_rate is None for r in rows)


def test_emit_results(tmp_path):
    p = emit_results([], tmp_path / "empty.csv")
    assert p.read_text() == HEADER_LINE
    assert ",".join(CSV_HEADER) + "\n" == HEADER_LINE
    row = ResultRow("ring:16", "adiabatic-strat", 0.3, 100.0, 50000, 0.75, 0.01, 0, 7, 12.5)
    failed = ResultRow("ring:16", "adiabatic-strat", 0.5, 100.0, 50000, None, None, 2560, 7, 3.0, failed=True)
    text = emit_results([row], tmp_path / "one.csv").read_text()
    assert text.splitlines() == [HEADER_LINE.strip(), "ring:16,adiabatic-strat,0.3,100.0,50000,0.75,0.01,0,7,"]
    timed = emit_results([row, failed], tmp_path / "two.csv", record_wall_time=True).read_text()
    rec = list(csv.DictReader(timed.splitlines()))
    assert rec[0]["wall_s"] == "12.5" and rec[1]["success_rate"] == "" and rec[1]["diverged"] == "2560"
    with pytest.raises(IOFailure):
        emit_results([row], tmp_path / "one.csv" / "nested.csv")


def test_observables_round_trip(tmp_path):
    cfg = config_from_dict(base_doc())
    stats = run_sweep(cfg)[0].stats
    path = emit_observables(stats, tmp_path / "obs.json", {"zeta": 0.3})
    back = load_observables(path)
    np.testing.assert_array_equal(back["x_mean"], stats.x_mean)
    np.testing.assert_array_equal(back["photon_number_stderr"], stats.n_stderr)
    np.testing.assert_array_equal(back["times"], stats.times)
    assert back["zeta"] == 0.3 and back["success_rate"] == stats.success_rate_mean
    raw = json.loads(path.read_text())
    assert len(raw["x_mean"][0][0]) == 2  # [re, im]


def test_overrides():
    cfg = config_from_dict(base_doc())
    new = with_overrides(cfg, seed=5, out="elsewhere", threads=4, variant="full-ito")
    assert (new.seed, new.output, new.threads, new.variant) == (5, "elsewhere", 4, "full-ito")
    with pytest.raises(ConfigInvalid):
        with_overrides(cfg, threads=0)
    with pytest.raises(ConfigInvalid):
        with_overrides(config_from_dict(base_doc(scheme="rk4")), variant="full-ito")


def run_cli(args):
    return main([str(a) for a in args])


def test_cli_run_and_sweep(tmp_path, capsys):
    cfg = write_config(tmp_path, base_doc(zeta=[0.1, 0.3], t_max=[2.0]))
    out = tmp_path / "sweep"
    assert run_cli(["sweep", "--config", cfg, "--out", out, "--threads", 2]) == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0] == HEADER_LINE.strip()
    assert (out / "observables_T2_zeta0.1.json").exists() and (out / "manifest.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 11 and manifest["config"]["zeta"] == [0.1, 0.3] and "code_version" in manifest

    # run needs a single point
    assert run_cli(["run", "--config", cfg, "--out", tmp_path / "r"]) == 1
    assert "zeta" in capsys.readouterr().err
    assert run_cli(["run", "--config", cfg, "--zeta", 0.3, "--out", tmp_path / "r", "--seed", 3]) == 0
    rows = list(csv.DictReader((tmp_path / "r" / "results.csv").read_text().splitlines()))
    assert len(rows) == 1 and rows[0]["seed"] == "3" and rows[0]["zeta"] == "0.3"


def test_cli_thread_count_gives_identical_bytes(tmp_path):
    cfg = write_config(tmp_path, base_doc(problem="ring:4", t_max=[3.0], ensemble={"n_sub": 3, "n_per_sub": 20}))
    assert run_cli(["sweep", "--config", cfg, "--out", tmp_path / "a", "--threads", 1]) == 0
    assert run_cli(["sweep", "--config", cfg, "--out", tmp_path / "b", "--threads", 4]) == 0
    for name in ("results.csv", "observables_T3_zeta0.3.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_exit_codes(tmp_path, capsys):
    bad = write_config(tmp_path, base_doc(zeta=[]), "bad.json")
    assert run_cli(["sweep", "--config", bad]) == 1
    err = capsys.readouterr().err
    assert "field=zeta" in err and "line=" in err
    failing = write_config(tmp_path, base_doc(variant="linear", eps_final_ratio=1000.0), "fail.json")
    assert run_cli(["sweep", "--config", failing, "--out", tmp_path / "f"]) == 2
    assert "FAILED" in capsys.readouterr().out
    with pytest.raises(SystemExit):
        run_cli(["sweep"])


def test_cli_variant_override(tmp_path):
    cfg = write_config(tmp_path, base_doc(grid={"dt": 0.002}, t_max=[1.0]))
    assert run_cli(["run", "--config", cfg, "--variant", "full-ito", "--out", tmp_path / "o"]) == 0
    assert "full-ito" in (tmp_path / "o" / "results.csv").read_text()


def test_cli_validate(capsys):
    assert run_cli(["validate", "--seed", 1]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out
