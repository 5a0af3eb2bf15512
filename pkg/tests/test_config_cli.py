import csv
import json
import subprocess
import sys

import pytest

from graflow.cli import CONVERGE_COLUMNS, main
from graflow.config import ConfigError, parse_config


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def read_manifest(out):
    return json.loads((out / "manifest.json").read_text())


# -- config ---------------------------------------------------------------------

def test_hash_ignores_output_dir_and_defaults():
    a = parse_config('{"scenario": "grim-reaper", "h": 0.0625}')
    b = parse_config('{"scenario": "grim-reaper", "h": 0.0625, "output_dir": "x",'
                     ' "sigma": 0.9, "checks": {"brakke": true}}')
    assert a.config_hash() == b.config_hash()


@pytest.mark.parametrize("change", [
    {"h": 0.03125}, {"sigma": 0.5}, {"checks": {"duality": False}},
    {"brakke": {"seed": 3}}, {"norms": [{"p": "inf"}]}, {"t_range": [-0.2, 0.0]},
])
def test_hash_changes_with_meaningful_fields(change):
    base = {"scenario": "grim-reaper", "h": 0.0625}
    assert parse_config(json.dumps({**base, **change})).config_hash() != \
        parse_config(json.dumps(base)).config_hash()


@pytest.mark.parametrize("data", [
    {"scenario": "grim-reaper", "h": 0.1, "colour": "red"},
    {"scenario": "grim-reaper", "h": 0.1, "solver": {"schme": "explicit"}},
    {"scenario": "spiral", "h": 0.1},
    {"scenario": "grim-reaper", "h": -0.1},
    {"scenario": "grim-reaper", "h": 0.1, "k": 2, "n": 3},
    {"scenario": "flat", "h": 0.1, "speed": 1.0},
    {"scenario": "flat", "h": 0.1, "k": 2, "n": 2},
    {"scenario": "custom-expression", "h": 0.1, "k": 1, "n": 2, "box": [[0, 1]],
     "t_range": [0, 0.1], "initial": ["sin(x1"]},
    {"scenario": "custom-expression", "h": 0.1, "k": 1, "n": 2, "box": [[0, 1]],
     "t_range": [0, 0.1], "initial": ["import os"]},
    {"scenario": "grim-reaper", "h": 0.1, "norms": [{"p": 0.5}]},
])
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        parse_config(json.dumps(data))


def test_malformed_json_reports_line_and_column(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "scenario": "flat",\n  "h": 0.1,,\n}\n')
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert f"{path}:3:12" in err and "malformed JSON" in err


def test_missing_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 2


# -- simulate ------------------------------------------------------------------

def test_flat_simulate_passes(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "flat", "k": 2, "n": 3, "h": 0.125,
                                  "t_range": [0.0, 0.05],
                                  "norms": [{"R": 0.2}]})
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    m = read_manifest(out)
    assert set(m["checks"]) == {"solution_error", "brakke", "identity", "motion_law",
                                "perpendicularity", "duality"}
    for name, c in m["checks"].items():
        assert c["passed"]
        if name != "brakke":
            assert c["measured"] <= 1e-10
    assert m["checks"]["brakke"]["measured"] <= 1e-10
    assert m["config_hash"] == parse_config(open(cfg).read()).config_hash()
    assert json.loads((out / "norms.json").read_text())[0]["degenerate"]
    assert len(json.loads((out / "brakke.json").read_text())) == 24 * 6


def test_grim_reaper_simulate(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "grim-reaper", "h": 1 / 64,
                                  "checks": {"brakke": False, "duality": False}})
    out = tmp_path / "out"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    m = read_manifest(out)
    assert m["checks"]["solution_error"]["measured"] <= 5e-3
    assert m["grid"]["h"] == pytest.approx(2.4 / 154)


def test_failing_check_exit_1(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "grim-reaper", "h": 1 / 8,
                                  "checks": {"brakke": False, "duality": False},
                                  "tolerances": {"solution_error": 1e-12}})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert not read_manifest(tmp_path / "o")["passed"]


def test_solver_abort_exit_3(tmp_path):
    cfg = write_config(tmp_path, {
        "scenario": "custom-expression", "k": 1, "n": 2, "box": [[-1, 1]], "t_range": [0, 0.05],
        "h": 0.125, "initial": ["0.5 * x1"], "forcing": ["0", "30 * x1"],
        "solver": {"g_max": 1.0},
    })
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 3
    m = read_manifest(out)
    assert not m["passed"] and "abort" in m


def test_cfl_violation_exit_2(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "grim-reaper", "h": 0.1, "dt": 0.1})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_grid_too_coarse_for_test_functions(tmp_path, capsys):
    cfg = write_config(tmp_path, {"scenario": "flat", "h": 0.25, "t_range": [0.0, 0.05]})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "no room" in capsys.readouterr().err


def test_custom_expression_matches_builtin(tmp_path):
    common = {"h": 0.1, "checks": {"brakke": False, "duality": False}}
    a = write_config(tmp_path, {"scenario": "custom-expression", "k": 1, "n": 2,
                                "box": [[-1.2, 1.2]], "t_range": [-0.25, 0.0],
                                "initial": ["t - log(cos(x1))"], "exact": ["t - log(cos(x1))"],
                                **common}, "a.json")
    b = write_config(tmp_path, {"scenario": "grim-reaper", **common}, "b.json")
    assert main(["simulate", "--config", a, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", b, "--out", str(tmp_path / "b")]) == 0
    ca, cb = (read_manifest(tmp_path / d)["checks"] for d in "ab")
    assert ca["solution_error"]["measured"] == pytest.approx(cb["solution_error"]["measured"],
                                                             rel=1e-12)


# -- converge --------------------------------------------------------------------

def read_table(out):
    with open(out / "convergence.csv") as fh:
        return list(csv.DictReader(fh))


def test_converge_grim_reaper(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "grim-reaper", "h": 1 / 16})
    out = tmp_path / "o"
    assert main(["converge", "--config", cfg, "--levels", "3", "--out", str(out)]) == 0
    rows = read_table(out)
    assert list(rows[0]) == CONVERGE_COLUMNS
    assert rows[0]["order_error"] == "n/a"
    for r in rows[1:]:
        assert 1.7 <= float(r["order_error"]) <= 2.2
        assert float(r["order_brakke"]) >= 1.0
    summary = json.loads((out / "convergence.json").read_text())
    assert summary["one_sided_per_level"] == [True, True, True]


def test_converge_flat(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "flat", "h": 0.125, "t_range": [0.0, 0.05]})
    out = tmp_path / "o"
    assert main(["converge", "--config", cfg, "--levels", "2", "--out", str(out)]) == 0
    for r in read_table(out):
        for col in ("error", "brakke_residual", "identity_residual", "motion_law_residual",
                    "duality_residual"):
            assert float(r[col]) <= 1e-10
        assert all(r[c] == "n/a" for c in CONVERGE_COLUMNS if c.startswith("order_"))


def test_converge_forced_translation_brakke_order(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "forced-translation", "h": 1 / 8})
    out = tmp_path / "o"
    assert main(["converge", "--config", cfg, "--levels", "3", "--out", str(out)]) == 0
    rows = read_table(out)
    for r in rows[1:]:
        assert float(r["order_brakke"]) >= 1.0


def test_converge_needs_two_levels(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "flat", "h": 0.125})
    assert main(["converge", "--config", cfg, "--levels", "1"]) == 2


# -- verify ------------------------------------------------------------------------

def test_round_trip_bit_identical(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "grim-reaper", "h": 1 / 16,
                                  "norms": [{"R": 0.5}, {"kind": "holder", "R": 0.5}]})
    sim, ver = tmp_path / "sim", tmp_path / "ver"
    assert main(["simulate", "--config", cfg, "--out", str(sim)]) == 0
    assert main(["verify", "--config", cfg, "--flow", str(sim / "fields.csv"),
                 "--out", str(ver)]) == 0
    a, b = read_manifest(sim), read_manifest(ver)
    assert {k: v["measured"] for k, v in a["checks"].items()} == \
        {k: v["measured"] for k, v in b["checks"].items()}
    assert (sim / "brakke.json").read_bytes() == (ver / "brakke.json").read_bytes()
    assert (sim / "norms.json").read_bytes() == (ver / "norms.json").read_bytes()


def test_verify_flat_dump_passes(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "flat", "h": 0.125, "t_range": [0.0, 0.05]})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    assert main(["verify", "--config", cfg, "--flow", str(tmp_path / "s" / "fields.csv"),
                 "--out", str(tmp_path / "v")]) == 0


def test_verify_rejects_nan(tmp_path, capsys):
    cfg = write_config(tmp_path, {"scenario": "flat", "h": 0.125, "t_range": [0.0, 0.05]})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    dump = tmp_path / "s" / "fields.csv"
    lines = dump.read_text().splitlines()
    cells = lines[7].split(",")
    cells[-1] = "nan"
    lines[7] = ",".join(cells)
    dump.write_text("\n".join(lines) + "\n")
    assert main(["verify", "--config", cfg, "--flow", str(dump), "--out", str(tmp_path / "v")]) == 2
    err = capsys.readouterr().err
    assert "non-finite" in err and cells[0] in err


def test_verify_rejects_shape_mismatch(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "flat", "h": 0.125, "t_range": [0.0, 0.05]})
    other = write_config(tmp_path, {"scenario": "flat", "h": 0.1, "t_range": [0.0, 0.05]},
                         "other.json")
    assert main(["simulate", "--config", other, "--out", str(tmp_path / "s")]) == 0
    assert main(["verify", "--config", cfg, "--flow", str(tmp_path / "s" / "fields.csv"),
                 "--out", str(tmp_path / "v")]) == 2


def test_rerun_bit_identical(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "forced-translation", "h": 0.125})
    for d in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for name in ("fields.csv", "brakke.json", "norms.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    a, b = read_manifest(tmp_path / "a"), read_manifest(tmp_path / "b")
    a.pop("wall_times"), b.pop("wall_times")
    a["solver"].pop("wall_time", None), b["solver"].pop("wall_time", None)
    assert a == b


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, {"scenario": "flat", "h": 0.125, "t_range": [0.0, 0.05]})
    proc = subprocess.run([sys.executable, "-m", "graflow", "simulate", "--config", cfg,
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "PASS solution_error" in proc.stdout
