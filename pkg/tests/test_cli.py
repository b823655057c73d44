import csv
import json
import math
import re

import pytest

from rsgi1.cli import (
    EXIT_INVALID,
    EXIT_OK,
    MC_HEADER,
    RATE_HEADER,
    SLOPE_HEADER,
    cell,
    main,
    validate_config,
    ValidationFailure,
)

FIG_TIMES = (0.1, 0.25, 0.5, 0.75, 0.9)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(tmp_path, *argv):
    return main([*argv, "--output-dir", str(tmp_path)])


def test_rate_os_row_zero_at_centre(tmp_path):
    assert run(tmp_path, "rate", "os", "--t", "0.5", "--x", "0.5") == EXIT_OK
    rows = read_rows(tmp_path / "rate_os.csv")
    assert tuple(rows[0]) == RATE_HEADER
    assert float(rows[1][2]) == 0.0


def test_oracle_binomial_value(tmp_path):
    assert run(tmp_path, "oracle", "os-tail", "--n", "10", "--t", "0.5", "--a", "0.3") == EXIT_OK
    rows = read_rows(tmp_path / "oracle_os_tail.csv")
    assert rows[0] == ["n", "t", "a", "p", "log_p"]
    assert float(rows[1][3]) == pytest.approx(0.150268, abs=5e-7)


def test_figure_sweep_renders_five_convex_curves(tmp_path):
    times = ",".join(map(str, FIG_TIMES))
    assert run(tmp_path, "rate", "os", "--t", times, "--x", "0.01:0.99:99") == EXIT_OK
    rows = read_rows(tmp_path / "rate_os.csv")[1:]
    for t in FIG_TIMES:
        curve = sorted((float(r[1]), float(r[2])) for r in rows if float(r[0]) == t)
        xs, ys = zip(*curve)
        i = min(range(len(ys)), key=ys.__getitem__)
        assert xs[i] == pytest.approx(t, abs=1e-9) and ys[i] < 1e-12
        assert all(a + c - 2 * b >= -1e-12 for a, b, c in zip(ys, ys[1:], ys[2:]))
    code = run(tmp_path, "plot", "--input", str(tmp_path / "rate_os.csv"), "--xcol", "x_or_y",
               "--ycol", "rate", "--group", "t")
    assert code == EXIT_OK
    svg = (tmp_path / "rate_os.svg").read_text()
    assert 'viewBox="0 0 800 600"' in svg
    lines = re.findall(r'<polyline class="series"[^>]*points="([^"]+)"', svg)
    assert len(lines) == 5
    assert all(len(pts.split()) == 99 for pts in lines)
    for t in FIG_TIMES:
        assert f"t={t}" in svg


def test_offered_rate_convention_flag(tmp_path):
    run(tmp_path, "rate", "offered", "--t", "0.5", "--y", "0.0", "--out", "literal.csv")
    run(tmp_path, "rate", "offered", "--t", "0.5", "--y", "0.0", "--convention", "corrected",
        "--out", "corrected.csv")
    p = float(read_rows(tmp_path / "literal.csv")[1][2])
    c = float(read_rows(tmp_path / "corrected.csv")[1][2])
    assert p == pytest.approx(c, abs=1e-12)  # unit-mean service: both zeros at y = 0


def test_rate_increments_and_workload(tmp_path):
    assert run(tmp_path, "rate", "increments", "--points", "0.5", "--y", "0.3") == EXIT_OK
    row = read_rows(tmp_path / "rate_increments.csv")[1]
    assert float(row[2]) == pytest.approx(0.0871766935723888763, abs=1e-12)
    assert row[3] == "inf"  # no scalar optimizer
    code = run(tmp_path, "rate", "workload", "--t", "0.5", "--y", "0.3", "--m", "50",
               "--multistart", "2")
    assert code == EXIT_OK
    assert float(read_rows(tmp_path / "rate_workload.csv")[1][2]) == pytest.approx(0.0506,
                                                                                   abs=1e-3)


def test_mc_both_methods(tmp_path):
    code = run(tmp_path, "mc", "tail", "--n", "50", "--t", "0.5", "--w", "0.6", "--reps",
               "20000", "--method", "both", "--seed", "3")
    assert code == EXIT_OK
    rows = read_rows(tmp_path / "mc_tail.csv")
    assert tuple(rows[0]) == MC_HEADER
    assert [r[3] for r in rows[1:]] == ["naive", "is"]
    for r in rows[1:]:
        assert float(r[5]) <= float(r[4]) <= float(r[6])


def test_ldp_slope_csv(tmp_path):
    code = run(tmp_path, "ldp-slope", "--n", "100,500,2000,5000", "--t", "0.5", "--a", "0.3")
    assert code == EXIT_OK
    rows = read_rows(tmp_path / "ldp_slope.csv")
    assert tuple(rows[0]) == SLOPE_HEADER
    gaps = [float(r[3]) for r in rows[1:]]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_bandwidth_table(tmp_path):
    code = run(tmp_path, "bandwidth", "--w", "0.3", "--p", "1", "--n", "200", "--t-grid",
               "0.2,0.6,1.0", "--m", "20", "--multistart", "1")
    assert code in (EXIT_OK, 3)
    rows = read_rows(tmp_path / "bandwidth.csv")
    assert rows[0] == ["t", "rate", "bound", "residual", "upper_bound_only", "t_star"]
    assert {r[5] for r in rows[1:]} == {"0.2"}


def test_simulate_writes_fluid_overlay(tmp_path):
    assert run(tmp_path, "simulate", "--n", "50", "--seed", "1") == EXIT_OK
    rows = read_rows(tmp_path / "simulate_n50.csv")
    assert rows[0] == ["n", "t", "workload", "offered_load", "fluid_workload"]
    assert all(float(r[2]) >= 0 for r in rows[1:])


@pytest.mark.parametrize("argv", [
    ("simulate", "--n", "40", "--seed", "9"),
    ("mc", "tail", "--n", "30", "--t", "0.5", "--w", "0.2", "--reps", "2000", "--method",
     "both", "--seed", "4"),
    ("rate", "offered", "--t", "0.3,0.6", "--y=-0.2:0.4:7"),
])
def test_reruns_byte_identical(tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, *argv) == EXIT_OK and run(b, *argv) == EXIT_OK
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_no_nan_cells_in_outputs(tmp_path):
    assert run(tmp_path, "rate", "os", "--t", "0.5", "--x", "0:1:11") == EXIT_OK
    assert run(tmp_path, "rate", "offered", "--t", "0.5", "--y=-2,0,0.9,5") == EXIT_OK
    for f in tmp_path.glob("*.csv"):
        for row in read_rows(f)[1:]:
            for c in row:
                assert c in ("inf", "-inf") or math.isfinite(float(c))


def test_cell_encoding():
    assert cell(None) == "inf"
    assert cell(math.inf) == "inf"
    assert cell(True) == "1"
    assert cell(0.1) == "0.1"
    with pytest.raises(ValueError):
        cell(math.nan)


def test_unknown_config_key_names_path(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"service": {"kind": "exponential", "params": {"meen": 1}}}))
    assert run(tmp_path, "simulate", "--config", str(cfg)) == EXIT_INVALID
    err = capsys.readouterr().err
    assert "$.service.params" in err and "meen" in err


def test_schema_rejects_top_level_key():
    with pytest.raises(ValidationFailure, match=r"\$"):
        validate_config({"n_list": [10], "reps_count": 5})


def test_invalid_values_exit_two(tmp_path):
    assert run(tmp_path, "rate", "os", "--t", "1.5", "--x", "0.5") == EXIT_INVALID
    assert run(tmp_path, "rate", "os", "--t", "0.5") == EXIT_INVALID
    assert run(tmp_path, "bandwidth", "--w", "0.3", "--p", "0", "--n", "10",
               "--t-grid", "0.5") == EXIT_INVALID
    assert run(tmp_path, "simulate", "--m", "3") == EXIT_INVALID


def test_env_sets_default_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("RSGI1_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["rate", "os", "--t", "0.5", "--x", "0.5"]) == EXIT_OK
    assert (tmp_path / "env" / "rate_os.csv").exists()


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_list": [20], "seed": 1, "output_dir": str(tmp_path / "c")}))
    assert main(["simulate", "--config", str(cfg)]) == EXIT_OK
    assert (tmp_path / "c" / "simulate_n20.csv").exists()
    assert run(tmp_path / "f", "simulate", "--config", str(cfg), "--n", "30") == EXIT_OK
    assert (tmp_path / "f" / "simulate_n30.csv").exists()
