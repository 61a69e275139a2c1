import csv
import json

import numpy as np
import pytest

from perthom import cli


def write_toml(path, text):
    path.write_text(text)
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(argv):
    return cli.main(argv)


BASE_1D = """
model = 1

[profile]
name = "two_phase_1d"
a0 = 1.0
a1 = 4.0

[family]
amplitude = 0.0

[single]
eta = 0.1
N = 0
subdivisions = 2
"""


# ---------------------------------------------------------------------------
# corrector


def test_corrector_constant_profile(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", """
model = 1

[profile]
name = "constant"
dim = 2
entries = [2.0, 3.0]

[family]
amplitude = 0.0

[single]
eta = 0.1
N = 0
subdivisions = 2
""")
    assert run(["corrector", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "corrector_summary.json").read_text())
    assert summary["max_abs_gradient"] <= 1e-12
    assert summary["command"] == "corrector"
    rows = read_csv(tmp_path / "o" / "corrector_values.csv")
    assert rows[0] == ["dof", "value"]
    assert all(abs(float(v)) <= 1e-12 for _, v in rows[1:])


def test_corrector_two_phase_gradients(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", BASE_1D)
    out = tmp_path / "o"
    assert run(["corrector", "--config", cfg, "--out", str(out)]) == 0
    rows = read_csv(out / "corrector_gradients.csv")[1:]
    grads = sorted(float(v) for _, _, v in rows)
    # 1D two-phase (1, 4): corrector slope is a*/a - 1 with a* = 1.6
    assert abs(grads[0] + 0.6) <= 1e-9
    assert abs(grads[1] - 0.6) <= 1e-9


# ---------------------------------------------------------------------------
# homogenize


def test_homogenize_constant_identity(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", """
model = 1

[profile]
name = "constant"
dim = 2
entries = [2.0, 3.0]

[family]
amplitude = 0.0

[single]
eta = 0.1
N = 1
subdivisions = 2
""")
    out = tmp_path / "o"
    assert run(["homogenize", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "homogenize_summary.json").read_text())
    a_eta = np.array(summary["a_eta_star"])
    assert np.abs(a_eta - np.diag([2.0, 3.0])).max() <= 1e-9
    assert np.abs(np.array(summary["residual_matrix"])).max() <= 1e-6
    rows = read_csv(out / "homogenized.csv")
    assert rows[0] == ["matrix", "i", "j", "value"]
    names = {row[0] for row in rows[1:]}
    assert names == {"a_eta_star", "a_per_star", "a1_star", "residual"}


def test_homogenize_rejects_eta_zero(tmp_path, capsys):
    cfg = write_toml(tmp_path / "c.toml", BASE_1D.replace("eta = 0.1", "eta = 0.0"))
    assert run(["homogenize", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "single.eta" in capsys.readouterr().err


def test_identity_deformation_matches_flat_model(tmp_path):
    shared = """
[profile]
name = "checkerboard_2d"
a0 = 1.0
a1 = 4.0

[single]
eta = 0.1
N = 1
subdivisions = 2

[solver]
rtol = 1e-12
"""
    cfg1 = write_toml(tmp_path / "m1.toml", "model = 1\n\n[family]\namplitude = 0.0\n" + shared)
    cfg2 = write_toml(tmp_path / "m2.toml", "model = 2\n\n[deformation]\namplitude = 0.0\n" + shared)
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert run(["homogenize", "--config", cfg1, "--out", str(out1)]) == 0
    assert run(["homogenize", "--config", cfg2, "--out", str(out2)]) == 0
    s1 = json.loads((out1 / "homogenize_summary.json").read_text())
    s2 = json.loads((out2 / "homogenize_summary.json").read_text())
    for key in ("a_eta_star", "a_per_star", "a1_star"):
        assert np.abs(np.array(s1[key]) - np.array(s2[key])).max() <= 1e-9


# ---------------------------------------------------------------------------
# sweep


SWEEP_1D = """
model = 1

[profile]
name = "two_phase_1d"
a0 = 1.0
a1 = 4.0

[family]
amplitude = 0.2

[grid]
etas = [0.2, 0.1]
Ns = [0, 1]
subdivisions = [2]

[seeds]
count = 2
"""


def test_sweep_artifacts_and_reproducibility(tmp_path):
    cfg = write_toml(tmp_path / "s.toml", SWEEP_1D)
    out = tmp_path / "o"
    assert run(["sweep", "--config", cfg, "--out", str(out), "--workers", "1"]) == 0
    csv1 = (out / "sweep.csv").read_bytes()
    sum1 = json.loads((out / "sweep_summary.json").read_text())

    # identical rerun: byte-identical CSV, summary equal except the timestamp
    assert run(["sweep", "--config", cfg, "--out", str(out), "--workers", "1"]) == 0
    csv2 = (out / "sweep.csv").read_bytes()
    sum2 = json.loads((out / "sweep_summary.json").read_text())
    assert csv1 == csv2
    sum1.pop("created"), sum2.pop("created")
    assert sum1 == sum2

    # different worker count: CSV still byte-identical
    out2 = tmp_path / "o2"
    assert run(["sweep", "--config", cfg, "--out", str(out2), "--workers", "2"]) == 0
    assert (out2 / "sweep.csv").read_bytes() == csv1

    header = read_csv(out / "sweep.csv")[0]
    assert header == cli._SWEEP_HEADER
    rows = read_csv(out / "sweep.csv")[1:]
    assert len(rows) == 4  # 2 etas x 2 Ns x 1 s x (1x1 matrix)
    assert all(row[7] == "2" for row in rows)  # n_seeds column


def test_sweep_summary_rerunnable(tmp_path):
    cfg = write_toml(tmp_path / "s.toml", SWEEP_1D)
    out = tmp_path / "o"
    assert run(["sweep", "--config", cfg, "--out", str(out)]) == 0
    csv1 = (out / "sweep.csv").read_bytes()
    echo1 = json.loads((out / "sweep_summary.json").read_text())["config"]

    # the echoed summary is itself a valid config reproducing the run
    out2 = tmp_path / "o2"
    assert run([
        "sweep", "--config", str(out / "sweep_summary.json"), "--out", str(out2),
    ]) == 0
    assert (out2 / "sweep.csv").read_bytes() == csv1
    echo2 = json.loads((out2 / "sweep_summary.json").read_text())["config"]
    echo1.pop("out"), echo2.pop("out")
    assert echo1 == echo2


def test_sweep_band_suites_exit_codes(tmp_path):
    passing = SWEEP_1D + """
[suites]
residual_band = true
z_band = true
band_factor = 1e9
reference = [0.2, 0, 2]
"""
    cfg = write_toml(tmp_path / "pass.toml", passing)
    out = tmp_path / "op"
    assert run(["sweep", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "sweep_summary.json").read_text())
    assert summary["all_passed"] is True
    assert summary["suites"]["residual_band"]["passed"] is True

    failing = passing.replace("band_factor = 1e9", "band_factor = 1e-9")
    cfg2 = write_toml(tmp_path / "fail.toml", failing)
    out2 = tmp_path / "of"
    assert run(["sweep", "--config", cfg2, "--out", str(out2)]) == 4
    summary2 = json.loads((out2 / "sweep_summary.json").read_text())
    assert summary2["all_passed"] is False
    # partial results are still written on suite failure
    assert (out2 / "sweep.csv").is_file()


def test_sweep_limit_study_suite(tmp_path):
    cfg = write_toml(tmp_path / "s.toml", """
model = 1

[profile]
name = "checkerboard_2d"
a0 = 1.0
a1 = 4.0

[family]
amplitude = 0.4
mean_offset = 0.5

[grid]
etas = [0.1]
Ns = [0, 2]
subdivisions = [2]

[seeds]
count = 12

[suites]
limit_study = true
limit_ratio = 0.9
""")
    out = tmp_path / "o"
    code = run(["sweep", "--config", cfg, "--out", str(out)])
    summary = json.loads((out / "sweep_summary.json").read_text())
    suite = summary["suites"]["limit_study"]
    assert (out / "limit_study.csv").is_file()
    assert code == (0 if suite["passed"] else 4)
    lrows = read_csv(out / "limit_study.csv")
    assert lrows[0][:4] == ["N", "subdivisions", "n_seeds", "mean_dev"]
    assert len(lrows) == 3  # header + two N values
    # deviations shrink toward the deterministic limit as N grows
    assert float(lrows[2][3]) < float(lrows[1][3])


def test_sweep_h_study_suite(tmp_path):
    cfg = write_toml(tmp_path / "s.toml", """
model = 1

[profile]
name = "two_phase_1d"
a0 = 1.0
a1 = 4.0

[family]
amplitude = 0.0

[grid]
etas = [0.1]
Ns = [0]
subdivisions = [2, 4, 8]

[seeds]
count = 1

[suites]
h_study = true
""")
    out = tmp_path / "o"
    assert run(["sweep", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "sweep_summary.json").read_text())
    suite = summary["suites"]["h_study"]
    assert suite["passed"] is True
    # piecewise profile aligned with the mesh: h-exact, reported as inf
    assert suite["orders"][0][0] is None or suite["orders"][0][0] == float("inf")
    assert abs(suite["extrapolated"][0][0] - 1.6) <= 1e-9
    assert (out / "h_study.csv").is_file()


# ---------------------------------------------------------------------------
# validate


def test_validate_model1(tmp_path):
    cfg = write_toml(tmp_path / "v.toml", """
model = 1

[profile]
name = "checkerboard_2d"
a0 = 1.0
a1 = 4.0

[family]
amplitude = 0.3
mean_offset = 0.5
""")
    out = tmp_path / "o"
    assert run(["validate", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "validate_summary.json").read_text())
    assert summary["all_passed"] is True
    assert summary["suites"]["stationarity"]["passed"] is True
    assert summary["suites"]["ergodic_average"]["passed"] is True
    assert "expansion" not in summary["suites"]


def test_validate_model2_expansion(tmp_path):
    cfg = write_toml(tmp_path / "v.toml", """
model = 2

[profile]
name = "checkerboard_2d"
a0 = 1.0
a1 = 4.0

[deformation]
amplitude = 0.1

[grid]
etas = [0.2, 0.1]
""")
    out = tmp_path / "o"
    assert run(["validate", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "validate_summary.json").read_text())
    exp = summary["suites"]["expansion"]
    assert exp["passed"] is True
    assert 0.2 < exp["eta0"] <= 0.5
    assert len(exp["rows"]) == 2


# ---------------------------------------------------------------------------
# exit codes and overrides


def test_config_error_exit(tmp_path, capsys):
    cfg = write_toml(tmp_path / "bad.toml", "bogus = 1\n")
    assert run(["sweep", "--config", cfg]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and "bogus" in err


def test_solver_error_exit(tmp_path, capsys):
    cfg = write_toml(tmp_path / "c.toml", """
model = 1

[profile]
name = "two_phase_1d"
a0 = 1.0
a1 = 4.0

[solver]
max_iter = 1

[single]
eta = 0.1
N = 1
subdivisions = 8
""")
    assert run(["corrector", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "solver error" in capsys.readouterr().err


def test_missing_config_exit(tmp_path, capsys):
    assert run(["sweep", "--config", str(tmp_path / "nope.toml")]) == 2
    assert "not found" in capsys.readouterr().err


def test_env_and_flag_overrides(tmp_path, monkeypatch):
    cfg = write_toml(tmp_path / "c.toml", BASE_1D)
    env_out = tmp_path / "from_env"
    monkeypatch.setenv("PERTHOM_OUT", str(env_out))
    assert run(["corrector", "--config", cfg]) == 0
    assert (env_out / "corrector_summary.json").is_file()

    # the flag beats the environment
    flag_out = tmp_path / "from_flag"
    assert run(["corrector", "--config", cfg, "--out", str(flag_out)]) == 0
    assert (flag_out / "corrector_summary.json").is_file()
    summary = json.loads((flag_out / "corrector_summary.json").read_text())
    assert summary["config"]["out"] == str(flag_out)


def test_bad_env_workers(tmp_path, monkeypatch, capsys):
    cfg = write_toml(tmp_path / "c.toml", BASE_1D)
    monkeypatch.setenv("PERTHOM_WORKERS", "lots")
    assert run(["corrector", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "PERTHOM_WORKERS" in capsys.readouterr().err


def test_seed_base_override(tmp_path):
    cfg = write_toml(tmp_path / "s.toml", SWEEP_1D)
    out1, out2, out3 = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run(["sweep", "--config", cfg, "--out", str(out1)]) == 0
    assert run(["sweep", "--config", cfg, "--out", str(out2), "--seed-base", "50"]) == 0
    assert run(["sweep", "--config", cfg, "--out", str(out3), "--seed-base", "0"]) == 0
    a = (out1 / "sweep.csv").read_bytes()
    b = (out2 / "sweep.csv").read_bytes()
    c = (out3 / "sweep.csv").read_bytes()
    assert a != b  # different seeds, different ensemble
    assert a == c  # explicit default matches the config default


def test_normalization_flag(tmp_path):
    cfg = write_toml(tmp_path / "c.toml", """
model = 2

[profile]
name = "checkerboard_2d"
a0 = 1.0
a1 = 4.0

[deformation]
amplitude = 0.0

[single]
eta = 0.1
N = 1
subdivisions = 2
""")
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert run(["homogenize", "--config", cfg, "--out", str(out1)]) == 0
    assert run([
        "homogenize", "--config", cfg, "--out", str(out2),
        "--normalization", "as-printed",
    ]) == 0
    s1 = json.loads((out1 / "homogenize_summary.json").read_text())
    s2 = json.loads((out2 / "homogenize_summary.json").read_text())
    assert s1["normalization"] == "volume-normalized"
    assert s2["normalization"] == "as-printed"
    a1m = np.array(s1["a_eta_star"])
    a2m = np.array(s2["a_eta_star"])
    # the variants differ by |Q_N|^(d-1) = 9 at N=1, d=2
    assert np.abs(a1m - 9.0 * a2m).max() <= 1e-8 * np.abs(a1m).max()
