import csv
import json

import numpy as np
import pytest

from rydnet.cli import main
from rydnet.config import PRESETS, parse_text, resolve
from rydnet.errors import ConfigError


def read_csv(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    header = [ln for ln in lines if ln.startswith("#")]
    body = list(csv.reader(ln for ln in lines if not ln.startswith("#")))
    return header, body[0], body[1:]


def config_of(header):
    line = next(h for h in header if h.startswith("# config: "))
    return json.loads(line[len("# config: "):])


def write(tmp_path, text, name="exp.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# -------------------------------------------------------------- experiments


def test_equilibrium_line(tmp_path, capsys):
    out = tmp_path / "eq"
    assert main(["equilibrium", "--line", "9", "1", "--rho", "10", "--out", str(out), "--reproducible"]) == 0
    header, cols, rows = read_csv(out / "theta.csv")
    assert header[0] == "# rydnet 0.1.0"
    assert not any(h.startswith("# generated:") for h in header)
    assert config_of(header)["topology"] == {"kind": "line", "n": "9", "b": "1"}
    assert cols == ["particle", "theta"]
    theta = np.array([float(r[1]) for r in rows])
    assert theta[0] == pytest.approx(0.749277, abs=1e-6)
    assert list(np.sign(np.diff(theta[:5]))) == [-1, 1, -1, 1]
    _, cols, rows = read_csv(out / "states.csv")
    assert cols == ["state_index", "occupancy_bits", "n_excited"] and len(rows) == 89
    assert rows[0] == ["0", "000000000", "0"]
    _, _, dom = read_csv(out / "dominant.csv")
    assert dom == [["88", "101010101", "5"]]
    _, cols, rows = read_csv(out / "equilibrium_states.csv")
    assert sum(float(r[3]) for r in rows) == pytest.approx(1.0, abs=1e-12)


def test_timestamp_without_reproducible(tmp_path):
    out = tmp_path / "eq"
    assert main(["equilibrium", "--line", "3", "1", "--rho", "2", "--out", str(out)]) == 0
    header, _, _ = read_csv(out / "theta.csv")
    assert header[-1].startswith("# generated: ")


def test_simulate_outputs(tmp_path):
    out = tmp_path / "sim"
    argv = ["simulate", "--lattice", "3", "3", "--rho", "2", "--horizon", "50", "--seed", "3", "--out", str(out)]
    assert main(argv + ["--reproducible"]) == 0
    _, cols, rows = read_csv(out / "trajectory.csv")
    assert cols == ["time", "particle", "direction"]
    assert {r[2] for r in rows} == {"up", "down"}
    times = [float(r[0]) for r in rows]
    assert times == sorted(times) and times[-1] <= 50
    header, cols, rows = read_csv(out / "time_average.csv")
    assert cols == ["particle", "theta_hat"] and len(rows) == 9
    assert any(h.startswith("# window:") for h in header)


def test_hitting_time_fig4(tmp_path):
    out = tmp_path / "hit"
    argv = ["hitting-time", "--lattice", "4", "4", "--preset", "fig4", "--samples", "200", "--out", str(out)]
    assert main(argv + ["--reproducible"]) == 0
    header, cols, rows = read_csv(out / "hitting_times_4x4.csv")
    assert cols == ["seed", "tau_or_timeout"] and len(rows) == 200
    assert any("Freedman-Diaconis" in h for h in header)
    taus = np.array([float(r[1]) for r in rows])
    assert 1e-5 < taus.mean() < 1e-4
    _, cols, hist = read_csv(out / "histogram_4x4.csv")
    assert cols == ["bin_left", "bin_right", "count"]
    assert sum(int(r[2]) for r in hist) == 200
    header, cols, prof = read_csv(out / "excitation_profile_4x4.csv")
    assert cols == ["time", "mean_excited", "normalized"]
    assert any(h.startswith("# normalization:") for h in header)
    assert float(prof[0][1]) == 0.0


def test_hitting_fixed_bins_and_timeouts(tmp_path):
    out = tmp_path / "hit"
    argv = ["hitting-time", "--lattice", "4", "4", "--rho", "1", "--samples", "20", "--bins", "5"]
    assert main(argv + ["--cap", "1e-9", "--out", str(out)]) == 0
    header, _, rows = read_csv(out / "hitting_times_4x4.csv")
    assert all(r[1] == "timeout" for r in rows)
    assert "# timeouts: 20 of 20" in header
    assert not (out / "histogram_4x4.csv").exists()


def test_tune_exact_line(tmp_path):
    cfg = write(
        tmp_path,
        """
[experiment]
kind = tune
seed = 1

[topology]
kind = line
n = 9
b = 4

[physics]
gamma = 6
omega_r = 1

[tune]
mode = exact
targets = 1/6
max_iterations = 500
report_iterations = 0 3 10

[schedule]
a = shifted_root 100 10
""",
    )
    out = tmp_path / "tune"
    assert main(["tune", "--config", str(cfg), "--out", str(out), "--reproducible"]) == 0
    _, cols, rows = read_csv(out / "reference.csv")
    assert cols == ["particle", "omega_e_star_2piMHz", "final_omega_e_2piMHz", "relative_error"]
    assert max(abs(float(r[3])) for r in rows) <= 1e-3
    _, cols, rows = read_csv(out / "tuner_history.csv")
    assert cols == ["n", "particle", "omega_e_2piMHz", "theta_hat", "target", "a_n"]
    assert rows[0] == ["0", "1", "1.0", "", repr(1 / 6), ""]
    _, cols, rows = read_csv(out / "theta_exact.csv")
    assert cols == ["n", "particle", "theta"]
    assert sorted({int(r[0]) for r in rows}) == [0, 3, 10]


def test_achievable(tmp_path):
    out = tmp_path / "ach"
    assert main(["achievable", "--line", "2", "1", "--targets", "0.3,0.3", "--out", str(out)]) == 0
    _, cols, rows = read_csv(out / "achievable.csv")
    assert cols == ["achievable", "residual", "margin"] and rows[0][0] == "true"
    _, cols, rows = read_csv(out / "witness.csv")
    assert cols == ["state_index", "occupancy_bits", "alpha"] and len(rows) == 3
    out2 = tmp_path / "ach2"
    assert main(["achievable", "--line", "2", "1", "--targets", "0.6", "--out", str(out2)]) == 0
    _, _, rows = read_csv(out2 / "achievable.csv")
    assert rows[0][0] == "false"
    assert not (out2 / "witness.csv").exists()


# -------------------------------------------------------------- errors


def test_both_parameterisations_is_config_error(tmp_path, capsys):
    cfg = write(
        tmp_path,
        "[experiment]\nkind = equilibrium\n[topology]\nkind = line\nn = 3\nb = 1\n"
        "[physics]\ngamma = 6\nomega_r = 1\nomega_e = 2\nnu = 3\n",
    )
    assert main(["equilibrium", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert f"{cfg}:11:" in err and "not both" in err
    assert main(["validate", str(cfg)]) == 2


def test_config_errors_are_line_precise(tmp_path, capsys):
    cfg = write(tmp_path, "[experiment]\nkind = equilibrium\n[topology]\nkind = line\nn = nine\nb = 1\n")
    assert main(["validate", str(cfg)]) == 2
    assert f"{cfg}:5:" in capsys.readouterr().err
    cfg = write(tmp_path, "[experiment]\nkind = equilibrium\nthis line is broken\n", "bad.ini")
    assert main(["validate", str(cfg)]) == 2
    assert ":3:" in capsys.readouterr().err


def test_unknown_experiment_kind():
    with pytest.raises(ConfigError) as info:
        sections, lines = parse_text("[experiment]\nkind = dance\n[topology]\nkind = line\nn = 2\nb = 1\n", "x.ini")
        resolve(sections, lines, "x.ini")
    assert info.value.line == 2


def test_missing_files(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope.ini")]) == 5
    assert main(["equilibrium", "--config", str(tmp_path / "nope.ini")]) == 5
    cfg = write(tmp_path, "[experiment]\nkind = equilibrium\n[topology]\nkind = graph\nfile = missing.txt\n")
    assert main(["validate", str(cfg)]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_infeasible_target_before_simulation(tmp_path, capsys):
    cfg = write(
        tmp_path,
        "[experiment]\nkind = tune\n[topology]\nkind = line\nn = 9\nb = 4\n"
        "[physics]\ngamma = 6\nomega_r = 1\n[tune]\ntargets = 0.5\n[schedule]\na = constant 1\n",
    )
    assert main(["validate", str(cfg)]) == 4
    out = tmp_path / "o"
    assert main(["tune", "--config", str(cfg), "--out", str(out)]) == 4
    assert not out.exists() or not any(out.iterdir())
    assert "infeasible target" in capsys.readouterr().err


def test_capacity_error_names_budget(tmp_path, capsys):
    rc = main(["achievable", "--lattice", "9", "5", "--targets", "0.1", "--out", str(tmp_path / "c")])
    assert rc == 3
    assert "50000000" in capsys.readouterr().err


def test_validate_presets(capsys):
    assert main(["validate", "--preset", "fig4"]) == 0
    out = capsys.readouterr().out
    assert "no warnings" in out
    assert main(["validate", "--preset", "fig4", "--factor", "5"]) == 0
    assert "warning:" in capsys.readouterr().out


# -------------------------------------------------------------- seeds and determinism


def test_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv("RYDNET_SEED", "42")
    sections, lines = parse_text("[experiment]\nkind = equilibrium\nseed = 3\n[topology]\nkind = line\nn = 2\nb = 1\n")
    assert resolve(sections, lines).seed == 42
    monkeypatch.setenv("RYDNET_SEED", "x")
    with pytest.raises(ConfigError):
        resolve(sections, lines)


def test_env_seed_changes_output(tmp_path, monkeypatch):
    argv = ["simulate", "--line", "3", "1", "--rho", "1", "--horizon", "5", "--reproducible"]
    monkeypatch.setenv("RYDNET_SEED", "1")
    assert main(argv + ["--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("RYDNET_SEED", "2")
    assert main(argv + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    b = (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert a != b
    # an explicit flag wins over the environment
    assert main(argv + ["--seed", "1", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "trajectory.csv").read_bytes() == a


@pytest.mark.parametrize(
    "argv",
    [
        ["hitting-time", "--lattice", "4", "4", "--preset", "fig4", "--samples", "64"],
        ["tune", "--preset", "fig7", "--max-iterations", "3"],
        ["simulate", "--lattice", "3", "3", "--rho", "2", "--horizon", "20"],
    ],
)
def test_byte_identical_across_threads(tmp_path, argv):
    dirs = []
    for threads in ("1", "3"):
        out = tmp_path / f"t{threads}"
        assert main(argv + ["--reproducible", "--threads", threads, "--out", str(out)]) == 0
        dirs.append(out)
    files = sorted(p.name for p in dirs[0].iterdir())
    assert files and files == sorted(p.name for p in dirs[1].iterdir())
    for name in files:
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_presets_resolve():
    for name, raw in PRESETS.items():
        cfg = resolve(raw)
        assert cfg.experiment in ("hitting-time", "equilibrium", "tune")
