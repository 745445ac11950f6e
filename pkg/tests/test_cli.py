import json

import numpy as np
import pytest

from quadcorr import cli, rates
from quadcorr.tagstream import TagStream, load, save


@pytest.fixture(scope="module")
def tagfile(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "run.qtag"
    assert cli.main(["simulate", "--preset", "morphology", "--duration", "0.05",
                     "--out", str(path)]) == 0
    return path


def test_simulate_writes_valid_file_and_manifest(tagfile):
    stream = load(tagfile)
    assert len(stream) > 1000
    manifest = json.loads((tagfile.parent / "run.qtag.manifest.json").read_text())
    assert manifest["subcommand"] == "simulate"
    assert manifest["params"]["duration"] == 0.05
    assert str(tagfile) in manifest["outputs"]


def test_simulate_is_reproducible(tmp_path):
    digests = []
    for name in ("a.qtag", "b.qtag"):
        out = tmp_path / name
        assert cli.main(["simulate", "--preset", "null", "--duration", "0.02", "--seed", "4",
                         "--out", str(out)]) == 0
        m = json.loads((tmp_path / f"{name}.manifest.json").read_text())
        digests.append((m["digest"], next(iter(m["outputs"].values()))))
    assert digests[0] == digests[1]


def test_simulate_from_ini(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[source]\ng_p = 1e5\ng_q = 0\n[detectors]\neta = 0.5,0.5,0.5,0.5\n"
                   "[run]\nduration = 0.01\nseed = 1\n")
    out = tmp_path / "r.qtag"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(load(out)) > 0


@pytest.mark.parametrize("cmd", ["g2", "g3", "correct"])
def test_analysis_outputs(tagfile, tmp_path, cmd):
    out = tmp_path / cmd
    assert cli.main([cmd, str(tagfile), "--out", str(out)]) == 0
    text = out.read_text()
    assert text
    assert (tmp_path / f"{cmd}.manifest.json").exists()


def test_g2_peak_at_herald_delay(tagfile, tmp_path):
    out = tmp_path / "g2.csv"
    assert cli.main(["g2", str(tagfile), "--channels", "1,3", "--out", str(out)]) == 0
    rows = np.loadtxt(out, delimiter=",", comments="#")
    assert rows[np.argmax(rows[:, 1]), 0] == pytest.approx(8.0)


def test_g4_slices(tagfile, tmp_path):
    out = tmp_path / "g4"
    assert cli.main(["g4", str(tagfile), "--range-ns", "20", "--out", str(out)]) == 0
    slices = sorted(out.glob("g4_tau12_*.csv"))
    assert len(slices) == 21
    summary = cli.parse_report((out / "summary.txt").read_text())
    assert float(summary["peak_tau_31_ns"]) == pytest.approx(8.0)


def test_correct_then_infer(tagfile, tmp_path):
    rep = tmp_path / "rep.txt"
    assert cli.main(["correct", str(tagfile), "--out", str(rep)]) == 0
    values = cli.parse_report(rep.read_text())
    for key in ("c_p", "c_q", "c_1234", "term_1234[13|24]", "accidental_double_pairs"):
        assert key in values
    inf = tmp_path / "inf.txt"
    assert cli.main(["infer", str(rep), "--eta", "0.1,0.1,0.1,0.1", "--out", str(inf)]) == 0
    assert float(cli.parse_report(inf.read_text())["g_p"]) > 0


def test_corrupt_file_exit_3_without_output(tmp_path):
    bad = tmp_path / "bad.qtag"
    bad.write_bytes(b"NOPE" + bytes(40))
    out = tmp_path / "rep.txt"
    assert cli.main(["correct", str(bad), "--out", str(out)]) == 3
    assert not out.exists()


def test_truncated_file_exit_3(tagfile, tmp_path):
    cut = tmp_path / "cut.qtag"
    cut.write_bytes(tagfile.read_bytes()[:-3])
    assert cli.main(["g2", str(cut), "--out", str(tmp_path / "x")]) == 3
    assert not (tmp_path / "x").exists()


def test_unsorted_file_exit_3(tmp_path):
    s = TagStream.from_arrays([5, 10], [1, 3], duration=20)
    path = tmp_path / "u.qtag"
    save(s, path)
    data = bytearray(path.read_bytes())
    data[-16:-8], data[-8:] = data[-8:], data[-16:-8]
    path.write_bytes(bytes(data))
    assert cli.main(["correct", str(path), "--out", str(tmp_path / "r")]) == 3


def test_missing_file_exit_3(tmp_path):
    assert cli.main(["g3", str(tmp_path / "none.qtag"), "--out", str(tmp_path / "o")]) == 3


def test_bad_flags_exit_2(tagfile, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["g2", str(tagfile)])
    assert exc.value.code == 2
    assert cli.main(["g2", str(tagfile), "--bin-ns", "3", "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["g2", str(tagfile), "--channels", "1,1", "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["oracle", "--g2-peak", "0.5", "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_bad_config_exit_2(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[source]\ng_p = lots\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2
    cfg.write_text("[source]\ng_p = -1\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 2


def test_no_convergence_exit_4(tagfile, tmp_path, monkeypatch):
    rep = tmp_path / "rep.txt"
    assert cli.main(["correct", str(tagfile), "--out", str(rep)]) == 0

    def fail(*a, **k):
        raise rates.NoConvergence("did not converge")

    monkeypatch.setattr(rates, "fit_arm_losses", fail)
    out = tmp_path / "inf.txt"
    assert cli.main(["infer", str(rep), "--eta-prime", "0.2,0.2,0.2,0.2", "--out", str(out)]) == 4
    assert not out.exists()


@pytest.mark.parametrize("kind", ["g2_cross", "g2_auto", "g3", "g4"])
def test_oracle_grid(tmp_path, kind):
    out = tmp_path / "grid.csv"
    assert cli.main(["oracle", "--kind", kind, "--range-ns", "10", "--out", str(out)]) == 0
    rows = np.loadtxt(out, delimiter=",", comments="#")
    assert rows.shape[0] == (11 if kind.startswith("g2") else 121)
    assert np.all(rows[:, -1] > 0)


def test_oracle_from_ini(tmp_path):
    cfg = tmp_path / "m.ini"
    cfg.write_text("[model]\ng2_peak = 3\ntau_c = 4\n")
    out = tmp_path / "grid.csv"
    assert cli.main(["oracle", "--kind", "g2_cross", "--config", str(cfg), "--tau0-ns", "0",
                     "--range-ns", "4", "--out", str(out)]) == 0
    rows = np.loadtxt(out, delimiter=",", comments="#")
    assert rows[:, 1].max() == pytest.approx(3.0)


def test_sweep(tmp_path):
    out = tmp_path / "sweep.txt"
    assert cli.main(["sweep", "--duration", "0.5", "--levels", "0.5,1.0", "--out", str(out)]) == 0
    values = cli.parse_report(out.read_text())
    assert 0.8 < float(values["slope_Rp_vs_Rs"]) < 1.2
    assert 1.5 < float(values["slope_Rt_vs_Rp"]) < 2.5
    assert "R_q[1]" in values


def test_module_entry_point(tagfile, tmp_path):
    import subprocess
    import sys
    out = tmp_path / "c.txt"
    r = subprocess.run([sys.executable, "-m", "quadcorr", "correct", str(tagfile), "--out", str(out)],
                       capture_output=True)
    assert r.returncode == 0 and out.exists()
