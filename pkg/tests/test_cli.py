import csv
import json
import subprocess
import sys

import pytest

from balanced_sde.cli import main


def _write(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


def _gbm(**over):
    cfg = {"problem": "gbm", "scheme": "balanced-euler", "levels": {"min": 4, "max": 9}, "paths": 2000, "seed": 7}
    cfg.update(over)
    return cfg


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_convergence_gbm_writes_six_rows(tmp_path, capsys):
    out = tmp_path / "res"
    code = main(["convergence", "--config", _write(tmp_path, _gbm()), "--out", str(out)])
    assert code == 0
    rows = _read_csv(out / "errors.csv")
    assert rows[0] == ["level", "h", "rms_error", "stderr", "diverged_fraction"]
    assert [r[0] for r in rows[1:]] == ["4", "5", "6", "7", "8", "9"]
    report = json.loads((out / "report.json").read_text())
    assert 0.35 <= report["report"]["fitted_order"] <= 0.65
    prov = report["provenance"]
    assert (prov["seed"], prov["M"], prov["problem"]) == (7, 2000, "gbm")
    assert prov["levels"] == [4, 5, 6, 7, 8, 9] and prov["fine_level"] == 14
    assert prov["params"] == {"mu": 0.05, "b": 0.2}
    assert report["report"]["scheme"] == "balanced-euler" and "version" in prov
    assert "fitted order" in capsys.readouterr().out


def test_csv_is_lf_terminated(tmp_path):
    out = tmp_path / "res"
    main(["convergence", "--config", _write(tmp_path, _gbm(paths=50)), "--out", str(out), "--format", "csv"])
    raw = (out / "errors.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    assert not (out / "report.json").exists()


def test_two_levels_is_usage_error(tmp_path, capsys):
    code = main(["convergence", "--config", _write(tmp_path, _gbm(levels=[4, 5]))])
    assert code == 1
    assert "need >= 3 levels" in capsys.readouterr().err


@pytest.mark.parametrize(
    "over, needle",
    [
        ({"problem": "heston"}, "three-halves"),
        ({"scheme": "runge-kutta"}, "balanced-milstein"),
        ({"params": {"sigma": 1}}, "valid"),
        ({"x0": [1.0, 2.0]}, "x0"),
        ({"fine_level": 11}, "fine_level"),
        ({"scheme": {"name": "sabanis-tamed", "beta": 2.0}}, "beta"),
    ],
)
def test_usage_errors(tmp_path, capsys, over, needle):
    code = main(["convergence", "--config", _write(tmp_path, _gbm(paths=10, **over))])
    assert code == 1
    assert needle in capsys.readouterr().err


def test_capability_error_is_usage_error(tmp_path, capsys):
    cfg = {"problem": "noncommutative-2d", "scheme": "classical-milstein-commutative", "levels": [3, 4, 5], "paths": 5}
    assert main(["convergence", "--config", _write(tmp_path, cfg)]) == 1
    assert "error" in capsys.readouterr().err


def test_missing_or_broken_config(tmp_path):
    assert main(["convergence", "--config", str(tmp_path / "nope.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert main(["convergence", "--config", str(bad)]) == 1


def test_same_config_gives_identical_bytes(tmp_path):
    cfg = _write(tmp_path, _gbm(problem="three-halves", paths=600, levels=[3, 4, 5, 6], fine_level=10))
    outs = []
    for k, threads in enumerate(("1", "1", "3")):
        out = tmp_path / f"r{k}"
        assert main(["convergence", "--config", cfg, "--out", str(out), "--threads", threads]) == 0
        outs.append(((out / "report.json").read_bytes(), (out / "errors.csv").read_bytes()))
    assert outs[0] == outs[1] == outs[2]


def test_compare_single_scheme_matches_convergence(tmp_path):
    cfg = _gbm(paths=300, levels=[3, 4, 5], fine_level=9)
    conv, comp = tmp_path / "conv", tmp_path / "comp"
    main(["convergence", "--config", _write(tmp_path, cfg), "--out", str(conv)])
    cfg2 = dict(cfg)
    cfg2["schemes"] = [cfg2.pop("scheme")]
    assert main(["compare", "--config", _write(tmp_path, cfg2, "c.json"), "--out", str(comp)]) == 0
    a = json.loads((conv / "report.json").read_text())["report"]
    b = json.loads((comp / "compare.json").read_text())["reports"][0]
    assert a == b
    rows = _read_csv(comp / "compare.csv")
    assert rows[0][:3] == ["level", "h", "rms_error[balanced-euler]"]
    assert [r[2] for r in rows[1:]] == [r[2] for r in _read_csv(conv / "errors.csv")[1:]]


def test_compare_empty_scheme_list_is_usage_error(tmp_path):
    cfg = {"problem": "gbm", "schemes": [], "levels": [3, 4, 5], "paths": 10}
    assert main(["compare", "--config", _write(tmp_path, cfg)]) == 1


def test_compare_milstein_beats_euler_on_three_halves(tmp_path):
    cfg = {
        "problem": "three-halves",
        "schemes": ["balanced-euler", "balanced-milstein-commutative"],
        "levels": [4, 5, 6, 7],
        "fine_level": 11,
        "paths": 500,
        "seed": 2,
    }
    out = tmp_path / "cmp"
    assert main(["compare", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    euler, milstein = json.loads((out / "compare.json").read_text())["reports"]
    assert all(m < e for m, e in zip(milstein["rms_error"], euler["rms_error"]))


def test_moments_zero_noise_gbm_is_deterministic_columns(tmp_path):
    cfg = {"problem": "gbm", "params": {"mu": 0.0, "b": 0.0}, "scheme": "balanced-euler",
           "levels": [2, 3], "fine_level": 5, "paths": 10, "p": [1, 2], "x0": [2.0]}
    out = tmp_path / "mom"
    assert main(["moments", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    rows = _read_csv(out / "moments.csv")
    assert rows[0] == ["level", "h", "time", "p", "estimate", "stderr", "count"]
    body = rows[1:]
    assert len(body) == 2 * (5 + 9)
    for row in body:
        assert float(row[4]) == (4.0 if row[3] == "1.0" else 16.0)
        assert float(row[5]) == 0.0 and row[6] == "10"


def test_moments_classical_euler_blowup_reports_divergence(tmp_path):
    cfg = {"problem": "ginzburg-landau", "scheme": "classical-euler", "levels": [4], "fine_level": 8,
           "paths": 50, "x0": [10.0], "p": [1]}
    out = tmp_path / "mom"
    assert main(["moments", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 0
    report = json.loads((out / "moments.json").read_text())["report"]
    assert report["levels"][0]["diverged_fraction"] == 1.0


def test_unstable_study_exits_two(tmp_path, capsys):
    cfg = {"problem": "ginzburg-landau", "scheme": "classical-euler", "levels": [4, 5, 6, 7],
           "paths": 40, "x0": [10.0]}
    out = tmp_path / "u"
    assert main(["convergence", "--config", _write(tmp_path, cfg), "--out", str(out)]) == 2
    assert "UNSTABLE" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())["report"]
    assert report["fitted_order"] is None and report["unstable"]


def test_fully_diverged_study_exits_two(tmp_path, capsys):
    cfg = {"problem": "ginzburg-landau", "scheme": "classical-euler", "levels": [4, 5, 6],
           "paths": 10, "x0": [1000.0]}
    assert main(["convergence", "--config", _write(tmp_path, cfg)]) == 2
    assert "every path" in capsys.readouterr().err


def test_list_commands(capsys):
    assert main(["list-problems"]) == 0
    out = capsys.readouterr().out
    for name in ("ginzburg-landau", "three-halves", "gbm", "noncommutative-2d"):
        assert name in out
    assert main(["list-schemes"]) == 0
    assert "sabanis-tamed" in capsys.readouterr().out.split()


def test_threads_must_be_positive(tmp_path):
    assert main(["convergence", "--config", _write(tmp_path, _gbm()), "--threads", "0"]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "balanced_sde", "list-schemes"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "balanced-euler" in proc.stdout
