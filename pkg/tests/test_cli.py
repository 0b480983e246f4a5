import json
import subprocess
import sys

import pytest

from ergolab import cli


def run(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def canned(name):
    return json.loads((cli.canned_dir() / f"{name}.json").read_text())


def test_missing_config_exits_2(tmp_path, capsys):
    code, _, err = run(["run", "--config", str(tmp_path / "nope.json")], capsys)
    assert code == 2 and "nope.json" in err


def test_bad_json_reports_position(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "name": "x",\n  "seed": ,\n}')
    code, _, err = run(["run", "--config", str(p)], capsys)
    assert code == 2
    assert ":3:" in err


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = canned("identity")
    cfg["cases"][0]["params"]["bogus"] = 1
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    code, _, err = run(["run", "--config", str(p)], capsys)
    assert code == 2 and "bogus" in err


def test_schema_violation_rejected(tmp_path, capsys):
    cfg = canned("identity")
    cfg["manifold"]["kind"] = "klein-bottle"
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert run(["run", "--config", str(p)], capsys)[0] == 2


def test_bad_threads(capsys):
    assert run(["run", "--config", "identity", "--threads", "0"], capsys)[0] == 2


def test_usage_error_exits_2(capsys):
    assert run(["run"], capsys)[0] == 2


def test_list_examples_stable(capsys):
    code, out, _ = run(["list-examples"], capsys)
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) >= 10
    assert lines == run(["list-examples"], capsys)[1].strip().splitlines()
    names = [ln.split()[0] for ln in lines]
    assert names == sorted(names) and "ac01" in names


@pytest.mark.parametrize("name", ["identity", "cat_spectrum"])
def test_canned_runs(name, tmp_path, capsys):
    code, out, _ = run(["run", "--config", name, "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "verdict: pass" in out
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["verdict"] == "pass"
    assert {"runtime", "cases", "seed"} <= set(rep)
    assert list(tmp_path.glob("*.csv"))


def test_examples_path_resolves_to_packaged(tmp_path, capsys):
    code, _, _ = run(["run", "--config", "examples/identity.json", "--out", str(tmp_path)], capsys)
    assert code == 0


def test_strict_turns_failure_into_exit_1(tmp_path, capsys):
    cfg = canned("identity")
    cfg["cases"][0]["expect"] = "fails"
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "o"
    assert run(["run", "--config", str(p), "--out", str(out)], capsys)[0] == 0
    assert run(["run", "--config", str(p), "--out", str(out), "--strict"], capsys)[0] == 1
    assert json.loads((out / "report.json").read_text())["verdict"] == "fail"


def test_report_deterministic_across_threads():
    cfg = canned("cat_spectrum")
    a, _ = cli.run_config(cfg, threads=1)
    b, _ = cli.run_config(cfg, threads=4)
    assert cli.deterministic_part(a) == cli.deterministic_part(b)


def test_seed_override_recorded():
    rep, _ = cli.run_config(canned("identity"), seed=7)
    assert rep["seed"] == 7


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-m", "ergolab.cli", "list-examples"], capture_output=True, text=True)
    assert res.returncode == 0 and "ac01" in res.stdout
