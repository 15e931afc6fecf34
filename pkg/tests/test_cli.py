from __future__ import annotations

import json
import subprocess
import sys

import pytest

from finslerlab.cli import ConfigError, build_scenario, dumps, load_config, main, run_command
from finslerlab.presets import preset_names

MINIMAL = {"dimension": 2, "energy": "0.5*(u1^2+u2^2)", "k_tensor": [["q1*q1", "q1*q2"], ["q2*q1", "q2*q2"]]}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_minimal_config_gets_defaults(tmp_path):
    sc = load_config(_write(tmp_path, MINIMAL))
    assert sc.samples["count"] == 64 and sc.samples["seed"] == 0
    assert sc.flow == {"t_end": 10.0, "step": 1e-3, "method": "rk4", "adaptive_tol": 1e-10}
    assert sc.samples["q_box"] == [[-1.0, 1.0], [-1.0, 1.0]]
    assert sc.tolerances == {"condition": 1e-8, "drift": 1e-9, "identity": 1e-10}


@pytest.mark.parametrize("patch,message", [
    ({"samples": {"q_box": [[2, -2]]}}, "degenerate interval q1"),
    ({"energy": "0.5*(u1^2+u3^2)"}, "u3 out of range"),
    ({"samples": {"count": 0}}, "samples.count"),
    ({"samples": {"seed": None}}, "samples.seed"),
    ({"flow": {"method": "euler"}}, "flow.method"),
    ({"bogus": 1}, "unknown field bogus"),
    ({"k_tensor": [["q1"]]}, "k_tensor"),
    ({"samples": {"u_box": [[0, 1], [1, 1]]}}, "degenerate interval u2"),
])
def test_config_errors(patch, message):
    cfg = json.loads(json.dumps(MINIMAL))
    for k, v in patch.items():
        if isinstance(v, dict):
            cfg.setdefault(k, {}).update(v)
        else:
            cfg[k] = v
    with pytest.raises(ConfigError, match=message):
        build_scenario(cfg)


def test_json_syntax_error_has_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "dimension": 2,\n  "energy": oops\n}')
    with pytest.raises(ConfigError, match="line 3 column"):
        load_config(str(p))


def test_exit_codes(tmp_path, capsys):
    good = _write(tmp_path, {**MINIMAL, "samples": {"count": 8}, "flow": {"t_end": 1.0}})
    assert main(["all", "--config", good, "--out", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["check"]["condition"]["verdict"] == "pass"
    assert abs(report["hierarchy"]["samples"][0]["h"][2]) < 1e-12
    assert max(v["relative_drift"] for v in report["flow"]["drift"]["integrals"].values()) < 1e-9

    bad = _write(tmp_path, {**MINIMAL, "k_tensor": [["q1^2", "0"], ["0", "q2"]]}, "bad.json")
    assert main(["check", "--config", bad, "--out", str(tmp_path / "b.json")]) == 1
    assert json.loads((tmp_path / "b.json").read_text())["check"]["condition"]["residual_max"] > 1e-3

    assert main(["check", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["check"]) == 2
    assert main(["check", "--preset", "nope"]) == 2


def test_reports_are_deterministic(tmp_path):
    sc = load_config(preset="euclid2-qq", seed=5)
    sc.flow["t_end"] = 0.5
    r1, c1 = run_command(sc, "all")
    r2, c2 = run_command(sc, "all")
    assert c1 == c2 == 0
    assert dumps(r1) == dumps(r2)
    assert "time" not in dumps(r1).lower().replace("times", "")


def test_seed_override_changes_samples():
    a = load_config(preset="euclid2-qq", seed=1).sample_array()
    b = load_config(preset="euclid2-qq", seed=2).sample_array()
    assert (a != b).any()


def test_presets_load():
    for name in preset_names():
        sc = load_config(preset=name)
        sc.tensor(), sc.model()


def test_config_overrides_preset(tmp_path):
    path = _write(tmp_path, {"samples": {"count": 3}})
    sc = load_config(path, preset="polar2-ci")
    assert sc.samples["count"] == 3 and sc.samples["q_box"][0] == [0.5, 2.0]


def test_csv_output_and_module_entry(tmp_path):
    csv_path = tmp_path / "t.csv"
    cfg = {**MINIMAL, "samples": {"count": 4}, "flow": {"t_end": 0.05}, "output": {"csv": str(csv_path)}}
    path = _write(tmp_path, cfg)
    out = subprocess.run([sys.executable, "-m", "finslerlab", "flow", "--config", path],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert json.loads(out.stdout)["flow"]["verdict"] == "pass"
    assert csv_path.read_text().startswith("t,q1,q2,u1,u2,h_0,h_1,cofactor,E")
