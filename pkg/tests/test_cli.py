import json

import pytest

from hardyci.cli import DEFAULT_CONFIG, ConfigError, RunConfig, main, parse_config

FAST = "[grid]\nidentity_samples = 200\n"


def test_defaults_parse():
    cfg = parse_config("")
    assert cfg == parse_config(DEFAULT_CONFIG)
    assert cfg.lambda_list == [8, 16, 32, 64] and cfg.mode == "trend" and cfg.p == 0.75
    assert cfg.energy_profile()(0.3) == 1.0
    assert cfg.energy_profile("branch")(1.0) == pytest.approx(0.8)
    assert isinstance(cfg, RunConfig)


@pytest.mark.parametrize("text, where, what", [
    ("[run]\np = 0.5\n", ":2:", "p must lie"),
    ("[run]\nseed = 0\nmode = fast\n", ":3:", "mode"),
    ("[run]\n\nlambda_list = 8, 16, 24\n", ":3:", "geometric"),
    ("[verify]\ninject = everything\n", ":2:", "inject"),
    ("[run]\nsteps = three\n", ":2:", "steps"),
    ("\n[extra]\nx = 1\n", ":2:", "unknown section"),
    ("[energy]\nkind = affine\ne0 = 0.9\ne1 = 1.4\n", ":2:", "[energy] kind"),
])
def test_config_errors_name_the_line(text, where, what):
    with pytest.raises(ConfigError) as ei:
        parse_config(text, "my.ini")
    msg = str(ei.value)
    assert msg.startswith("my.ini" + where) and what in msg


def test_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\np = 1.2\n")
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "bad.ini:2:" in capsys.readouterr().err


def test_show_config(capsys):
    assert main(["show-config"]) == 0
    assert capsys.readouterr().out == DEFAULT_CONFIG


def _verify(tmp_path, name, extra=""):
    cfg = tmp_path / f"{name}.ini"
    cfg.write_text(FAST + extra)
    out = tmp_path / name
    code = main(["verify", "--config", str(cfg), "--out", str(out)])
    return code, out


def test_verify_passes_and_is_deterministic(tmp_path):
    c1, o1 = _verify(tmp_path, "a")
    c2, o2 = _verify(tmp_path, "b")
    assert c1 == c2 == 0
    for f in ("report.json", "report.csv"):
        assert (o1 / f).read_bytes() == (o2 / f).read_bytes()
    rep = json.loads((o1 / "report.json").read_text())
    assert rep["ok"] and rep["failed"] == []
    assert (o1 / "timings.json").exists()


def test_injected_fault_is_detected(tmp_path):
    code, out = _verify(tmp_path, "inj", "[verify]\ninject = psi_chain\n")
    assert code == 1
    assert json.loads((out / "report.json").read_text())["failed"] == ["div A / div B"]


def test_subthreshold_concentration_breaks_disjointness(tmp_path):
    code, out = _verify(tmp_path, "mu", "[run]\nmu1 = 2\n")
    assert code == 1
    assert "disjoint supports" in json.loads((out / "report.json").read_text())["failed"]
