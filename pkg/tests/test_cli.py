import subprocess
import sys

from lineswitch_sim.cli import OUT_ENV, main

SCENARIO = """policy = avantguard
label = tiny
buffer_bytes = 720
trials = 2
stop = buffer_saturated

[workload]
kind = buffer_saturation
rate = 1
"""


def test_run_writes_csv(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(SCENARIO)
    out = tmp_path / "res.csv"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    first = out.read_bytes()
    assert first.count(b"\n") == 1 + 2 + 2
    assert "mean saturation" in capsys.readouterr().out
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_run_uses_env_output_dir(tmp_path, monkeypatch):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(SCENARIO)
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "outdir"))
    assert main(["run", str(cfg), "--trials", "1"]) == 0
    assert (tmp_path / "outdir" / "tiny.csv").exists()


def test_invalid_config_exits_nonzero_naming_field(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("policy = lineswitch\n[workload]\nkind = legit\n")
    assert main(["run", str(cfg)]) == 2
    assert "p_proxy" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2


def test_calibrate(capsys):
    assert main(["calibrate", "--buffer", "4194304", "--mbps", "1", "--target", "74.718"]) == 0
    assert capsys.readouterr().out.strip() == "entry_bytes = 71.968"


def test_preset_print_config(capsys):
    assert main(["preset", "fig3a", "--print-config"]) == 0
    out = capsys.readouterr().out
    assert out.count("[workload]") == 9
    assert "buffer_bytes = 1048576" in out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lineswitch_sim", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "calibrate" in proc.stdout
