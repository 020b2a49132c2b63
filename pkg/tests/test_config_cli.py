import csv
import json
import math

import pytest

from coagfuse.cli import main
from coagfuse.config import (SCHEMA, ConfigError, default_config, documented_defaults,
                             load_config, parse_config)
from coagfuse.experiments import max_workers

TINY = """\
# tiny run for the CLI tests
sim.n_particles = 300   # trailing comment
sim.t_end = 0.5
mc.replicas = 2
diag.checkpoints = 0.25, 0.5
grid.nv = 12
grid.ne = 6
grid.v_max = 60
smolu1d.nbins = 48
smolu1d.v_max = 200
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY, encoding="utf-8")
    return path


def test_baseline_defaults():
    cfg = default_config()
    p = cfg.coag_params()
    assert (p.alpha, p.beta, p.area_mod.theta) == (0.25, 0.5, 0.5)
    f = cfg.fusion_params()
    assert (f.r_scale, f.mu, f.sigma) == (1.0, 1.0, 0.0)
    assert cfg["sim.n_particles"] == 10_000 and cfg["mc.replicas"] == 32
    assert cfg["sim.t_end"] == 1.0 and cfg["init.kind"] == "monodisperse"
    assert cfg["diag.checkpoints"] == (0.25, 0.5, 1.0)
    assert cfg.truncation() is None


def test_parse_and_types():
    cfg = parse_config(TINY + "sim.lambda = inf\ncoag.relaxed = yes\n")
    assert cfg["sim.n_particles"] == 300
    assert cfg["sim.lambda"] == math.inf
    assert cfg["coag.relaxed"] is True
    assert cfg["diag.checkpoints"] == (0.25, 0.5)
    assert parse_config("diag.exponents = 1:0, 0:-4")["diag.exponents"] == ((1.0, 0.0), (0.0, -4.0))


@pytest.mark.parametrize("text, msg", [
    ("sim.nope = 1", "unknown key"),
    ("sim.seed = 1\nsim.seed = 2", "duplicate"),
    ("sim.seed = one", "bad value"),
    ("sim.seed", "expected"),
    ("mc.replicas = 0", "replicas"),
    ("flow.method = euler", "flow.method"),
    ("coag.alpha = 0.6\ncoag.beta = 0.5", "alpha|beta"),
    ("sim.lambda = nan", "bad value"),
])
def test_parse_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_hash_is_canonical():
    a = parse_config("sim.seed = 3\nsim.t_end = 1.0")
    b = parse_config("# reordered\nsim.t_end = 1\n\nsim.seed = 3")
    assert a.hash == b.hash
    assert a.hash != parse_config("sim.seed = 4").hash
    assert len(a.hash) == 64


def test_documented_defaults_round_trip(tmp_path):
    text = documented_defaults()
    assert all(key in text for key in SCHEMA)
    path = tmp_path / "d.cfg"
    path.write_text(text, encoding="utf-8")
    assert load_config(path).hash == default_config().hash


def test_with_overrides():
    cfg = default_config().with_overrides(sim__seed=9)
    assert cfg["sim.seed"] == 9
    with pytest.raises(ConfigError):
        default_config().with_overrides(sim__bogus=1)


def test_cutoff_epsilon_capped():
    cfg = default_config()
    assert cfg.cutoff(1.0).epsilon == 0.1
    assert cfg.cutoff(1e-3).epsilon == 1e-3


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("COAGFUSE_THREADS", "1")
    assert max_workers() == 1
    monkeypatch.setenv("COAGFUSE_THREADS", "lots")
    assert max_workers() >= 1


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_run_mc_outputs_and_determinism(tiny_cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("COAGFUSE_THREADS", "1")
    assert main(["run-mc", "--config", str(tiny_cfg), "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("COAGFUSE_THREADS", "2")
    assert main(["run-mc", "--config", str(tiny_cfg), "--out", str(tmp_path / "b")]) == 0
    for name in ("moments.csv", "probes.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = read_csv(tmp_path / "a" / "moments.csv")
    assert rows[0] == ["replica", "time", "k", "l", "value"]
    assert {r[0] for r in rows[1:]} == {"0", "1"}
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["config_hash"] == load_config(tiny_cfg).hash
    assert summary["seed"] == 0
    assert set(summary["checks"][0]) == {"name", "value", "threshold", "pass"}
    assert all(c["pass"] for c in summary["checks"])
    assert (tmp_path / "a" / "plot_moments.py").exists()


def test_run_mc_seed_override_changes_output(tiny_cfg, tmp_path):
    main(["run-mc", "--config", str(tiny_cfg), "--out", str(tmp_path / "a"), "--replicas", "1"])
    main(["run-mc", "--config", str(tiny_cfg), "--out", str(tmp_path / "b"), "--replicas", "1",
          "--seed", "5"])
    assert (tmp_path / "a" / "moments.csv").read_bytes() != (tmp_path / "b" / "moments.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["seed"] == 5


def test_run_sectional(tiny_cfg, tmp_path):
    out = tmp_path / "s"
    assert main(["run-sectional", "--config", str(tiny_cfg), "--out", str(out)]) == 0
    assert read_csv(out / "cells.csv")[0] == ["time", "v_lo", "v_hi", "e_lo", "e_hi", "density"]
    assert read_csv(out / "moments.csv")[0] == ["time", "k", "l", "value"]
    first = (out / "cells.csv").read_bytes()
    main(["run-sectional", "--config", str(tiny_cfg), "--out", str(out)])
    assert (out / "cells.csv").read_bytes() == first


def test_run_smolu1d(tiny_cfg, tmp_path):
    out = tmp_path / "m"
    assert main(["run-smolu1d", "--config", str(tiny_cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "marginal.csv")
    assert rows[0] == ["time", "v_lo", "v_hi", "mass"]
    assert {float(r[0]) for r in rows[1:]} == {0.0, 0.25, 0.5}


def test_defaults_command(capsys):
    assert main(["defaults"]) == 0
    assert "coag.alpha = 0.25" in capsys.readouterr().out


def test_bad_config_exits_with_usage_error(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("sim.bogus = 1\n", encoding="utf-8")
    with pytest.raises(SystemExit) as err:
        main(["run-mc", "--config", str(path), "--out", str(tmp_path)])
    assert err.value.code == 2
