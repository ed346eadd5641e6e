import csv
import json
import shutil
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from photonlink.cli import RECIPE_DIR, list_recipes, main
from photonlink.config import load_config, parse_config
from photonlink.exceptions import ConfigError

MINIMAL = textwrap.dedent(
    """\
    name: demo
    scenario:
      kind: circuit
      calculation: boxmodes
    pulses:
      kappa_c_rad_s: 5.0e8
      t0_s: 2.62e-9
    """
)


class TestConfig:
    def test_units_converted(self):
        cfg = parse_config(MINIMAL + "device:\n  node1:\n    g_qr_hz: 6.8e6\n")
        assert cfg.device["node1"]["g_qr"] == pytest.approx(2 * np.pi * 6.8e6)
        assert cfg.pulses["t0"] == 2.62e-9

    def test_defaults_filled(self):
        cfg = parse_config(MINIMAL)
        assert cfg.device["resonator"]["capacitance_per_length"] == pytest.approx(173e-12)
        assert cfg.params["max_index"] == 2

    def test_missing_unit_has_line(self):
        with pytest.raises(ConfigError, match=r"line 7: .*unit suffix"):
            parse_config(MINIMAL.replace("t0_s:", "t0:"))

    def test_wrong_unit(self):
        with pytest.raises(ConfigError, match="unit '_m' not accepted"):
            parse_config(MINIMAL.replace("t0_s:", "t0_m:"))

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match=r"line 4: .*unknown key 'colour'"):
            parse_config(MINIMAL.replace("  kind: circuit", "  kind: circuit\n  colour: red"))

    def test_unknown_top_level(self):
        with pytest.raises(ConfigError, match="unknown top-level key"):
            parse_config(MINIMAL + "extra: 1\n")

    def test_bad_kind(self):
        with pytest.raises(ConfigError, match="scenario.kind"):
            parse_config(MINIMAL.replace("kind: circuit", "kind: teleport"))

    def test_type_and_choices(self):
        with pytest.raises(ConfigError, match="expected int"):
            parse_config(MINIMAL.replace("calculation: boxmodes", "calculation: boxmodes\n  max_index: 1.5"))
        with pytest.raises(ConfigError, match="not one of"):
            parse_config(MINIMAL.replace("boxmodes", "fem"))

    def test_overrides(self):
        cfg = parse_config(MINIMAL, ["scenario.max_index=3", "pulses.t0_s=1e-9", "seed=4"])
        assert cfg.params["max_index"] == 3 and cfg.pulses["t0"] == 1e-9 and cfg.seed == 4

    def test_override_replaces_other_unit(self):
        cfg = parse_config(MINIMAL, ["pulses.kappa_c_hz=1e8"])
        assert cfg.pulses["kappa_c"] == pytest.approx(2 * np.pi * 1e8)

    def test_t2_limit(self):
        with pytest.raises(ConfigError, match="t2 exceeds"):
            parse_config(MINIMAL + "device:\n  node1:\n    qubit_t1_s: 1e-6\n    qubit_t2_s: 3e-6\n")

    @pytest.mark.parametrize("path", sorted(RECIPE_DIR.glob("*.yaml")), ids=lambda p: p.stem)
    def test_recipes_parse(self, path):
        cfg = load_config(path)
        assert cfg.name == path.stem and cfg.seed == 0


class TestRecipes:
    def test_listing(self):
        rows = list_recipes()
        names = [n for n, _ in rows]
        assert names == sorted(names) and len(names) >= 8
        assert {"fig2a_standing_modes", "fig4b_noon1"} <= set(names)
        assert all(desc for _, desc in rows)

    def test_console_script(self):
        exe = shutil.which("photonlink")
        cmd = [exe] if exe else [sys.executable, "-m", "photonlink.cli"]
        out = subprocess.run(cmd + ["recipes"], capture_output=True, text=True, check=True).stdout
        assert "fig4b_noon1" in out


def _run(tmp_path, target, *extra):
    out = tmp_path / "out"
    code = main(["run", target, "--workers", "1", "--output-dir", str(out), *extra])
    return code, out


def test_transfer_recipe(tmp_path):
    code, out = _run(tmp_path, "transfer")
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["results"]["states"]["fock1"]["efficiency"] >= 0.98
    manifest = json.loads((out / "manifest.json").read_text())
    paths = {f["path"] for f in manifest["files"]}
    assert "summary.json" in paths and "transfer_summary.csv" in paths
    assert all(len(f["sha256"]) == 64 for f in manifest["files"])


def test_boxmodes_recipe(tmp_path):
    code, out = _run(tmp_path, "circuit_boxmodes")
    assert code == 0
    with open(out / "boxmodes_die.csv", newline="") as fh:
        first = next(csv.DictReader(fh))
    assert float(first["f_Hz"]) == pytest.approx(3.14e9, abs=0.01e9)


def test_summary_reproducible(tmp_path):
    args = ("--set", "scenario.repeats=2")
    _, a = _run(tmp_path / "a", "fig4b_noon1", *args)
    _, b = _run(tmp_path / "b", "fig4b_noon1", *args)
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_missing_unit_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(MINIMAL.replace("t0_s:", "t0:"))
    assert main(["validate", str(bad)]) == 2
    assert "line 7" in capsys.readouterr().err
    assert main(["run", str(bad)]) == 2


def test_validate_ok(capsys):
    assert main(["validate", "fig3c_simultaneous_swap"]) == 0
    assert "ok: transfer" in capsys.readouterr().out


def test_unknown_target():
    assert main(["validate", "no_such_recipe"]) == 2


def test_bad_workers(tmp_path):
    assert main(["run", "transfer", "--workers", "0"]) == 2


def test_simulation_failure_exit(tmp_path):
    cfg = tmp_path / "c.yaml"
    # no resonance inside the search window
    window = "calculation: lifetime\n  flux_points: 2\n  window_min_hz: 1.0e9\n  window_max_hz: 1.1e9"
    cfg.write_text(MINIMAL.replace("calculation: boxmodes", window))
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "o")]) == 3
