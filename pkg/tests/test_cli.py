"""Command-line front end: exit codes, artifacts, manifests and reproducibility."""

import json
import os
import subprocess
import sys

import pytest
import yaml

from vortlab.cli import main
from vortlab.config import load_config
from vortlab.dynamics import read_snapshot

SMALL = {"N": 32, "dt": 0.05, "t1": 0.5, "noise": {"kcut": 8}, "initial": {"kind": "random", "kmax": 4}}


def write_config(tmp_path, name="run", **changes):
    data = {**SMALL, "output_dir": str(tmp_path / name)}
    for k, v in changes.items():
        data[k] = {**data[k], **v} if isinstance(v, dict) and isinstance(data.get(k), dict) else v
    p = tmp_path / f"{name}.yaml"
    p.write_text(yaml.safe_dump(data))
    return str(p), tmp_path / name


def manifest(out):
    with open(out / "manifest.json") as fh:
        return json.load(fh)


def tree(root):
    """Relative path -> bytes for every file below ``root`` except the manifest."""
    files = {}
    for dirpath, _, names in os.walk(root):
        for n in names:
            full = os.path.join(dirpath, n)
            rel = os.path.relpath(full, root)
            if rel != "manifest.json":
                with open(full, "rb") as fh:
                    files[rel] = fh.read()
    return files


class TestSimulate:
    def test_artifacts(self, tmp_path, capsys):
        cfg, out = write_config(tmp_path, snapshot_every=5)
        assert main(["simulate", "--config", cfg]) == 0
        m = manifest(out)
        assert m["command"] == "simulate" and m["passed"] is True
        assert {c["name"] for c in m["checks"]} == {"finite", "mean_zero"}
        assert {"series.csv", "config.yaml", "manifest.json"} <= set(m["artifacts"])
        snaps = sorted(os.listdir(out / "snapshots"))
        assert snaps == ["snap_000000.vort", "snap_000001.vort", "snap_000002.vort"]
        assert read_snapshot(out / "snapshots" / snaps[-1])[0] == pytest.approx(0.5)
        assert "PASS  finite" in capsys.readouterr().out

    def test_echoed_config_reloads(self, tmp_path):
        cfg, out = write_config(tmp_path)
        main(["simulate", "--config", cfg, "--quiet"])
        assert load_config(out / "config.yaml") == load_config(cfg)

    def test_no_snapshots_when_disabled(self, tmp_path):
        cfg, out = write_config(tmp_path, snapshot_every=0)
        assert main(["simulate", "--config", cfg, "--quiet"]) == 0
        assert not (out / "snapshots").exists()

    def test_formats_filter(self, tmp_path):
        cfg, out = write_config(tmp_path, snapshot_every=5, formats=["snapshot"])
        assert main(["simulate", "--config", cfg, "--quiet"]) == 0
        assert not (out / "series.csv").exists() and (out / "snapshots").is_dir()

    def test_quiet(self, tmp_path, capsys):
        cfg, _ = write_config(tmp_path)
        main(["simulate", "--config", cfg, "--quiet"])
        assert capsys.readouterr().out == ""

    def test_overrides(self, tmp_path):
        cfg, out = write_config(tmp_path)
        other = tmp_path / "elsewhere"
        assert main(["simulate", "--config", cfg, "--quiet", "--seed", "5", "--out", str(other)]) == 0
        assert not out.exists()
        assert load_config(other / "config.yaml").seed == 5
        main(["simulate", "--config", cfg, "--quiet"])
        assert (out / "series.csv").read_bytes() != (other / "series.csv").read_bytes()

    def test_bit_reproducible(self, tmp_path):
        cfg, out = write_config(tmp_path, snapshot_every=2)
        main(["simulate", "--config", cfg, "--quiet"])
        first = tree(out)
        main(["simulate", "--config", cfg, "--quiet"])
        assert tree(out) == first


class TestEnsemble:
    def test_distinct_and_reproducible(self, tmp_path):
        cfg, out = write_config(tmp_path, ensemble={"trajectories": 4, "chunk": 1}, snapshot_every=5)
        assert main(["ensemble", "--config", cfg, "--quiet"]) == 0
        series = [(out / f"series_{i}.csv").read_bytes() for i in range(4)]
        assert len(set(series)) == 4
        first = tree(out)
        main(["ensemble", "--config", cfg, "--quiet"])
        assert tree(out) == first

    def test_worker_count_invariant(self, tmp_path):
        cfg, _ = write_config(tmp_path, ensemble={"trajectories": 4, "chunk": 1}, snapshot_every=5)
        one, two = tmp_path / "w1", tmp_path / "w2"
        assert main(["ensemble", "--config", cfg, "--quiet", "--workers", "1", "--out", str(one)]) == 0
        assert main(["ensemble", "--config", cfg, "--quiet", "--workers", "2", "--out", str(two)]) == 0
        a, b = tree(one), tree(two)
        a.pop("config.yaml"), b.pop("config.yaml")
        assert a == b and len(a) > 4


class TestOtherCommands:
    def test_ou_calibrate(self, tmp_path, capsys):
        cfg, out = write_config(tmp_path, ou={"samples": 50})
        assert main(["ou-calibrate", "--config", cfg]) == 0
        text = capsys.readouterr().out
        assert "lambda=" in text
        rows = (out / "ou_calibration.csv").read_text().splitlines()
        assert rows[0] == "lambda,S_a,margin,mc_margin,mc_rms,exact_rms" and len(rows) == 2
        assert manifest(out)["summary"]["margin"] > 0

    def test_contdep_default_ladder_trimmed(self, tmp_path):
        cfg, out = write_config(tmp_path, t1=0.2)
        code = main(["contdep-test", "--config", cfg, "--quiet"])
        assert code in (0, 1)
        ns = [int(line.split(",")[0]) for line in (out / "contdep.csv").read_text().splitlines()[1:]]
        assert ns == [4, 8]

    def test_checks_lists_suites(self, tmp_path):
        cfg, out = write_config(tmp_path, N=64, dt=0.01, t1=1.0, checks={"conservation_T": 0.2, "gronwall_T": 0.2})
        code = main(["checks", "--config", cfg, "--quiet"])
        m = manifest(out)
        names = {c["name"] for c in m["checks"]}
        for prefix in ("conservation[", "gronwall[", "exact_damping", "kato_single_mode", "biot_savart_divergence",
                       "advection_orthogonality", "w14_cancellation", "grad4_bounded"):
            assert any(n.startswith(prefix) for n in names), prefix
        # exit status is the conjunction of the listed verdicts
        assert code == (0 if all(c["passed"] for c in m["checks"]) else 1)
        assert any("burn-in" in n for n in m["notes"])

    def test_failing_check_exits_one(self, tmp_path):
        # an empty-width band far from 1 cannot contain the quantile ratio
        cfg, out = write_config(tmp_path, dt=0.05, tail={"times": [0.5, 1.0], "M": 4, "reference_time": 0.5,
                                                         "final_time": 1.0, "band": [50.0, 50.0], "chunk": 2})
        assert main(["tail-report", "--config", cfg, "--quiet"]) == 1
        m = manifest(out)
        assert m["passed"] is False and not m["checks"][0]["passed"]

    def test_gamma_zero_note(self, tmp_path):
        cfg, out = write_config(tmp_path, gamma=0.0, dt=0.01,
                                tail={"times": [0.1, 0.2], "M": 2, "reference_time": 0.1, "final_time": 0.2,
                                      "chunk": 2})
        main(["tail-report", "--config", cfg, "--quiet"])
        assert any("gamma>0 required" in n for n in manifest(out)["notes"])


class TestErrors:
    def test_bad_config(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("N: 32\nnoise: {alpha: 5.0, h: 4.5}\n")
        assert main(["simulate", "--config", str(p)]) == 2
        assert "alpha must exceed h+1" in capsys.readouterr().err

    def test_missing_config(self, tmp_path, capsys):
        assert main(["simulate", "--config", str(tmp_path / "nope.yaml")]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_initial_file(self, tmp_path):
        cfg, _ = write_config(tmp_path, initial={"kind": "file", "path": str(tmp_path / "absent.vort")})
        assert main(["simulate", "--config", cfg, "--quiet"]) == 2

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        cfg, _ = write_config(tmp_path)
        assert main(["simulate", "--config", cfg, "--quiet", "--out", str(blocker / "sub")]) == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["fly"])
        assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    cfg, out = write_config(tmp_path, t1=0.1)
    proc = subprocess.run([sys.executable, "-m", "vortlab", "simulate", "--config", cfg, "--quiet"],
                          capture_output=True, text=True, timeout=300)
    assert proc.returncode == 0, proc.stderr
    assert manifest(out)["passed"] is True
