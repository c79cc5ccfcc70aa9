import csv
import hashlib
import json
import math
from pathlib import Path

import pytest
import yaml

from sftlab import cli, config, graphs as gr
from sftlab.errors import ConfigError

GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


class TestCommands:
    def test_partition_at_zero(self, tmp_path, capsys):
        code, _, _ = run(capsys, "partition", "--lambdas", "0", "--out", str(tmp_path))
        assert code == 0
        table = rows(tmp_path / "partition.csv")
        assert table[0] == ["lambda", "re_Z", "im_Z", "stderr"]
        assert [float(x) for x in table[1]] == [0.0, 1.0, 0.0, 0.0]

    def test_twopoint_default(self, tmp_path, capsys):
        code, out, _ = run(capsys, "twopoint", "--out", str(tmp_path))
        assert code == 0
        assert "analytic" in out
        row = dict(zip(*rows(tmp_path / "twopoint.csv")))
        # one-particle zero mode: omega = m = 1 on every cell, g = 1 on [1, 2.6]
        assert float(row["analytic"]) == pytest.approx(math.exp(-1) * 1.6, rel=1e-12)
        assert float(row["n_sigma"]) < 3

    def test_graphs_n1(self, tmp_path, capsys):
        code, _, _ = run(capsys, "graphs", "--n", "1", "--out", str(tmp_path))
        assert code == 0
        data = json.loads((tmp_path / "graphs_n1.json").read_text())
        assert len(data) == 6 == len(gr.enumerate_graphs(1))
        assert data == json.loads((GOLDEN / "graphs_n1.json").read_text())
        weights = json.loads((tmp_path / "weights_n1.json").read_text())
        assert sum(w["pairings"] for w in weights) == math.factorial(3)

    def test_fock_dump(self, tmp_path, capsys):
        assert run(capsys, "fock-dump", "--out", str(tmp_path))[0] == 0
        table = rows(tmp_path / "heat_trace.csv")
        assert float(table[-1][-1]) < 1e-6
        assert json.loads((tmp_path / "basis.json").read_text())

    def test_surface_and_spectrum(self, tmp_path, capsys):
        assert run(capsys, "surface", "--out", str(tmp_path))[0] == 0
        summary = json.loads((tmp_path / "surface.json").read_text())
        assert summary["euler_characteristic"] == -2 and summary["violations"] == []
        assert (tmp_path / "surface.mesh").read_text().startswith("# sftlab surface mesh")
        assert run(capsys, "spectrum", "--set", "surfaces.graph=torus", "--set",
                   "surfaces.count=10", "--out", str(tmp_path / "s"))[0] == 0
        table = rows(tmp_path / "s" / "spectrum.csv")
        assert float(table[1][1]) == pytest.approx(1.0, abs=1e-9)

    def test_detlap_torus(self, tmp_path, capsys):
        assert run(capsys, "detlap", "--set", "surfaces.graph=torus",
                   "--out", str(tmp_path))[0] == 0
        row = dict(zip(*rows(tmp_path / "detlap.csv")))
        assert float(row["rel_error"]) < 0.02

    def test_moment_and_activity(self, tmp_path, capsys):
        assert run(capsys, "moment", "--order", "2", "--set", "measure.n_samples=2000",
                   "--out", str(tmp_path))[0] == 0
        row = dict(zip(*rows(tmp_path / "moment.csv")))
        g, mc, se = (float(row[k]) for k in ("graph_value", "mc_estimate", "mc_stderr"))
        assert abs(g - mc) < 3 * se
        assert run(capsys, "activity", "--out", str(tmp_path / "a"))[0] == 0
        data = json.loads((tmp_path / "a" / "activity.json").read_text())
        assert all(math.isfinite(x) for x in data["value"])

    def test_fk_check(self, tmp_path, capsys):
        assert run(capsys, "fk-check", "--set", "feynman_kac.n_samples=500",
                   "--out", str(tmp_path))[0] == 0
        assert rows(tmp_path / "feynman_kac.csv")[1][-1] == "1"


class TestManifest:
    def test_files_and_checksums(self, tmp_path, capsys):
        run(capsys, "partition", "--lambdas", "0", "1", "--set", "partition.n_samples=200",
            "--out", str(tmp_path))
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert [f["file"] for f in man["files"]] == ["partition.csv"]
        digest = hashlib.sha256((tmp_path / "partition.csv").read_bytes()).hexdigest()
        assert man["files"][0]["sha256"] == digest
        assert man["config_hash"] == config.config_hash(man["config"])

    def test_reproducible(self, tmp_path, capsys):
        for d in ("a", "b"):
            run(capsys, "partition", "--lambdas", "0.5", "2", "--set", "partition.n_samples=300",
                "--seed", "4", "--out", str(tmp_path / d))
        assert (tmp_path / "a" / "partition.csv").read_bytes() == \
            (tmp_path / "b" / "partition.csv").read_bytes()
        run(capsys, "partition", "--lambdas", "0.5", "2", "--set", "partition.n_samples=300",
            "--seed", "5", "--out", str(tmp_path / "c"))
        assert (tmp_path / "a" / "partition.csv").read_bytes() != \
            (tmp_path / "c" / "partition.csv").read_bytes()

    def test_hash_ignores_key_order(self, tmp_path):
        a = {"vertex": {"v": 0.1, "eps": 0.4}, "global": {"seed": 3}}
        b = {"global": {"seed": 3}, "vertex": {"eps": 0.4, "v": 0.1}}
        for name, tree in (("a.yaml", a), ("b.yaml", b)):
            (tmp_path / name).write_text(yaml.safe_dump(tree, sort_keys=False))
        ca, cb = (config.build(tmp_path / n) for n in ("a.yaml", "b.yaml"))
        assert config.config_hash(ca) == config.config_hash(cb)
        assert config.config_hash(ca) != config.config_hash(config.default_config())


class TestValidation:
    def test_default_is_clean(self, capsys):
        code, out, _ = run(capsys, "validate")
        assert code == 0 and json.loads(out)["violations"] == []

    def test_v_range(self, tmp_path, capsys):
        (tmp_path / "c.yaml").write_text("vertex:\n  v: 0.5\n")
        code, out, _ = run(capsys, "validate", "--config", str(tmp_path / "c.yaml"))
        assert code == 2
        assert any("v ∈ (0, L0/4)" in v for v in json.loads(out)["violations"])

    def test_zero_mass(self, capsys):
        code, out, _ = run(capsys, "validate", "--set", "global.m=0")
        assert code == 2 and "m > 0 required" in json.loads(out)["violations"]

    def test_every_violation_listed(self, capsys):
        code, out, _ = run(capsys, "validate", "--set", "global.m=0", "--set", "vertex.v=0.5",
                           "--set", "surfaces.convention=other")
        bad = json.loads(out)["violations"]
        assert len(bad) == 3

    def test_parse_error_position(self, tmp_path, capsys):
        (tmp_path / "c.yaml").write_text("vertex:\n  v: [0.1,\n")
        code, _, err = run(capsys, "validate", "--config", str(tmp_path / "c.yaml"))
        assert code == 2
        assert "line 3, column 1" in json.loads(err)["message"]

    def test_unknown_key(self, capsys):
        code, _, err = run(capsys, "partition", "--set", "vertex.width=1")
        assert code == 2
        assert json.loads(err)["violations"] == ["unknown key: vertex.width"]

    def test_type_error_reported(self):
        cfg = config.default_config()
        cfg["global"]["seed"] = 1.5
        assert config.violations(cfg) == ["global.seed must be an integer"]
        with pytest.raises(ConfigError):
            config.check(cfg)


class TestExitCodes:
    def test_constraint_is_config_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "surface", "--set", "surfaces.widths=[2.0, 1.0, 1.3]",
                           "--out", str(tmp_path))
        assert code == 2
        assert "vertex 0" in json.loads(err)["message"]
        assert (tmp_path / "error.json").exists()

    def test_numeric(self, tmp_path, capsys):
        code, _, err = run(capsys, "detlap", "--set", "surfaces.graph=torus", "--set",
                           "surfaces.h=0.2", "--set", "surfaces.richardson=false",
                           "--out", str(tmp_path))
        assert code == 3
        assert json.loads(err)["error"] == "NumericError"

    def test_capacity(self, tmp_path, capsys):
        code, _, err = run(capsys, "moment", "--set", "graphs.max_intermediate=10",
                           "--set", "graphs.mc=false", "--out", str(tmp_path))
        assert code == 4
        assert json.loads(err)["error"] == "CapacityError"
