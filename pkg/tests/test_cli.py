"""End-to-end checks of the command line interface."""

from __future__ import annotations

import json
import subprocess
import sys

import pytest

from streamfda.blockio import load_estimator
from streamfda.cli import main


def _simulate(tmp_path, name="stream.jsonl", blocks=6, **flags):
    path = tmp_path / name
    argv = ["simulate", "--blocks", str(blocks), "--out", str(path)]
    for key, value in flags.items():
        argv += [f"--{key.replace('_', '-')}", str(value)]
    assert main(argv) == 0
    return path


class TestBound:
    def test_table(self, capsys):
        assert main(["bound", "--max-L", "5"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 10
        assert "L=1 d=1 bound=0.84296" in lines
        assert "L=5 d=1 bound=0.96455" in lines
        assert "L=5 d=2 bound=0.95311" in lines


class TestSimulate:
    def test_deterministic_stream(self, tmp_path):
        a = _simulate(tmp_path, "a.jsonl", seed=4)
        b = _simulate(tmp_path, "b.jsonl", seed=4)
        c = _simulate(tmp_path, "c.jsonl", seed=5)
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()
        lines = a.read_text().strip().splitlines()
        assert len(lines) == 6
        assert json.loads(lines[0])["block_id"] == 1


class TestFit:
    def test_fit_writes_outputs(self, tmp_path, capsys):
        stream = _simulate(tmp_path)
        snap = tmp_path / "state.snap"
        curve = tmp_path / "mean.csv"
        surface = tmp_path / "cov.csv"
        rc = main(["fit", "--in", str(stream), "--snapshot", str(snap),
                   "--curve-out", str(curve), "--surface-out", str(surface),
                   "--surface-points", "21"])
        assert rc == 0
        out = capsys.readouterr().out
        assert out.startswith("K=6 h_mu=0.")
        assert " h_gamma=0." in out
        assert curve.read_text().splitlines()[0] == "K,t,value"
        assert surface.read_text().splitlines()[0] == "K,s,t,value"
        assert surface.read_text().splitlines()[1].startswith("6,0,0,")
        assert load_estimator(snap).blocks_seen == 6

    def test_empty_stream(self, tmp_path, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        assert main(["fit", "--in", str(empty)]) == 0
        assert capsys.readouterr().out.strip() == "K=0 h_mu=none h_gamma=none"

    def test_malformed_stream_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"block_id": 1}\n')
        assert main(["fit", "--in", str(bad)]) == 2
        assert "line 1:" in capsys.readouterr().err

    def test_domain_flags_widen_the_accepted_range(self, tmp_path, capsys):
        shifted = tmp_path / "wide.jsonl"
        shifted.write_text(
            '{"block_id":1,"subjects":[{"t":[0.2,1.4],"y":[0.0,1.0]}]}\n')
        assert main(["fit", "--in", str(shifted)]) == 2
        capsys.readouterr()
        assert main(["fit", "--in", str(shifted),
                     "--lo", "0", "--hi", "2"]) == 0

    def test_config_file_with_flag_precedence(self, tmp_path, capsys):
        stream = _simulate(tmp_path, blocks=2)
        cfg = tmp_path / "fit.json"
        cfg.write_text(json.dumps({"L": 4, "J_cov": 2}))
        snap = tmp_path / "s.snap"
        assert main(["fit", "--in", str(stream), "--config", str(cfg),
                     "--L", "2", "--snapshot", str(snap)]) == 0
        config = load_estimator(snap).config
        assert config.L == 2
        assert config.J_cov == 2

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        stream = _simulate(tmp_path, blocks=1)
        cfg = tmp_path / "fit.json"
        cfg.write_text(json.dumps({"bandwith": 0.3}))
        assert main(["fit", "--in", str(stream), "--config", str(cfg)]) == 1
        assert "bandwith" in capsys.readouterr().err


class TestResume:
    def test_split_resume_matches_one_shot(self, tmp_path, capsys):
        stream = _simulate(tmp_path, blocks=8)
        lines = stream.read_text().strip().splitlines()
        head = tmp_path / "head.jsonl"
        tail = tmp_path / "tail.jsonl"
        head.write_text("\n".join(lines[:5]) + "\n")
        tail.write_text("\n".join(lines[5:]) + "\n")

        full_snap = tmp_path / "full.snap"
        assert main(["fit", "--in", str(stream), "--snapshot",
                     str(full_snap), "--surface-points", "21"]) == 0
        one_shot = capsys.readouterr().out

        half_snap = tmp_path / "half.snap"
        assert main(["fit", "--in", str(head), "--snapshot", str(half_snap),
                     "--surface-points", "21"]) == 0
        capsys.readouterr()
        resumed_snap = tmp_path / "resumed.snap"
        assert main(["resume", "--snapshot", str(half_snap), "--in",
                     str(tail), "--snapshot-out", str(resumed_snap)]) == 0
        assert capsys.readouterr().out == one_shot
        assert resumed_snap.read_bytes() == full_snap.read_bytes()


class TestBatchFit:
    def test_reports_bandwidths(self, tmp_path, capsys):
        stream = _simulate(tmp_path)
        curve = tmp_path / "mean.csv"
        assert main(["batch-fit", "--in", str(stream), "--curve-out",
                     str(curve), "--surface-points", "21"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("K=6 h_mu=0.")
        assert len(curve.read_text().splitlines()) == 102

    def test_empty_stream_fails(self, tmp_path, capsys):
        empty = tmp_path / "none.jsonl"
        empty.write_text("\n")
        assert main(["batch-fit", "--in", str(empty)]) == 1


class TestCompare:
    def test_tiny_report(self, tmp_path, capsys):
        out_csv = tmp_path / "report.csv"
        rc = main(["compare", "--blocks", "6", "--reps", "1", "--L", "2",
                   "--checkpoints", "6", "--out", str(out_csv)])
        assert rc == 0
        printed = capsys.readouterr().out
        assert "L=2 K=6 eff_mean=" in printed
        header = out_csv.read_text().splitlines()[0]
        assert header.startswith("rep,K,eff_mean,eff_cov,h_mu_online")


class TestFpca:
    def test_from_snapshot_and_csv(self, tmp_path, capsys):
        stream = _simulate(tmp_path, blocks=6)
        snap = tmp_path / "state.snap"
        surface = tmp_path / "cov.csv"
        assert main(["fit", "--in", str(stream), "--snapshot", str(snap),
                     "--surface-out", str(surface),
                     "--surface-points", "21"]) == 0
        capsys.readouterr()

        out_csv = tmp_path / "fpca.csv"
        assert main(["fpca", "--snapshot", str(snap), "--components", "3",
                     "--out", str(out_csv)]) == 0
        from_snap = capsys.readouterr().out
        assert from_snap.startswith("lambda1=")
        assert "fve=" in from_snap
        assert out_csv.exists()

        assert main(["fpca", "--in", str(surface), "--components", "3"]) == 0
        from_csv = capsys.readouterr().out
        assert from_csv.splitlines()[0] == from_snap.splitlines()[0]

    def test_requires_a_source(self, capsys):
        assert main(["fpca"]) == 1
        assert "--snapshot or --in" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "streamfda", "bound",
                           "--max-L", "1"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines() == ["L=1 d=1 bound=0.84296",
                                        "L=1 d=2 bound=0.79290"]
