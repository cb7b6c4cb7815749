import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from kljn_transient.cli import (
    EXIT_FAILURE,
    EXIT_NON_PHYSICAL,
    EXIT_OK,
    EXIT_PAIRING,
    RESULTS_HEADER,
    SUMMARY_HEADER,
    main,
)
from kljn_transient.config import build_config, parse_text
from kljn_transient.noise import read_record


@pytest.fixture
def small(tmp_path):
    """--set options for a fast configuration writing into tmp_path."""
    return [
        "--set", "record_length=65536",
        "--set", "runs=20",
        "--set", "repeats=2",
        "--set", f"database_dir={tmp_path / 'db'}",
        "--set", f"output_dir={tmp_path / 'out'}",
    ]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestSolve:
    def test_prints_the_temperature_table(self, capsys):
        assert main(["solve"]) == EXIT_OK
        out = capsys.readouterr().out
        for text in ("1.4266e+15", "1.7164e+15", "1.2072e+15", "1.4084e+15", "2.081666"):
            assert text in out

    def test_non_physical_quad(self, capsys):
        assert main(["solve", "--set", "r_la=12e3"]) == EXIT_NON_PHYSICAL
        assert "non-physical" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "argv",
        [
            ["solve", "--set", "r_ha=3e3", "--set", "r_la=11e3", "--set", "r_hb=2e3", "--set", "r_lb=9e3"],
            ["solve", "--set", "z0=-1"],
            ["solve", "--set", "bogus=1"],
            ["solve", "--config", "/nonexistent/run.cfg"],
            ["no-such-command"],
            [],
        ],
    )
    def test_invalid_input_exits_one(self, argv, capsys):
        assert main(argv) == EXIT_FAILURE

    def test_version(self, capsys):
        assert main(["--version"]) == EXIT_OK
        assert capsys.readouterr().out.strip()

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "kljn_transient", "solve"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "1.4266e+15" in proc.stdout


class TestGenNoise:
    def test_writes_one_record_per_role(self, small, tmp_path, capsys):
        # default record length: enough in-band bins for a 5% RMS check
        assert main(["gen-noise", *small, "--set", "record_length=8388608"]) == EXIT_OK
        files = sorted((tmp_path / "db").glob("*.knr"))
        assert len(files) == 4
        for path in files:
            assert path.read_bytes()[:8] == b"KLJNNOIS"
            rec = read_record(path)
            assert rec.rms() == pytest.approx(rec.spec.target_rms, rel=0.05)
            assert np.all(np.isfinite(rec.samples))

    def test_is_reproducible(self, small, tmp_path):
        def digests():
            return {p.name: hashlib.md5(p.read_bytes()).hexdigest() for p in (tmp_path / "db").glob("*.knr")}

        main(["gen-noise", *small])
        first = digests()
        main(["gen-noise", *small])
        assert digests() == first

    def test_seed_changes_the_records(self, small, tmp_path):
        main(["gen-noise", *small])
        a = {p.name: p.read_bytes() for p in (tmp_path / "db").glob("*.knr")}
        main(["gen-noise", *small, "--set", "noise_seed=99"])
        b = {p.name: p.read_bytes() for p in (tmp_path / "db").glob("*.knr")}
        assert len(b) == 4
        assert a.keys().isdisjoint(b.keys())


class TestReproduce:
    def test_smoke(self, small, tmp_path, capsys):
        assert main(["reproduce", "--smoke", *small]) == EXIT_OK
        out_dir = tmp_path / "out"
        results = read_csv(out_dir / "results.csv")
        assert results[0] == RESULTS_HEADER
        assert len(results) == 1 + 8 * 2 * 2
        summary = read_csv(out_dir / "summary.csv")
        assert summary[0] == SUMMARY_HEADER
        assert len(summary) == 17
        assert {row[-1] for row in summary[1:]} == {"void"}
        report = json.loads((out_dir / "report.json").read_text())
        assert report["smoke"] and report["passed"] is None
        assert report["cases"]["A"]["runs"] == 10
        assert "void" in capsys.readouterr().out

    def test_case_subset_and_config_echo(self, small, tmp_path):
        code = main(["reproduce", "--cases", "a,E", *small])
        assert code in (EXIT_OK, EXIT_FAILURE)
        out_dir = tmp_path / "out"
        summary = read_csv(out_dir / "summary.csv")
        assert [row[:2] for row in summary[1:]] == [["A", "voltage"], ["A", "current"], ["E", "voltage"], ["E", "current"]]
        report = json.loads((out_dir / "report.json").read_text())
        assert set(report["cases"]) == {"A", "E"}
        assert set(report["pair_checks"]) == {"A/E voltage", "A/E current"}
        cfg = build_config(parse_text(report["config"]))
        assert (cfg.runs, cfg.repeats, cfg.record_length) == (20, 2, 65536)
        assert code == (EXIT_OK if report["passed"] else EXIT_FAILURE)

    def test_stored_database_gives_the_same_results(self, small, tmp_path):
        main(["reproduce", "--cases", "C", *small])
        in_memory = (tmp_path / "out" / "results.csv").read_text()
        main(["gen-noise", *small])
        main(["reproduce", "--cases", "C", "--workers", "2", *small])
        assert (tmp_path / "out" / "results.csv").read_text() == in_memory

    def test_unknown_case(self, small):
        assert main(["reproduce", "--cases", "Q", *small]) == EXIT_FAILURE

    def test_pairing_exhaustion_exits_three(self, small, capsys):
        argv = ["reproduce", "--cases", "E", *small, "--set", "slope_tolerance=1e-12", "--set", "attempt_budget=1"]
        assert main(argv) == EXIT_PAIRING
        assert "case E" in capsys.readouterr().err

    def test_non_physical_exits_two(self, small):
        assert main(["reproduce", "--smoke", *small, "--set", "r_la=12e3"]) == EXIT_NON_PHYSICAL


class TestOtherCommands:
    def test_steady_state_writes_a_report(self, small, tmp_path, capsys):
        code = main(["steady-state", *small, "--set", "ss_duration=2"])
        assert code in (EXIT_OK, EXIT_FAILURE)
        report = json.loads((tmp_path / "out" / "steady_state.json").read_text())
        assert code == (EXIT_OK if report["passed"] else EXIT_FAILURE)
        for key in ("u_ms_HL", "i_ms_LH", "p_flow_HL", "u_ms_hl_lh"):
            assert key in report["observables"]
        assert report["observables"]["u_ms_HL"]["lumped"] == pytest.approx(0.78125)
        assert "Monte Carlo error" in capsys.readouterr().out

    def test_steady_state_rejects_short_duration(self, small):
        assert main(["steady-state", *small, "--set", "ss_duration=1e-4"]) == EXIT_FAILURE

    def test_run(self, small, tmp_path, capsys):
        argv = ["run", *small, "--set", "state=LH", "--set", "defense=true", "--set", "tau_multiples=1,2"]
        assert main(argv) == EXIT_OK
        rows = read_csv(tmp_path / "out" / "results.csv")
        assert rows[0] == RESULTS_HEADER
        assert {r[0] for r in rows[1:]} == {"LH-defense-tau1", "LH-defense-tau2"}
        assert len(rows) == 1 + 2 * 2 * 2

    def test_dump_traces(self, small, tmp_path):
        out = tmp_path / "tr.csv"
        assert main(["dump-traces", *small, "--repeat", "1", "--run", "3", "--output", str(out)]) == EXIT_OK
        assert read_csv(out)[0] == ["t_s", "u_a_v", "i_a_a", "u_b_v", "i_b_a"]
        data = np.loadtxt(out, delimiter=",", skiprows=1)
        assert data.shape == (100, 5)
        assert np.diff(data[:, 0]) == pytest.approx(np.full(99, 1e-7))
        assert np.all(np.isfinite(data))

    def test_dump_traces_is_deterministic(self, small, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["dump-traces", *small, "--set", "defense=true", "--output", str(a)])
        main(["dump-traces", *small, "--set", "defense=true", "--output", str(b)])
        assert a.read_text() == b.read_text()

    def test_negative_index_is_a_usage_error(self, small):
        assert main(["dump-traces", *small, "--run", "-1"]) == EXIT_FAILURE
