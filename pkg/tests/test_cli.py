"""Command-line interface: exit codes, log files, verify, report."""

import pytest

from bftensemble.cli import EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, main
from bftensemble.scenario import bundled_scenario_path

PLASTIC_BAG = str(bundled_scenario_path("av_plastic_bag"))
BREACH = str(bundled_scenario_path("common_mode_breach"))
FUZZ_N4 = str(bundled_scenario_path("fuzz_base_n4"))


def test_run_clean_scenario(capsys):
    assert main(["run", PLASTIC_BAG]) == EXIT_OK
    out = capsys.readouterr().out
    assert "av_plastic_bag" in out


def test_run_writes_logs(tmp_path, capsys):
    log_dir = tmp_path / "logs"
    assert main(["run", PLASTIC_BAG, "--log-dir", str(log_dir)]) == EXIT_OK
    capsys.readouterr()
    assert (log_dir / "decision.log").exists()
    assert (log_dir / "event.log").exists()
    assert (log_dir / "report.txt").exists()
    first = (log_dir / "decision.log").read_text().splitlines()[0]
    assert first.startswith("0|")


def test_run_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", PLASTIC_BAG, "--log-dir", str(a)])
    main(["run", PLASTIC_BAG, "--log-dir", str(b)])
    capsys.readouterr()
    for name in ("decision.log", "event.log", "report.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_run_seed_changes_event_log(tmp_path, capsys):
    # a lossy network actually consults the seed, unlike the lossless bases
    text = (bundled_scenario_path("fuzz_base_n4").read_text()
            .replace("drop_rate = 0.0", "drop_rate = 0.05"))
    lossy = tmp_path / "lossy.scn"
    lossy.write_text(text)
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", str(lossy), "--log-dir", str(a)])
    main(["run", str(lossy), "--seed", "8191", "--log-dir", str(b)])
    capsys.readouterr()
    assert (a / "event.log").read_bytes() != (b / "event.log").read_bytes()


def test_run_missing_file(capsys):
    assert main(["run", "/no/such/file.scn"]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_run_bad_scenario_text(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("n = 4\n")
    assert main(["run", str(bad)]) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_run_expected_violation_exits_ok(capsys):
    # the scenario declares expects_violation, so a breach is not a failure
    assert main(["run", BREACH]) == EXIT_OK
    capsys.readouterr()


def test_fuzz_prints_report_and_digest(capsys):
    assert main(["fuzz", FUZZ_N4, "--episodes", "5", "--seed", "7"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "episodes=5" in out
    assert any(line.startswith("report_digest|") for line in out.splitlines())


def test_fuzz_digest_is_stable(capsys):
    main(["fuzz", FUZZ_N4, "--episodes", "5", "--seed", "7"])
    first = capsys.readouterr().out
    main(["fuzz", FUZZ_N4, "--episodes", "5", "--seed", "7"])
    assert capsys.readouterr().out == first


def test_fuzz_requires_episodes_and_seed():
    with pytest.raises(SystemExit):
        main(["fuzz", FUZZ_N4])


def test_verify_clean_log(tmp_path, capsys):
    log_dir = tmp_path / "logs"
    main(["run", PLASTIC_BAG, "--log-dir", str(log_dir)])
    capsys.readouterr()
    assert main(["verify", str(log_dir / "decision.log")]) == EXIT_OK
    assert "no agreement violations" in capsys.readouterr().out


def test_verify_flags_violation(tmp_path, capsys):
    log = tmp_path / "decision.log"
    log.write_text("0|decided|stop|0,1,2|4|0|agreement-violation\n")
    assert main(["verify", str(log)]) == EXIT_VIOLATION
    assert "agreement violations" in capsys.readouterr().err


def test_verify_rejects_malformed(tmp_path, capsys):
    log = tmp_path / "decision.log"
    log.write_text("0|decided|-|0,1,2|4|0|-\n")
    assert main(["verify", str(log)]) == EXIT_USAGE
    capsys.readouterr()


def test_verify_rejects_gap_in_frames(tmp_path, capsys):
    log = tmp_path / "decision.log"
    log.write_text(
        "0|decided|stop|0,1,2|4|0|-\n2|decided|stop|0,1,2|4|0|-\n"
    )
    assert main(["verify", str(log)]) == EXIT_USAGE
    assert "contiguous" in capsys.readouterr().err


def test_verify_missing_file(capsys):
    assert main(["verify", "/no/such/decision.log"]) == EXIT_USAGE
    capsys.readouterr()


def test_report_prefers_report_txt(tmp_path, capsys):
    log_dir = tmp_path / "logs"
    main(["run", PLASTIC_BAG, "--log-dir", str(log_dir)])
    expected = (log_dir / "report.txt").read_text()
    capsys.readouterr()
    assert main(["report", str(log_dir)]) == EXIT_OK
    assert capsys.readouterr().out == expected


def test_report_missing_dir(capsys):
    assert main(["report", "/no/such/dir"]) == EXIT_USAGE
    capsys.readouterr()
