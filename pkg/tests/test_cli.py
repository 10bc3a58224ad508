from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import pytest

from ncergodic.cli import build_parser, main
from ncergodic.schema import (
    EXIT_CERTIFICATE_FAILURE,
    EXIT_INVALID_INPUT,
    EXIT_NUMERICAL_BREAKDOWN,
    EXIT_OK,
    SCENARIO_SCHEMA,
    SUITE_SCHEMA,
)


def _write_scenario(path: Path, **changes: Any) -> Path:
    payload: dict[str, Any] = {
        "schema_version": SCENARIO_SCHEMA,
        "name": "identity-m2",
        "signature": [2],
        "state": [[[0.7, 0.0], [0.0, 0.3]]],
        "map": {"kind": "identity"},
        "input": {"kind": "blocks", "blocks": [[[1.0, 0.4], [0.4, 0.2]]]},
        "lambda": 1.0,
        "n_max": 2,
        "horizon": 6,
    }
    payload.update(changes)
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def test_parser_defaults() -> None:
    args = build_parser().parse_args(["suite", "--seed", "1", "--count", "2"])
    assert args.dims == [2, 3]
    assert args.n_max == 12
    assert args.horizon == 20
    assert args.max_unstable_rate == 0.05
    assert not args.strict


def test_parser_rejects_bad_dims() -> None:
    with pytest.raises(SystemExit) as excinfo:
        build_parser().parse_args(["suite", "--seed", "1", "--count", "2", "--dims", "2,0"])
    assert excinfo.value.code == 2


def test_verify_writes_report_to_stdout(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    scenario = _write_scenario(tmp_path / "scenario.json")
    assert main(["verify", str(scenario)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is True
    assert report["name"] == "identity-m2"
    assert len(report["pointwise"]) == 3


def test_verify_reruns_are_byte_identical(tmp_path: Path) -> None:
    scenario = _write_scenario(tmp_path / "scenario.json")
    first = tmp_path / "first.json"
    second = tmp_path / "second.json"
    assert main(["verify", str(scenario), "--out", str(first)]) == EXIT_OK
    assert main(["verify", str(scenario), "--out", str(second)]) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()


def test_verify_overrides_reach_the_report(tmp_path: Path) -> None:
    scenario = _write_scenario(tmp_path / "scenario.json")
    out = tmp_path / "report.json"
    code = main(
        [
            "verify",
            str(scenario),
            "--n-max",
            "1",
            "--horizon",
            "5",
            "--check-horizon",
            "7",
            "--out",
            str(out),
        ]
    )
    assert code == EXIT_OK
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["n_max"] == 1
    assert report["horizon"] == 5
    assert report["check_horizon"] == 7
    assert "trace_7" in report["uniform"]["residuals"]
    assert "trace_8" not in report["uniform"]["residuals"]


def test_verify_reports_non_faithful_state(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    scenario = _write_scenario(tmp_path / "scenario.json", state=[[[1.0, 0.0], [0.0, 0.0]]])
    assert main(["verify", str(scenario)]) == EXIT_INVALID_INPUT
    captured = capsys.readouterr()
    assert captured.err.startswith("NotFaithfulError")
    assert captured.out == ""


def test_verify_rejects_malformed_scenario(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    scenario = _write_scenario(tmp_path / "scenario.json", schema_version="other/1")
    assert main(["verify", str(scenario)]) == EXIT_INVALID_INPUT
    assert "InvalidScenarioError" in capsys.readouterr().err


def test_verify_unstable_limit_exit_codes(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    scenario = _write_scenario(tmp_path / "scenario.json", horizon=3, uniform={"window": 10})
    assert main(["verify", str(scenario), "--out", str(tmp_path / "r.json")]) == EXIT_CERTIFICATE_FAILURE
    assert main(["verify", str(scenario), "--strict"]) == EXIT_NUMERICAL_BREAKDOWN
    assert capsys.readouterr().err.startswith("NoStableLimitError")


def test_suite_writes_summary_and_rejects_zero_count(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    out = tmp_path / "suite.json"
    args = ["suite", "--seed", "3", "--count", "2", "--dims", "2", "--n-max", "1", "--horizon", "3"]
    code = main([*args, "--workers", "2", "--out", str(out)])
    summary = json.loads(out.read_text(encoding="utf-8"))
    assert summary["schema_version"] == SUITE_SCHEMA
    assert summary["count"] == 2
    assert code == (EXIT_OK if summary["passed"] else EXIT_CERTIFICATE_FAILURE)

    again = tmp_path / "again.json"
    main([*args, "--workers", "1", "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()

    assert main(["suite", "--seed", "3", "--count", "0"]) == EXIT_INVALID_INPUT
    assert "count=0" in capsys.readouterr().err


def test_export_csv_defaults_next_to_report(tmp_path: Path) -> None:
    scenario = _write_scenario(tmp_path / "scenario.json")
    report = tmp_path / "report.json"
    assert main(["verify", str(scenario), "--out", str(report)]) == EXIT_OK
    assert main(["export-csv", str(report)]) == EXIT_OK
    lines = (tmp_path / "report.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("instance,kind,n,lambda,passed")
    assert len(lines) == 1 + 3 + 1


def test_export_csv_rejects_unknown_report(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = tmp_path / "scenario.json"
    _write_scenario(path)
    assert main(["export-csv", str(path)]) == EXIT_INVALID_INPUT
    assert "unknown report schema" in capsys.readouterr().err
