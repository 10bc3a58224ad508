from __future__ import annotations

import asyncio
from pathlib import Path
from typing import Any

import pytest

from ncergodic.dynamics import Pedigree
from ncergodic.errors import InvalidInputError, InvalidScenarioError, NoStableLimitError
from ncergodic.models import RunOverrides, UniformOptions
from ncergodic.runner import (
    WORKERS_ENV,
    ScenarioRunner,
    SuiteConfig,
    build_scenario,
    default_workers,
    resolve_settings,
    run_instance,
    run_suite,
)
from ncergodic.schema import SCENARIO_SCHEMA, dump_report, parse_scenario
from ncergodic.vna import Weight


def _payload(**changes: Any) -> dict[str, Any]:
    payload: dict[str, Any] = {
        "schema_version": SCENARIO_SCHEMA,
        "name": "identity-m2",
        "signature": [2],
        "state": [[[0.7, 0.0], [0.0, 0.3]]],
        "map": {"kind": "identity"},
        "input": {"kind": "blocks", "blocks": [[[1.0, 0.4], [0.4, 0.2]]]},
        "lambda": 1.0,
        "n_max": 3,
        "horizon": 6,
    }
    payload.update(changes)
    return payload


def _tracial_payload() -> dict[str, Any]:
    payload = _payload(
        name="yeadon-m2",
        mode="tracial_weight",
        input={"kind": "blocks", "blocks": [[[3.0, 1.0], [1.0, 0.5]]]},
    )
    del payload["state"]
    return payload


def test_resolve_settings_applies_overrides() -> None:
    scenario = parse_scenario(_payload())
    settings = resolve_settings(scenario)
    assert settings.n_max == 3
    assert settings.check_horizon == 24
    assert settings.uniform.check_horizon == 24
    assert not settings.tolerances.strict

    overrides = RunOverrides(tol=1e-6, strict=True, n_max=1, horizon=4)
    settings = resolve_settings(scenario, overrides)
    assert settings.n_max == 1
    assert settings.horizon == 4
    assert settings.check_horizon == 16
    assert settings.tolerances.residual == 1e-6
    assert settings.tolerances.strict
    assert settings.solver.strict


def test_scenario_runner_certifies_identity_map() -> None:
    runner = ScenarioRunner(parse_scenario(_payload()))
    report = asyncio.run(runner.run())
    assert report.passed
    assert not report.unstable
    assert report.conditions.passed
    assert [c.index for c in report.pointwise] == [0, 1, 2, 3]
    assert report.uniform is not None
    assert report.uniform.kind == "uniform"
    assert report.limit is not None and report.limit.stable
    assert report.yeadon is None
    assert report.pointwise[0].sweeps is not None
    assert report.scenario["lambda"] == 1.0


def test_scenario_runner_from_path(tmp_path: Path) -> None:
    path = tmp_path / "scenario.json"
    path.write_text(parse_scenario(_payload()).model_dump_json(by_alias=True), encoding="utf-8")
    runner = ScenarioRunner.from_path(path, overrides=RunOverrides(n_max=1))
    report = runner.run_sync()
    assert len(report.pointwise) == 2


def test_tracial_weight_scenario_adds_yeadon_certificate() -> None:
    report = ScenarioRunner(parse_scenario(_tracial_payload())).run_sync()
    assert report.mode == "tracial_weight"
    assert report.yeadon is not None
    assert report.yeadon.kind == "yeadon_tracial"
    assert report.yeadon.passed
    assert report.passed


def test_unstable_limit_fails_the_scenario() -> None:
    scenario = parse_scenario(_payload(horizon=3, uniform={"window": 10}))
    report = ScenarioRunner(scenario).run_sync()
    assert report.unstable
    assert report.uniform is None
    assert not report.passed
    with pytest.raises(NoStableLimitError):
        ScenarioRunner(scenario, overrides=RunOverrides(strict=True)).run_sync()


def test_build_scenario_markov_tensor_uses_outer_algebra() -> None:
    payload = _payload(
        signature=[1],
        state=[[[1.0]]],
        map={"kind": "markov_tensor", "kernel": [[0.9, 0.1], [0.2, 0.8]]},
        input={"kind": "random", "seed": 3, "trace": 2.0},
    )
    built = build_scenario(parse_scenario(payload))
    assert built.algebra.signature == (1, 1)
    assert built.conditions.passed
    assert built.a.integral() == pytest.approx(2.0)


def test_markov_identity_kernel_scenario_runs_without_measure() -> None:
    payload = _payload(
        signature=[2],
        state=[[[0.5, 0.0], [0.0, 0.5]]],
        map={"kind": "markov_tensor", "kernel": [[1.0, 0.0], [0.0, 1.0]]},
        input={"kind": "random", "seed": 5, "trace": 2.0},
        n_max=2,
    )
    report = ScenarioRunner(parse_scenario(payload)).run_sync()
    assert report.conditions.passed
    assert report.passed
    assert not report.unstable


def test_build_scenario_markov_tensor_needs_state_mode() -> None:
    payload = _payload(
        mode="tracial_weight",
        map={"kind": "markov_tensor", "kernel": [[1.0]]},
    )
    del payload["state"]
    with pytest.raises(InvalidScenarioError):
        build_scenario(parse_scenario(payload))


def test_build_scenario_other_map_kinds() -> None:
    cond_payload = _payload(
        state=[[[0.8, 0.0], [0.0, 0.2]]],
        map={"kind": "cond_exp", "partition": [[[0], [1]]]},
    )
    cond = build_scenario(parse_scenario(cond_payload))
    assert cond.conditions.passed
    kraus = build_scenario(
        parse_scenario(
            _payload(map={"kind": "kraus", "terms": [{"operator": [[1.0, 0.0], [0.0, 0.5]]}]})
        )
    )
    assert kraus.model.pedigree is Pedigree.CONSTRUCTED_POSITIVE
    assert kraus.conditions.passed
    random_map = build_scenario(parse_scenario(_payload(map={"kind": "random", "seed": 4})))
    assert random_map.conditions.passed
    tracial = build_scenario(parse_scenario(_tracial_payload()))
    assert isinstance(tracial.reference, Weight)


def test_build_scenario_embeds_unit_and_rejects_indefinite_input() -> None:
    built = build_scenario(parse_scenario(_payload(input={"kind": "embed"})))
    assert built.a.integral() == pytest.approx(1.0)
    with pytest.raises(InvalidScenarioError):
        build_scenario(
            parse_scenario(_payload(input={"kind": "embed", "blocks": [[[1.0, 0.0], [0.0, -1.0]]]}))
        )


def test_build_scenario_reports_non_faithful_state() -> None:
    with pytest.raises(InvalidInputError):
        build_scenario(parse_scenario(_payload(state=[[[1.0, 0.0], [0.0, 0.0]]])))


def test_default_workers_reads_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert default_workers() == 3
    monkeypatch.setenv(WORKERS_ENV, "0")
    with pytest.raises(InvalidInputError):
        default_workers()
    monkeypatch.setenv(WORKERS_ENV, "lots")
    with pytest.raises(InvalidInputError):
        default_workers()
    monkeypatch.delenv(WORKERS_ENV)
    assert default_workers() >= 1


def _small_config() -> SuiteConfig:
    return SuiteConfig(n_max=2, horizon=4, uniform=UniformOptions(window=2))


def test_run_instance_is_deterministic() -> None:
    first = run_instance(1, 7, [2], _small_config())
    second = run_instance(1, 7, [2], _small_config())
    assert first == second
    assert first.lam in (0.1, 1.0, 10.0)
    assert 0.1 <= first.input_trace <= 10.0
    assert len(first.pointwise) == 3


def test_suite_is_independent_of_worker_count() -> None:
    sequential = asyncio.run(run_suite(11, 3, [2], _small_config(), workers=1))
    parallel = asyncio.run(run_suite(11, 3, [2], _small_config(), workers=3))
    assert dump_report(sequential) == dump_report(parallel)
    assert [inst.index for inst in sequential.instances] == [0, 1, 2]
    assert sequential.count == 3
    assert sequential.check_horizon == 16
    assert sequential.pass_rate == sequential.passed_count / 3


def test_default_suite_on_two_blocks_passes() -> None:
    summary = asyncio.run(run_suite(7, 20, [2, 3], workers=4))
    assert summary.horizon == 20
    assert summary.check_horizon == 80
    assert summary.unstable_rate <= 0.05
    assert summary.pass_rate == 1.0
    assert summary.passed
    for instance in summary.instances:
        assert instance.type_infinity
        assert instance.pre_weak is not False


def test_suite_verdict_respects_unstable_rate() -> None:
    config = SuiteConfig(n_max=1, horizon=2, uniform=UniformOptions(window=5), max_unstable_rate=0.05)
    summary = asyncio.run(run_suite(2, 2, [2], config, workers=2))
    assert summary.unstable_count == 2
    assert summary.unstable_rate == 1.0
    assert not summary.passed


def test_suite_rejects_empty_requests() -> None:
    with pytest.raises(InvalidInputError):
        asyncio.run(run_suite(0, 0, [2]))
    with pytest.raises(InvalidInputError):
        asyncio.run(run_suite(0, 1, []))
