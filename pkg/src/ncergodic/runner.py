from __future__ import annotations

import asyncio
import logging
import math
import os
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import (
    ConditionReport,
    ExtendedMap,
    KrausTerm,
    PositiveMapModel,
    check_conditions,
    example_cond_expectation,
    example_tensor_markov,
    explicit_map,
    extend_l1,
    identity_map,
    kraus_map,
    random_certified_map,
)
from .errors import (
    InvalidInputError,
    InvalidScenarioError,
    NoStableLimitError,
    NumericalBreakdownError,
)
from .matalg import is_psd
from .maxerg import (
    Certificate,
    PipelineResult,
    pre_weak_type_predicate,
    theorem_pipeline,
    type_infinity_check,
    yeadon_tracial,
)
from .models import (
    BlocksInputSpec,
    CertificateRecord,
    CondExpSpec,
    ExplicitMapSpec,
    IdentityMapSpec,
    InstanceSummary,
    KrausMapSpec,
    MarkovTensorSpec,
    RandomInputSpec,
    RandomMapSpec,
    RunOverrides,
    Scenario,
    ScenarioReport,
    SolverOptions,
    SuiteSummary,
    Tolerances,
    UniformOptions,
    UnsetType,
)
from .schema import (
    REPORT_SCHEMA,
    SUITE_SCHEMA,
    certificate_record,
    limit_record,
    load_scenario,
    matrix_array,
)
from .vna import (
    Algebra,
    DensityReference,
    LOneElement,
    Weight,
    embed_l1,
    make_state,
    make_tracial_weight,
    positive_l1,
    random_element,
    random_state,
)

logger = logging.getLogger(__name__)

WORKERS_ENV = "NCERGODIC_WORKERS"
DEFAULT_MAX_UNSTABLE_RATE = 0.05
SUITE_LAMBDAS = (0.1, 1.0, 10.0)
SUITE_TRACE_RANGE = (0.1, 10.0)
# Pre-weak (1,1) constant for the uniform certificate tested at threshold 4 lambda.
PRE_WEAK_CONSTANT = 8.0


@dataclass(frozen=True, slots=True, eq=False)
class BuiltScenario:
    """Domain objects assembled from a scenario file.

    Attributes:
        algebra: Algebra the run takes place in.
        reference: State or tracial weight.
        model: The positive map `T`.
        a: Positive L^1 input.
        conditions: Condition report of `model`.
        ext: Certified extension of `model`.
    """

    algebra: Algebra
    reference: DensityReference
    model: PositiveMapModel
    a: LOneElement
    conditions: ConditionReport
    ext: ExtendedMap


@dataclass(frozen=True, slots=True)
class RunSettings:
    """Resolved run parameters after applying overrides."""

    n_max: int
    horizon: int
    check_horizon: int
    solver: SolverOptions
    uniform: UniformOptions
    tolerances: Tolerances


def _is_unset(value: Any) -> bool:
    return isinstance(value, UnsetType)


def resolve_settings(scenario: Scenario, overrides: RunOverrides | None = None) -> RunSettings:
    """Merge command-line overrides into the scenario's own settings."""
    overrides = overrides or RunOverrides()

    def pick(base_value: Any, override_value: Any) -> Any:
        if _is_unset(override_value):
            return base_value
        return override_value

    strict = pick(scenario.tolerances.strict, overrides.strict)
    horizon = pick(scenario.horizon, overrides.horizon)
    check_horizon = pick(scenario.check_horizon, overrides.check_horizon)
    if check_horizon is None:
        check_horizon = 4 * horizon
    tolerances = Tolerances(
        residual=pick(scenario.tolerances.residual, overrides.tol),
        eps_kernel=scenario.tolerances.eps_kernel,
        strict=strict,
    )
    solver = SolverOptions(
        tol_obj=scenario.solver.tol_obj,
        tol_gap=scenario.solver.tol_gap,
        max_sweeps=scenario.solver.max_sweeps,
        stall_gap=scenario.solver.stall_gap,
        strict=strict,
    )
    uniform = UniformOptions(
        check_horizon=check_horizon,
        cluster_tol=scenario.uniform.cluster_tol,
        window=scenario.uniform.window,
    )
    return RunSettings(
        n_max=pick(scenario.n_max, overrides.n_max),
        horizon=horizon,
        check_horizon=check_horizon,
        solver=solver,
        uniform=uniform,
        tolerances=tolerances,
    )


def _blocks(specs: Sequence[Any]) -> list[np.ndarray]:
    return [matrix_array(spec) for spec in specs]


def _build_map(
    scenario: Scenario,
    algebra: Algebra,
    reference: DensityReference,
) -> tuple[Algebra, DensityReference, PositiveMapModel]:
    spec = scenario.map
    if isinstance(spec, IdentityMapSpec):
        return algebra, reference, identity_map(algebra)
    if isinstance(spec, KrausMapSpec):
        terms = [
            KrausTerm(t.source, t.target, matrix_array(t.operator), t.weight) for t in spec.terms
        ]
        return algebra, reference, kraus_map(algebra, terms)
    if isinstance(spec, MarkovTensorSpec):
        if scenario.mode != "state":
            raise InvalidScenarioError("markov_tensor maps need an inner state")
        outer, state, model = example_tensor_markov(spec.kernel, algebra, reference, spec.mu)
        return outer, state, model
    if isinstance(spec, CondExpSpec):
        return algebra, reference, example_cond_expectation(algebra, reference, spec.partition)
    if isinstance(spec, ExplicitMapSpec):
        return algebra, reference, explicit_map(algebra, matrix_array(spec.matrix))
    if isinstance(spec, RandomMapSpec):
        return algebra, reference, random_certified_map(spec.seed, algebra, reference)
    raise InvalidScenarioError(f"unsupported map kind {spec.kind!r}")


def _build_input(
    scenario: Scenario,
    algebra: Algebra,
    reference: DensityReference,
) -> LOneElement:
    spec = scenario.input
    if isinstance(spec, BlocksInputSpec):
        return positive_l1(algebra, _blocks(spec.blocks))
    if isinstance(spec, RandomInputSpec):
        rng = np.random.default_rng(spec.seed)
        x = random_element(algebra, rng, positive=True)
        return positive_l1(algebra, x * (spec.trace / x.trace().real))
    x = algebra.identity() if spec.blocks is None else algebra.hermitian(_blocks(spec.blocks))
    if not is_psd(x):
        raise InvalidScenarioError("embedded input must be positive semidefinite")
    return embed_l1(x, reference)


def build_scenario(scenario: Scenario) -> BuiltScenario:
    """Assemble and certify the domain objects a scenario describes.

    Raises:
        InvalidInputError: On inconsistent data or a map failing its conditions.
    """
    algebra = Algebra(tuple(scenario.signature))
    reference: DensityReference
    if scenario.mode == "tracial_weight":
        reference = make_tracial_weight(algebra)
    else:
        if scenario.state is None:
            raise InvalidScenarioError("state mode requires `state` density blocks")
        reference = make_state(algebra, _blocks(scenario.state))
    algebra, reference, model = _build_map(scenario, algebra, reference)
    a = _build_input(scenario, algebra, reference)
    conditions = check_conditions(model, reference)
    ext = extend_l1(model, reference, report=conditions)
    return BuiltScenario(algebra, reference, model, a, conditions, ext)


def _pipeline(
    built: BuiltScenario,
    lam: float,
    settings: RunSettings,
) -> PipelineResult:
    return theorem_pipeline(
        built.a,
        lam,
        settings.n_max,
        settings.horizon,
        built.reference,
        built.ext,
        solver=settings.solver,
        uniform=settings.uniform,
        tolerances=settings.tolerances,
    )


class ScenarioRunner:
    """Runs one scenario end to end and produces its report."""

    def __init__(self, scenario: Scenario, *, overrides: RunOverrides | None = None) -> None:
        self._scenario = scenario
        self._settings = resolve_settings(scenario, overrides)

    @classmethod
    def from_path(
        cls,
        path: str | Path,
        *,
        overrides: RunOverrides | None = None,
    ) -> ScenarioRunner:
        """Create a runner for a scenario file.

        Raises:
            InvalidScenarioError: If the file cannot be read or validated.
        """
        return cls(load_scenario(path), overrides=overrides)

    @property
    def scenario(self) -> Scenario:
        return self._scenario

    @property
    def settings(self) -> RunSettings:
        return self._settings

    async def run(self) -> ScenarioReport:
        """Run the scenario off the event loop."""
        return await asyncio.to_thread(self.run_sync)

    def run_sync(self) -> ScenarioReport:
        scenario = self._scenario
        settings = self._settings
        built = build_scenario(scenario)
        logger.info(
            "running %s on %s (%s mode), lambda=%g",
            scenario.name,
            list(built.algebra.signature),
            scenario.mode,
            scenario.lam,
        )
        result = _pipeline(built, scenario.lam, settings)

        yeadon: CertificateRecord | None = None
        if isinstance(built.reference, Weight) and built.reference.tracial and not result.unstable:
            certificate = yeadon_tracial(
                built.a,
                scenario.lam,
                settings.horizon,
                built.reference,
                built.ext,
                solver=settings.solver,
                uniform=settings.uniform,
                tolerances=settings.tolerances,
            )
            yeadon = certificate_record(certificate)

        passed = result.passed and not result.unstable and (yeadon is None or yeadon.passed)
        return ScenarioReport(
            schema_version=REPORT_SCHEMA,
            name=scenario.name,
            seed=scenario.seed,
            signature=list(built.algebra.signature),
            mode=scenario.mode,
            lam=scenario.lam,
            n_max=settings.n_max,
            horizon=settings.horizon,
            check_horizon=settings.check_horizon,
            conditions=built.conditions,
            pointwise=[certificate_record(c) for c in result.pointwise],
            uniform=certificate_record(result.uniform) if result.uniform is not None else None,
            limit=limit_record(result.diagnostics),
            yeadon=yeadon,
            unstable=result.unstable,
            passed=passed,
            scenario=scenario.model_dump(mode="json", by_alias=True),
        )


def default_workers() -> int:
    """Worker count from `NCERGODIC_WORKERS`, else the CPU count."""
    raw = os.getenv(WORKERS_ENV)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise InvalidInputError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise InvalidInputError(f"{WORKERS_ENV} must be at least 1, got {value}")
    return value


@dataclass(slots=True)
class SuiteConfig:
    """Parameters shared by every suite instance.

    Attributes:
        n_max: Largest pointwise `n`.
        horizon: Uniform horizon.
        check_horizon: Largest `r` for the uniform bound; `4 * horizon` when `None`.
        solver: Solver stopping rules.
        uniform: Limit detection knobs.
        tolerances: Certificate gating.
        max_unstable_rate: Accepted fraction of instances without a stable limit.
    """

    n_max: int = 12
    horizon: int = 20
    check_horizon: int | None = None
    solver: SolverOptions | None = None
    uniform: UniformOptions | None = None
    tolerances: Tolerances | None = None
    max_unstable_rate: float = DEFAULT_MAX_UNSTABLE_RATE

    def resolved_check_horizon(self) -> int:
        return self.check_horizon if self.check_horizon is not None else 4 * self.horizon


def _relative_worst(certificates: Sequence[Certificate]) -> float:
    return min((c.worst_residual() / c.tol for c in certificates), default=math.inf)


def run_instance(index: int, seed: int, dims: Sequence[int], config: SuiteConfig) -> InstanceSummary:
    """Generate and certify one random instance.

    Numerical breakdowns are recorded on the summary unless strict mode is on.
    """
    rng = np.random.default_rng([seed, index])
    instance_seed = int(rng.integers(2**31 - 1))
    lam = float(SUITE_LAMBDAS[int(rng.integers(len(SUITE_LAMBDAS)))])
    trace = float(rng.uniform(*SUITE_TRACE_RANGE))
    tolerances = config.tolerances or Tolerances()
    uniform = config.uniform or UniformOptions()
    uniform = UniformOptions(
        check_horizon=config.resolved_check_horizon(),
        cluster_tol=uniform.cluster_tol,
        window=uniform.window,
    )
    summary: dict[str, Any] = {
        "index": index,
        "seed": instance_seed,
        "signature": list(dims),
        "lam": lam,
        "input_trace": trace,
    }
    try:
        algebra = Algebra(tuple(dims))
        state = random_state(algebra, rng)
        model = random_certified_map(instance_seed, algebra, state)
        x = random_element(algebra, rng, positive=True)
        a = positive_l1(algebra, x * (trace / x.trace().real))
        ext = extend_l1(model, state)
        result = theorem_pipeline(
            a,
            lam,
            config.n_max,
            config.horizon,
            state,
            ext,
            solver=config.solver,
            uniform=uniform,
            tolerances=tolerances,
        )
        pre_weak: bool | None = None
        certificates: list[Certificate] = list(result.pointwise)
        if result.uniform is not None:
            certificates.append(result.uniform)
            pre_weak = pre_weak_type_predicate(
                result.uniform.projection,
                a,
                4.0 * lam,
                PRE_WEAK_CONSTANT,
                1.0,
                state,
                ext,
                config.resolved_check_horizon(),
                tol=tolerances.residual,
            )
        type_infinity = type_infinity_check(model, seed=instance_seed)
    except NumericalBreakdownError as exc:
        if tolerances.strict:
            raise
        logger.warning("instance %d (seed %d) broke down: %s", index, instance_seed, exc)
        return InstanceSummary(
            **summary,
            passed=False,
            unstable=isinstance(exc, NoStableLimitError),
            worst_residual=-math.inf,
            max_sweeps=0,
            max_gap=math.inf,
            type_infinity=False,
            error=f"{type(exc).__name__}: {exc}",
        )

    passed = result.passed and (pre_weak is not False) and type_infinity
    return InstanceSummary(
        **summary,
        passed=passed,
        unstable=result.unstable,
        worst_residual=_relative_worst(certificates),
        max_sweeps=max(s.sweeps for s in result.solutions),
        max_gap=max(s.gap for s in result.solutions),
        pre_weak=pre_weak,
        type_infinity=type_infinity,
        pointwise=[certificate_record(c) for c in result.pointwise],
        uniform=certificate_record(result.uniform) if result.uniform is not None else None,
    )


async def run_suite(
    seed: int,
    count: int,
    dims: Sequence[int],
    config: SuiteConfig | None = None,
    *,
    workers: int | None = None,
) -> SuiteSummary:
    """Run `count` seeded random instances concurrently.

    Instances run in worker threads bounded by `workers`; the summary lists
    them in index order, so it does not depend on scheduling.

    Raises:
        InvalidInputError: If `count < 1` or `dims` is empty.
    """
    if count < 1:
        raise InvalidInputError(f"suite needs at least one instance, got count={count}")
    if not dims:
        raise InvalidInputError("suite needs a non-empty block signature")
    config = config or SuiteConfig()
    Algebra(tuple(dims))
    limit = workers if workers is not None else default_workers()
    if limit < 1:
        raise InvalidInputError(f"workers must be at least 1, got {limit}")
    semaphore = asyncio.Semaphore(limit)

    async def one(index: int) -> InstanceSummary:
        async with semaphore:
            return await asyncio.to_thread(run_instance, index, seed, dims, config)

    instances = list(await asyncio.gather(*(one(i) for i in range(count))))
    passed_count = sum(1 for inst in instances if inst.passed)
    unstable_count = sum(1 for inst in instances if inst.unstable)
    unstable_rate = unstable_count / count
    suite_passed = passed_count == count and unstable_rate <= config.max_unstable_rate
    if unstable_rate > config.max_unstable_rate:
        logger.warning(
            "unstable rate %.3f exceeds the accepted %.3f", unstable_rate, config.max_unstable_rate
        )
    return SuiteSummary(
        schema_version=SUITE_SCHEMA,
        seed=seed,
        count=count,
        dims=list(dims),
        n_max=config.n_max,
        horizon=config.horizon,
        check_horizon=config.resolved_check_horizon(),
        passed_count=passed_count,
        pass_rate=passed_count / count,
        unstable_count=unstable_count,
        unstable_rate=unstable_rate,
        max_unstable_rate=config.max_unstable_rate,
        worst_residual=min(inst.worst_residual for inst in instances),
        median_sweeps=float(np.median([inst.max_sweeps for inst in instances])),
        median_gap=float(np.median([inst.max_gap for inst in instances])),
        passed=suite_passed,
        instances=instances,
    )

