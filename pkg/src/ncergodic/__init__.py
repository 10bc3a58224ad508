from .dynamics import (
    ConditionReport,
    ExtendedMap,
    KrausTerm,
    Pedigree,
    PositiveMapModel,
    SuperOperator,
    algebra_cesaro,
    cesaro,
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
    AmbiguousSpectralCutError,
    ConditionsNotMetError,
    GenerationFailureError,
    InvalidInputError,
    NcErgodicError,
    NoStableLimitError,
    NumericalBreakdownError,
    SolverStalledError,
)
from .matalg import BlockMatrix, HermitianOperator, Interval
from .maxerg import (
    Certificate,
    CertificateKind,
    KPoint,
    LimitDiagnostics,
    MaximizerSolution,
    PipelineResult,
    commutative_oracle,
    extract_projection,
    pointwise_certificate,
    solve_maximizer,
    theorem_pipeline,
    uniform_projection,
    yeadon_tracial,
)
from .models import (
    UNSET,
    RunOverrides,
    Scenario,
    ScenarioReport,
    SolverOptions,
    SuiteSummary,
    Tolerances,
    UniformOptions,
)
from .runner import ScenarioRunner, SuiteConfig, run_suite
from .vna import (
    Algebra,
    LOneElement,
    State,
    Weight,
    embed_l1,
    make_state,
    make_tracial_state,
    make_tracial_weight,
    make_weight,
    positive_l1,
)

__all__ = [
    "Algebra",
    "AmbiguousSpectralCutError",
    "BlockMatrix",
    "Certificate",
    "CertificateKind",
    "ConditionReport",
    "ConditionsNotMetError",
    "ExtendedMap",
    "GenerationFailureError",
    "HermitianOperator",
    "Interval",
    "InvalidInputError",
    "KPoint",
    "KrausTerm",
    "LOneElement",
    "LimitDiagnostics",
    "MaximizerSolution",
    "NcErgodicError",
    "NoStableLimitError",
    "NumericalBreakdownError",
    "Pedigree",
    "PipelineResult",
    "PositiveMapModel",
    "RunOverrides",
    "Scenario",
    "ScenarioReport",
    "ScenarioRunner",
    "SolverOptions",
    "SolverStalledError",
    "State",
    "SuiteConfig",
    "SuiteSummary",
    "SuperOperator",
    "Tolerances",
    "UNSET",
    "UniformOptions",
    "Weight",
    "algebra_cesaro",
    "cesaro",
    "check_conditions",
    "commutative_oracle",
    "embed_l1",
    "example_cond_expectation",
    "example_tensor_markov",
    "explicit_map",
    "extend_l1",
    "extract_projection",
    "identity_map",
    "kraus_map",
    "make_state",
    "make_tracial_state",
    "make_tracial_weight",
    "make_weight",
    "pointwise_certificate",
    "positive_l1",
    "random_certified_map",
    "run_suite",
    "solve_maximizer",
    "theorem_pipeline",
    "uniform_projection",
    "yeadon_tracial",
]
