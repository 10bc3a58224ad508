from __future__ import annotations

from dataclasses import dataclass
from typing import Annotated, Any, Literal, TypeAlias

from pydantic import BaseModel, ConfigDict, Field

from .dynamics import ConditionReport


class UnsetType:
    """Sentinel type representing an omitted override field."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "UNSET"


UNSET = UnsetType()


@dataclass(slots=True)
class SolverOptions:
    """Stopping rules for the maximiser over `K`.

    Attributes:
        tol_obj: Relative objective change below which a sweep counts as stationary.
        tol_gap: Relative duality gap below which the solve stops early.
        max_sweeps: Hard cap on full sweeps.
        stall_gap: Relative gap above which an exhausted solve is flagged stalled.
        strict: Raise `SolverStalledError` instead of flagging.
    """

    tol_obj: float = 1e-10
    tol_gap: float = 1e-8
    max_sweeps: int = 200
    stall_gap: float = 1e-4
    strict: bool = False


@dataclass(slots=True)
class UniformOptions:
    """Limit detection for the uniform projection.

    Attributes:
        check_horizon: Largest `r` checked for the trace bound; `4 * horizon` when `None`.
        cluster_tol: Operator-norm radius used to cluster the projections `e_n`.
        window: Minimum cluster size accepted as a stabilised limit.
    """

    check_horizon: int | None = None
    cluster_tol: float = 1e-6
    window: int = 5


@dataclass(slots=True)
class Tolerances:
    """Certificate gating.

    Attributes:
        residual: Relative residual tolerance, scaled by `max(1, ||a||_1, lambda)`.
        eps_kernel: Kernel threshold for spectral cuts; `1e-8 * max(1, ||z||)` when `None`.
        strict: Raise on ambiguous cuts, unstable limits and stalled solves.
    """

    residual: float = 1e-7
    eps_kernel: float | None = None
    strict: bool = False


@dataclass(slots=True)
class RunOverrides:
    """Command-line overrides applied on top of a scenario file.

    Use `UNSET` (default) to keep the scenario's value.

    Attributes:
        tol: Residual tolerance override.
        strict: Strict-mode override.
        n_max: Largest pointwise `n` override.
        horizon: Uniform horizon override.
        check_horizon: Trace-bound horizon override.
    """

    tol: float | UnsetType = UNSET
    strict: bool | UnsetType = UNSET
    n_max: int | UnsetType = UNSET
    horizon: int | UnsetType = UNSET
    check_horizon: int | None | UnsetType = UNSET


class ComplexMatrix(BaseModel):
    """Matrix given by real and optional imaginary parts.

    Attributes:
        re: Real part, row-major nested lists.
        im: Imaginary part with the same shape, or `None` for real matrices.
    """

    model_config = ConfigDict(extra="forbid")

    re: list[list[float]]
    im: list[list[float]] | None = None


#: Matrix literal in scenario files: a real nested list or `{"re": ..., "im": ...}`.
MatrixSpec: TypeAlias = list[list[float]] | ComplexMatrix


class KrausTermSpec(BaseModel):
    """One Kraus term `weight * V* x[source] V` landing in block `target`."""

    model_config = ConfigDict(extra="forbid")

    source: int = 0
    target: int = 0
    operator: MatrixSpec
    weight: float = 1.0


class IdentityMapSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["identity"] = "identity"


class KrausMapSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["kraus"] = "kraus"
    terms: list[KrausTermSpec]


class MarkovTensorSpec(BaseModel):
    """Classical kernel tensored with the identity; `signature`/`state` describe the inner algebra.

    Attributes:
        kernel: Row-stochastic matrix on `Omega`.
        mu: Reference distribution; stationary distribution when omitted.
    """

    model_config = ConfigDict(extra="forbid")

    kind: Literal["markov_tensor"] = "markov_tensor"
    kernel: list[list[float]]
    mu: list[float] | None = None


class CondExpSpec(BaseModel):
    """Conditional expectation onto a block-diagonal subalgebra.

    Attributes:
        partition: Per block, the index groups (or `null` to keep the block whole).
    """

    model_config = ConfigDict(extra="forbid")

    kind: Literal["cond_exp"] = "cond_exp"
    partition: list[list[list[int]] | None]


class ExplicitMapSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["explicit_superoperator"] = "explicit_superoperator"
    matrix: MatrixSpec


class RandomMapSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["random"] = "random"
    seed: int


MapSpec: TypeAlias = Annotated[
    IdentityMapSpec
    | KrausMapSpec
    | MarkovTensorSpec
    | CondExpSpec
    | ExplicitMapSpec
    | RandomMapSpec,
    Field(discriminator="kind"),
]


class BlocksInputSpec(BaseModel):
    """Positive L^1 representative given block by block."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["blocks"] = "blocks"
    blocks: list[MatrixSpec]


class EmbedInputSpec(BaseModel):
    """Symmetric embedding of an algebra element; the unit when `blocks` is omitted."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["embed"] = "embed"
    blocks: list[MatrixSpec] | None = None


class RandomInputSpec(BaseModel):
    """Random positive representative with prescribed trace."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["random"] = "random"
    seed: int
    trace: float = Field(default=1.0, gt=0)


InputSpec: TypeAlias = Annotated[
    BlocksInputSpec | EmbedInputSpec | RandomInputSpec,
    Field(discriminator="kind"),
]


class ToleranceSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    residual: float = Field(default=1e-7, gt=0)
    eps_kernel: float | None = Field(default=None, gt=0)
    strict: bool = False


class SolverSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tol_obj: float = Field(default=1e-10, gt=0)
    tol_gap: float = Field(default=1e-8, gt=0)
    max_sweeps: int = Field(default=200, ge=1)
    stall_gap: float = Field(default=1e-4, gt=0)


class UniformSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cluster_tol: float = Field(default=1e-6, gt=0)
    window: int = Field(default=5, ge=1)


class Scenario(BaseModel):
    """Scenario file contents.

    Attributes:
        schema_version: Scenario schema tag.
        name: Free-form label echoed in the report.
        signature: Block sizes of the algebra (inner algebra for `markov_tensor`).
        mode: `state` (faithful state) or `tracial_weight` (the trace).
        state: Density blocks; required in `state` mode.
        map: Map specification.
        input: Positive L^1 input specification.
        lam: Threshold `lambda` (key `lambda` in files).
        n_max: Largest `n` for pointwise certificates.
        horizon: Number of projections `e_n` used for the uniform limit.
        check_horizon: Largest `r` for the uniform bound; `4 * horizon` when omitted.
        tolerances: Certificate gating.
        solver: Solver stopping rules.
        uniform: Limit detection knobs.
        seed: Seed echoed in the report.
    """

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    schema_version: str
    name: str = "scenario"
    signature: list[Annotated[int, Field(ge=1)]] = Field(min_length=1)
    mode: Literal["state", "tracial_weight"] = "state"
    state: list[MatrixSpec] | None = None
    map: MapSpec
    input: InputSpec
    lam: float = Field(alias="lambda", gt=0)
    n_max: int = Field(default=4, ge=0)
    horizon: int = Field(default=20, ge=1)
    check_horizon: int | None = Field(default=None, ge=0)
    tolerances: ToleranceSpec = Field(default_factory=ToleranceSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    uniform: UniformSpec = Field(default_factory=UniformSpec)
    seed: int | None = None


CertificateKindName: TypeAlias = Literal["pointwise", "uniform", "yeadon_tracial"]


class CertificateRecord(BaseModel):
    """Serialised certificate.

    Attributes:
        kind: `pointwise`, `uniform` or `yeadon_tracial`.
        index: `n` for pointwise certificates, the horizon otherwise.
        lam: Threshold `lambda`.
        passed: Whether every gated residual is within tolerance.
        tol: Absolute gate tolerance.
        projection_trace: Trace of the certified projection.
        residuals: Gated signed slacks; negative values are violations.
        info: Informational quantities, never gated.
        sweeps: Solver sweeps (pointwise only).
        objective: Maximiser objective (pointwise only).
        dual_bound: Dual upper bound (pointwise only).
        gap: Duality gap (pointwise only).
        stalled: Whether the solver was flagged stalled.
    """

    model_config = ConfigDict(ser_json_inf_nan="constants")

    kind: CertificateKindName
    index: int
    lam: float
    passed: bool
    tol: float
    projection_trace: float
    residuals: dict[str, float]
    info: dict[str, float] = Field(default_factory=dict)
    sweeps: int | None = None
    objective: float | None = None
    dual_bound: float | None = None
    gap: float | None = None
    stalled: bool = False


class LimitRecord(BaseModel):
    """Serialised limit diagnostics of the uniform projection.

    Attributes:
        stable: Whether a cluster of at least `window` projections was found.
        members: Indices `n` of the chosen cluster.
        window: Required cluster size.
        cluster_tol: Clustering radius.
        distances: Operator-norm distances between consecutive projections.
        h_trace: Trace of the limit point `h`.
        inverse_cut_norm: Norm of the inverse cut operator.
    """

    model_config = ConfigDict(ser_json_inf_nan="constants")

    stable: bool
    members: list[int]
    window: int
    cluster_tol: float
    distances: list[float]
    h_trace: float
    inverse_cut_norm: float


class ScenarioReport(BaseModel):
    """Report written by `ncergodic verify`.

    Attributes:
        schema_version: Report schema tag.
        name: Scenario name.
        seed: Scenario seed, if any.
        signature: Block sizes of the algebra that was run.
        mode: Reference mode.
        lam: Threshold `lambda`.
        n_max: Largest pointwise `n`.
        horizon: Uniform horizon.
        check_horizon: Largest `r` checked by the uniform certificate.
        conditions: Condition report of the map.
        pointwise: Certificates for `n = 0..n_max`.
        uniform: Uniform certificate, absent when no stable limit was found.
        limit: Limit diagnostics.
        yeadon: Tracial certificate in `tracial_weight` mode.
        unstable: Whether the limit failed to stabilise.
        passed: Whether every gated certificate passed.
        scenario: Input echo.
    """

    model_config = ConfigDict(ser_json_inf_nan="constants")

    schema_version: str
    name: str
    seed: int | None = None
    signature: list[int]
    mode: str
    lam: float
    n_max: int
    horizon: int
    check_horizon: int
    conditions: ConditionReport
    pointwise: list[CertificateRecord]
    uniform: CertificateRecord | None = None
    limit: LimitRecord | None = None
    yeadon: CertificateRecord | None = None
    unstable: bool = False
    passed: bool
    scenario: dict[str, Any] = Field(default_factory=dict)


class InstanceSummary(BaseModel):
    """One random suite instance.

    Attributes:
        index: Instance position in the suite.
        seed: Derived seed of the instance.
        signature: Block sizes.
        lam: Threshold `lambda`.
        input_trace: Trace of the random input.
        passed: Whether every gated certificate passed.
        unstable: Whether the uniform limit failed to stabilise.
        worst_residual: Smallest gated slack relative to its tolerance.
        max_sweeps: Largest sweep count over the solves.
        max_gap: Largest duality gap over the solves.
        pre_weak: Pre-weak type (1,1) predicate on the uniform certificate.
        type_infinity: Type (inf, inf) check on the map.
        error: Error class and message when the instance could not run.
        pointwise: Pointwise certificates.
        uniform: Uniform certificate.
    """

    model_config = ConfigDict(ser_json_inf_nan="constants")

    index: int
    seed: int
    signature: list[int]
    lam: float
    input_trace: float
    passed: bool
    unstable: bool = False
    worst_residual: float
    max_sweeps: int
    max_gap: float
    pre_weak: bool | None = None
    type_infinity: bool
    error: str | None = None
    pointwise: list[CertificateRecord] = Field(default_factory=list)
    uniform: CertificateRecord | None = None


class SuiteSummary(BaseModel):
    """Summary written by `ncergodic suite`.

    Attributes:
        schema_version: Summary schema tag.
        seed: Suite seed.
        count: Number of instances.
        dims: Block sizes of every instance.
        n_max: Largest pointwise `n`.
        horizon: Uniform horizon.
        check_horizon: Largest `r` checked by the uniform certificates.
        passed_count: Instances whose gated certificates all passed.
        pass_rate: `passed_count / count`.
        unstable_count: Instances without a stable limit.
        unstable_rate: `unstable_count / count`.
        max_unstable_rate: Accepted unstable rate.
        worst_residual: Smallest relative slack over the suite.
        median_sweeps: Median of the per-instance maximal sweep counts.
        median_gap: Median of the per-instance maximal gaps.
        passed: Suite verdict.
        instances: Per-instance summaries in index order.
    """

    model_config = ConfigDict(ser_json_inf_nan="constants")

    schema_version: str
    seed: int
    count: int
    dims: list[int]
    n_max: int
    horizon: int
    check_horizon: int
    passed_count: int
    pass_rate: float
    unstable_count: int
    unstable_rate: float
    max_unstable_rate: float
    worst_residual: float
    median_sweeps: float
    median_gap: float
    passed: bool
    instances: list[InstanceSummary]
