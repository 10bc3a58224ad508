from __future__ import annotations

import csv
import json
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from numpy.typing import NDArray
from pydantic import BaseModel, ValidationError

from .errors import InvalidScenarioError
from .maxerg import Certificate, CertificateKind, LimitDiagnostics
from .models import (
    CertificateRecord,
    ComplexMatrix,
    LimitRecord,
    MatrixSpec,
    Scenario,
    ScenarioReport,
    SuiteSummary,
)

# Schema tags written into and accepted from JSON files.
SCENARIO_SCHEMA = "ncergodic.scenario/1"
REPORT_SCHEMA = "ncergodic.report/1"
SUITE_SCHEMA = "ncergodic.suite/1"

# Process exit codes of the command-line tool.
EXIT_OK = 0
EXIT_CERTIFICATE_FAILURE = 1
EXIT_INVALID_INPUT = 2
EXIT_NUMERICAL_BREAKDOWN = 3

CSV_COLUMNS = (
    "instance",
    "kind",
    "n",
    "lambda",
    "passed",
    "sweeps",
    "gap",
    "worst_residual",
)

ReportT = TypeVar("ReportT", bound=BaseModel)


def matrix_array(spec: MatrixSpec) -> NDArray[np.complex128]:
    """Convert a matrix literal (nested list or `{re, im}`) to a complex array."""
    if isinstance(spec, ComplexMatrix):
        real = np.asarray(spec.re, dtype=np.float64)
        if spec.im is None:
            return real.astype(np.complex128)
        imag = np.asarray(spec.im, dtype=np.float64)
        if imag.shape != real.shape:
            raise InvalidScenarioError(
                f"imaginary part has shape {imag.shape}, real part {real.shape}"
            )
        return real + 1j * imag
    array = np.asarray(spec, dtype=np.float64)
    if array.ndim != 2:
        raise InvalidScenarioError(f"matrix literal must be two-dimensional, got {array.shape}")
    return array.astype(np.complex128)


def matrix_literal(matrix: NDArray[np.complexfloating[Any, Any]]) -> MatrixSpec:
    """Inverse of `matrix_array`; purely real matrices stay plain nested lists."""
    if not np.any(np.imag(matrix)):
        return np.real(matrix).tolist()
    return ComplexMatrix(re=np.real(matrix).tolist(), im=np.imag(matrix).tolist())


def parse_scenario(payload: dict[str, Any]) -> Scenario:
    """Validate a decoded scenario document.

    Raises:
        InvalidScenarioError: On a schema violation or an unknown schema tag.
    """
    try:
        scenario = Scenario.model_validate(payload)
    except ValidationError as exc:
        raise InvalidScenarioError(f"invalid scenario: {exc}") from exc
    if scenario.schema_version != SCENARIO_SCHEMA:
        raise InvalidScenarioError(
            f"unsupported scenario schema {scenario.schema_version!r}, expected {SCENARIO_SCHEMA!r}"
        )
    if scenario.mode == "state" and scenario.state is None:
        raise InvalidScenarioError("state mode requires `state` density blocks")
    if scenario.mode == "tracial_weight" and scenario.state is not None:
        raise InvalidScenarioError("tracial_weight mode takes no `state`")
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidScenarioError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise InvalidScenarioError("scenario document must be a JSON object")
    return parse_scenario(payload)


def dump_report(report: BaseModel, path: str | Path | None = None) -> str:
    """Serialise a report; writes it to `path` when given."""
    text = report.model_dump_json(indent=2, by_alias=True)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def load_report(path: str | Path, model: type[ReportT]) -> ReportT:
    """Read a report written by `dump_report`."""
    try:
        return model.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValidationError) as exc:
        raise InvalidScenarioError(f"cannot read report {path}: {exc}") from exc


def certificate_record(certificate: Certificate) -> CertificateRecord:
    """Project a certificate onto its JSON record."""
    record = CertificateRecord(
        kind=certificate.kind.value,
        index=certificate.index,
        lam=certificate.lam,
        passed=certificate.passed,
        tol=certificate.tol,
        projection_trace=float(certificate.projection.trace().real),
        residuals=dict(certificate.residuals),
        info=dict(certificate.info),
    )
    solution = certificate.solution
    if solution is not None and certificate.kind is CertificateKind.POINTWISE:
        record.sweeps = solution.sweeps
        record.objective = solution.objective
        record.dual_bound = solution.dual_bound
        record.gap = solution.gap
        record.stalled = solution.stalled
    return record


def limit_record(diagnostics: LimitDiagnostics) -> LimitRecord:
    return LimitRecord(
        stable=diagnostics.stable,
        members=list(diagnostics.members),
        window=diagnostics.window,
        cluster_tol=diagnostics.cluster_tol,
        distances=list(diagnostics.distances),
        h_trace=float(diagnostics.h.trace().real),
        inverse_cut_norm=diagnostics.inverse_cut_norm,
    )


def _row(instance: str, record: CertificateRecord) -> dict[str, Any]:
    return {
        "instance": instance,
        "kind": record.kind,
        "n": record.index,
        "lambda": record.lam,
        "passed": record.passed,
        "sweeps": "" if record.sweeps is None else record.sweeps,
        "gap": "" if record.gap is None else record.gap,
        "worst_residual": min(record.residuals.values(), default=""),
        **record.residuals,
    }


def csv_rows(report: ScenarioReport | SuiteSummary) -> list[dict[str, Any]]:
    """One row per certificate of a scenario report or suite summary."""
    rows: list[dict[str, Any]] = []
    if isinstance(report, ScenarioReport):
        records: Sequence[CertificateRecord] = [
            *report.pointwise,
            *(r for r in (report.uniform, report.yeadon) if r is not None),
        ]
        rows.extend(_row(report.name, record) for record in records)
        return rows
    for instance in report.instances:
        records = [*instance.pointwise, *([instance.uniform] if instance.uniform else [])]
        rows.extend(_row(str(instance.index), record) for record in records)
    return rows


def _residual_order(key: str) -> tuple[str, int]:
    stem, _, suffix = key.rpartition("_")
    if stem and suffix.isdigit():
        return stem, int(suffix)
    return key, -1


def csv_columns(rows: Sequence[dict[str, Any]]) -> tuple[str, ...]:
    """Fixed columns followed by one column per residual key, `order_2` before `order_10`."""
    keys = {key for row in rows for key in row if key not in CSV_COLUMNS}
    return (*CSV_COLUMNS, *sorted(keys, key=_residual_order))


def write_csv(rows: Iterable[dict[str, Any]], path: str | Path) -> int:
    """Write certificate rows; returns the number of rows written.

    Residuals a certificate does not carry are left empty.
    """
    materialised = list(rows)
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=csv_columns(materialised), restval="")
        writer.writeheader()
        writer.writerows(materialised)
    return len(materialised)


def load_any_report(path: str | Path) -> ScenarioReport | SuiteSummary:
    """Read either report kind, dispatching on its schema tag."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidScenarioError(f"cannot read report {path}: {exc}") from exc
    tag = payload.get("schema_version") if isinstance(payload, dict) else None
    model: type[ScenarioReport] | type[SuiteSummary]
    if tag == REPORT_SCHEMA:
        model = ScenarioReport
    elif tag == SUITE_SCHEMA:
        model = SuiteSummary
    else:
        raise InvalidScenarioError(f"unknown report schema {tag!r}")
    try:
        return model.model_validate(payload)
    except ValidationError as exc:
        raise InvalidScenarioError(f"invalid report {path}: {exc}") from exc
