"""Positive maps on block algebras, their L^1 extension and ergodic averages."""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import StrEnum
from typing import Literal

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict
from scipy.sparse.csgraph import connected_components

from .errors import (
    ConditionsNotMetError,
    DimensionMismatchError,
    GenerationFailureError,
    InvalidExponentError,
    InvalidInputError,
    NotStochasticError,
    NotSubalgebraError,
    NotSubInvariantError,
)
from .matalg import (
    BlockMatrix,
    HermitianOperator,
    eigh,
    hermitian,
    max_eigenvalue,
    min_eigenvalue,
    schatten_norm,
    symmetrize,
)
from .vna import (
    Algebra,
    DensityReference,
    LOneElement,
    State,
    make_state,
    modular_flow,
    random_element,
)

logger = logging.getLogger(__name__)

CONDITION_TOL = 1e-9
HERMITICITY_PRESERVING_TOL = 1e-10
DEFAULT_POSITIVITY_SAMPLES = 32
POSITIVITY_REFINEMENT_STEPS = 12
STOCHASTIC_TOL = 1e-10
GENERATION_ATTEMPTS = 8
MODULAR_TIMES = (-1.3, -0.4, 0.7, 2.1)


class Pedigree(StrEnum):
    """How positivity of a map is known."""

    CONSTRUCTED_POSITIVE = "constructed_positive"
    SAMPLED_POSITIVE = "sampled_positive"
    UNVERIFIED = "unverified"


def _transpose_permutation(dims: Sequence[int]) -> NDArray[np.intp]:
    """Index permutation of the coefficient vector realising `x -> x^T` blockwise."""
    pieces = []
    offset = 0
    for n in dims:
        pieces.append(offset + np.arange(n * n).reshape(n, n).T.reshape(-1))
        offset += n * n
    return np.concatenate(pieces)


def _congruence_matrix(c: BlockMatrix) -> NDArray[np.complex128]:
    """Coefficient matrix of `x -> c x c*`."""
    return scipy.linalg.block_diag(*(np.kron(m, m.conj()) for m in c.blocks))


@dataclass(frozen=True, slots=True, eq=False)
class SuperOperator:
    """Linear map on a block algebra as an explicit coefficient-space matrix.

    Attributes:
        dims: Block sizes of domain and codomain.
        matrix: Square matrix acting on the row-major block coefficient vector.
    """

    dims: tuple[int, ...]
    matrix: NDArray[np.complex128]

    @classmethod
    def identity(cls, dims: Sequence[int]) -> SuperOperator:
        size = sum(n * n for n in dims)
        return cls(tuple(dims), np.eye(size, dtype=np.complex128))

    @classmethod
    def congruence(cls, c: BlockMatrix) -> SuperOperator:
        return cls(c.dims, _congruence_matrix(c))

    def __call__(self, x: BlockMatrix) -> BlockMatrix:
        if x.dims != self.dims:
            raise DimensionMismatchError(
                f"map on {list(self.dims)} applied to element of {list(x.dims)}"
            )
        image = BlockMatrix.from_vector(self.matrix @ x.vector(), self.dims)
        if isinstance(x, HermitianOperator):
            return symmetrize(image)
        return image

    def apply_vector(self, vector: NDArray[np.complex128]) -> NDArray[np.complex128]:
        return self.matrix @ vector

    def compose(self, other: SuperOperator) -> SuperOperator:
        """`self o other`."""
        return SuperOperator(self.dims, self.matrix @ other.matrix)

    def power(self, k: int) -> SuperOperator:
        return SuperOperator(self.dims, np.linalg.matrix_power(self.matrix, k))

    def trace_adjoint(self) -> SuperOperator:
        """Adjoint for the trace pairing: `Tr(T(x) y) = Tr(x T^dagger(y))`."""
        perm = _transpose_permutation(self.dims)
        return SuperOperator(self.dims, np.ascontiguousarray(self.matrix.T[np.ix_(perm, perm)]))

    def hermiticity_defect(self) -> float:
        """Max deviation from `T(x*) = T(x)*` on the coefficient basis."""
        perm = _transpose_permutation(self.dims)
        return float(np.max(np.abs(self.matrix[:, perm] - self.matrix.conj()[perm, :])))

    def __add__(self, other: SuperOperator) -> SuperOperator:
        return SuperOperator(self.dims, self.matrix + other.matrix)

    def __mul__(self, scalar: float) -> SuperOperator:
        return SuperOperator(self.dims, scalar * self.matrix)

    __rmul__ = __mul__


@dataclass(frozen=True, slots=True, eq=False)
class KrausTerm:
    """One term `x -> weight * V* x[source] V` landing in block `target`.

    Attributes:
        source: Input block index.
        target: Output block index.
        operator: `V`, shape `(n_source, n_target)`.
        weight: Non-negative coefficient.
    """

    source: int
    target: int
    operator: NDArray[np.complex128]
    weight: float = 1.0


def _kraus_superoperator(dims: Sequence[int], terms: Sequence[KrausTerm]) -> SuperOperator:
    offsets = np.concatenate([[0], np.cumsum([n * n for n in dims])])
    size = int(offsets[-1])
    matrix = np.zeros((size, size), dtype=np.complex128)
    for term in terms:
        v = term.operator
        piece = term.weight * np.kron(v.conj().T, v.T)
        rows = slice(offsets[term.target], offsets[term.target + 1])
        cols = slice(offsets[term.source], offsets[term.source + 1])
        matrix[rows, cols] += piece
    return SuperOperator(tuple(dims), matrix)


@dataclass(frozen=True, slots=True, eq=False)
class PositiveMapModel:
    """Linear hermiticity-preserving map `T` on an algebra with its positivity pedigree.

    Attributes:
        algebra: Algebra the map acts on.
        action: Coefficient-space matrix of `T`.
        pedigree: How positivity is known.
        kind: Builder that produced the map.
        kraus: Kraus data when the map was built from it.
    """

    algebra: Algebra
    action: SuperOperator
    pedigree: Pedigree
    kind: str = "explicit_superoperator"
    kraus: tuple[KrausTerm, ...] | None = None

    def __call__(self, x: BlockMatrix) -> BlockMatrix:
        return self.action(x)

    def unit_image(self) -> HermitianOperator:
        """`T(1)`."""
        return symmetrize(self.action(self.algebra.identity()))

    def trace_adjoint(self) -> SuperOperator:
        return self.action.trace_adjoint()

    def power(self, k: int) -> SuperOperator:
        return self.action.power(k)

    def mixed_with_identity(self, beta: float) -> PositiveMapModel:
        """Convex combination `(1 - beta) T + beta id`."""
        if not 0.0 <= beta <= 1.0:
            raise InvalidInputError(f"mixing weight must lie in [0, 1], got {beta!r}")
        identity = identity_map(self.algebra)
        action = self.action * (1.0 - beta) + identity.action * beta
        kraus = None
        if self.kraus is not None and identity.kraus is not None:
            kraus = tuple(
                KrausTerm(t.source, t.target, t.operator, t.weight * (1.0 - beta))
                for t in self.kraus
            ) + tuple(KrausTerm(t.source, t.target, t.operator, beta) for t in identity.kraus)
        return PositiveMapModel(self.algebra, action, self.pedigree, self.kind, kraus)


def kraus_map(
    algebra: Algebra,
    terms: Iterable[KrausTerm],
    *,
    kind: str = "kraus",
) -> PositiveMapModel:
    """Build `T(x)_k = sum w V* x_l V` from Kraus terms.

    Raises:
        DimensionMismatchError: If a block index or operator shape is wrong.
        InvalidInputError: If a weight is negative or data is not finite.
    """
    validated: list[KrausTerm] = []
    blocks = len(algebra.signature)
    for index, term in enumerate(terms):
        if not (0 <= term.source < blocks and 0 <= term.target < blocks):
            raise DimensionMismatchError(
                f"Kraus term {index} references block {term.source}->{term.target} "
                f"outside {blocks} blocks"
            )
        operator = np.asarray(term.operator, dtype=np.complex128)
        expected = (algebra.signature[term.source], algebra.signature[term.target])
        if operator.shape != expected:
            raise DimensionMismatchError(
                f"Kraus term {index} has operator shape {operator.shape}, expected {expected}"
            )
        if not np.all(np.isfinite(operator)) or not math.isfinite(term.weight):
            raise InvalidInputError(f"Kraus term {index} contains non-finite data")
        if term.weight < 0:
            raise InvalidInputError(f"Kraus term {index} has negative weight {term.weight!r}")
        validated.append(KrausTerm(term.source, term.target, operator, float(term.weight)))
    kraus = tuple(validated)
    return PositiveMapModel(
        algebra,
        _kraus_superoperator(algebra.signature, kraus),
        Pedigree.CONSTRUCTED_POSITIVE,
        kind,
        kraus,
    )


def identity_map(algebra: Algebra) -> PositiveMapModel:
    terms = [
        KrausTerm(k, k, np.eye(n, dtype=np.complex128)) for k, n in enumerate(algebra.signature)
    ]
    return kraus_map(algebra, terms, kind="identity")


def explicit_map(
    algebra: Algebra,
    matrix: ArrayLike,
    *,
    pedigree: Pedigree = Pedigree.UNVERIFIED,
) -> PositiveMapModel:
    """Wrap a user-supplied coefficient-space matrix.

    Raises:
        DimensionMismatchError: If the matrix is not `D x D` with `D = sum n_i^2`.
        InvalidInputError: If the map does not preserve hermiticity.
    """
    array = np.array(matrix, dtype=np.complex128, copy=True)
    size = algebra.coefficient_dim
    if array.shape != (size, size):
        raise DimensionMismatchError(
            f"superoperator shape {array.shape} does not match coefficient dimension {size}"
        )
    if not np.all(np.isfinite(array)):
        raise InvalidInputError("superoperator contains non-finite entries")
    action = SuperOperator(algebra.signature, array)
    defect = action.hermiticity_defect()
    if defect > HERMITICITY_PRESERVING_TOL * max(1.0, float(np.max(np.abs(array)))):
        raise InvalidInputError(f"superoperator does not preserve hermiticity: defect {defect:.3e}")
    return PositiveMapModel(algebra, action, pedigree, "explicit_superoperator")


class ConditionVerdict(BaseModel):
    """Outcome of one of the three conditions on `T`.

    Attributes:
        passed: Whether the condition holds within tolerance.
        margin: Signed slack; negative values are violations.
        method: `exact`, `constructed` or `sampled`.
    """

    model_config = ConfigDict(frozen=True)

    passed: bool
    margin: float
    method: Literal["exact", "constructed", "sampled"]


class ConditionReport(BaseModel):
    """Verdicts for contraction, positivity and trace decrease.

    Attributes:
        pedigree: Effective positivity pedigree after checking.
        contraction: `T(1) <= 1`.
        positivity: Positivity, exact for constructed maps.
        trace_decrease: `T^dagger(rho) <= rho`.
        samples: Random rank-one probes per block.
        tol: Absolute tolerance used.
    """

    model_config = ConfigDict(frozen=True)

    pedigree: Pedigree
    contraction: ConditionVerdict
    positivity: ConditionVerdict
    trace_decrease: ConditionVerdict
    samples: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.contraction.passed and self.positivity.passed and self.trace_decrease.passed

    def failures(self) -> list[str]:
        names = []
        if not self.contraction.passed:
            names.append("contraction")
        if not self.positivity.passed:
            names.append("positivity")
        if not self.trace_decrease.passed:
            names.append("trace_decrease")
        return names


def _rank_one(dims: Sequence[int], block: int, v: NDArray[np.complex128]) -> HermitianOperator:
    blocks = [np.zeros((n, n), dtype=np.complex128) for n in dims]
    blocks[block] = np.outer(v, v.conj())
    return HermitianOperator(tuple(blocks))


def _sampled_positivity_margin(
    action: SuperOperator,
    samples: int,
    rng: np.random.Generator,
) -> float:
    """Smallest eigenvalue of `T(vv*)` found by random probes and seesaw refinement."""
    adjoint = action.trace_adjoint()
    dims = action.dims
    worst = math.inf
    for source, n_source in enumerate(dims):
        for _ in range(samples):
            v = rng.standard_normal(n_source) + 1j * rng.standard_normal(n_source)
            v /= np.linalg.norm(v)
            best = math.inf
            for _step in range(POSITIVITY_REFINEMENT_STEPS):
                spectrum = eigh(symmetrize(action(_rank_one(dims, source, v))))
                target = int(np.argmin([w[0] for w in spectrum.eigenvalues]))
                value = float(spectrum.eigenvalues[target][0])
                worst = min(worst, value)
                if value >= best - 1e-15:
                    break
                best = value
                u = spectrum.eigenvectors[target][:, 0]
                pulled = symmetrize(adjoint(_rank_one(dims, target, u)))
                _, vectors = scipy.linalg.eigh(pulled.blocks[source])
                v = vectors[:, 0]
    return worst


def check_conditions(
    model: PositiveMapModel,
    reference: DensityReference,
    samples: int = DEFAULT_POSITIVITY_SAMPLES,
    tol: float = CONDITION_TOL,
    *,
    seed: int = 0,
) -> ConditionReport:
    """Verify contraction, positivity and trace decrease of `model`.

    Contraction and trace decrease are exact operator inequalities; positivity
    is exact for constructed maps and sampled (necessary, not sufficient)
    otherwise. Failures are reported, never raised.

    Args:
        model: Map under test.
        reference: State or weight `rho` for the trace-decrease condition.
        samples: Random rank-one probes per block for sampled positivity.
        tol: Absolute slack on every operator inequality.
        seed: Seed for the positivity probes.

    Returns:
        Report with one verdict per condition.
    """
    reference.algebra.check(model.algebra.identity())
    unit = model.unit_image()
    contraction_margin = 1.0 - max_eigenvalue(unit)
    contraction = ConditionVerdict(
        passed=contraction_margin >= -tol, margin=contraction_margin, method="exact"
    )

    pushed = symmetrize(model.trace_adjoint()(reference.rho))
    trace_margin = min_eigenvalue(reference.rho - pushed)
    trace_decrease = ConditionVerdict(
        passed=trace_margin >= -tol, margin=trace_margin, method="exact"
    )

    if model.pedigree is Pedigree.CONSTRUCTED_POSITIVE:
        positivity = ConditionVerdict(passed=True, margin=0.0, method="constructed")
        pedigree = Pedigree.CONSTRUCTED_POSITIVE
    else:
        rng = np.random.default_rng(seed)
        margin = _sampled_positivity_margin(model.action, samples, rng)
        scale = max(1.0, max_eigenvalue(unit))
        passed = margin >= -tol * scale
        positivity = ConditionVerdict(passed=passed, margin=margin, method="sampled")
        pedigree = Pedigree.SAMPLED_POSITIVE if passed else Pedigree.UNVERIFIED
        if not passed:
            logger.warning("sampled positivity violation: min eigenvalue %.3e", margin)

    return ConditionReport(
        pedigree=pedigree,
        contraction=contraction,
        positivity=positivity,
        trace_decrease=trace_decrease,
        samples=samples,
        tol=tol,
    )


@dataclass(frozen=True, slots=True, eq=False)
class ExtendedMap:
    """A certified map together with `T_1` on L^1 and the adjoint `T~` on the algebra.

    Attributes:
        base: The map `T` on the algebra.
        reference: Density `rho` defining the symmetric embedding.
        l1_action: `T_1(a) = rho^{1/2} T(rho^{-1/2} a rho^{-1/2}) rho^{1/2}`.
        adjoint_action: `T~(x) = rho^{-1/2} T^dagger(rho^{1/2} x rho^{1/2}) rho^{-1/2}`.
        report: Condition report the extension was admitted with.
    """

    base: PositiveMapModel
    reference: DensityReference
    l1_action: SuperOperator
    adjoint_action: SuperOperator
    report: ConditionReport

    @property
    def algebra(self) -> Algebra:
        return self.base.algebra

    def t1(self, a: LOneElement) -> LOneElement:
        return LOneElement(self.l1_action(a.rep))

    def adjoint(self, x: BlockMatrix) -> BlockMatrix:
        return self.adjoint_action(x)

    def lp_action(self, p: float) -> SuperOperator:
        """`T_p` on `rho^{1/(2p)} M rho^{1/(2p)}`; `T` itself at `p = inf`."""
        if math.isinf(p):
            return self.base.action
        if not p >= 1:
            raise InvalidExponentError(f"L^p exponent must satisfy p >= 1, got {p!r}")
        s = 1.0 / (2.0 * p)
        outer = SuperOperator.congruence(self.reference.power(s))
        inner = SuperOperator.congruence(self.reference.power(-s))
        return outer.compose(self.base.action).compose(inner)


def extend_l1(
    model: PositiveMapModel,
    reference: DensityReference,
    *,
    report: ConditionReport | None = None,
    samples: int = DEFAULT_POSITIVITY_SAMPLES,
    tol: float = CONDITION_TOL,
) -> ExtendedMap:
    """Build `T_1` and `T~` for a map satisfying the three conditions.

    Raises:
        ConditionsNotMetError: If any condition fails.
    """
    if report is None:
        report = check_conditions(model, reference, samples, tol)
    if not report.passed:
        raise ConditionsNotMetError(
            f"map fails condition(s): {', '.join(report.failures())}", report=report
        )
    half = SuperOperator.congruence(reference.power(0.5))
    inverse_half = SuperOperator.congruence(reference.power(-0.5))
    l1_action = half.compose(model.action).compose(inverse_half)
    adjoint_action = inverse_half.compose(model.trace_adjoint()).compose(half)
    return ExtendedMap(model, reference, l1_action, adjoint_action, report)


def adjoint_map(ext: ExtendedMap) -> SuperOperator:
    """`T~`, defined by `Tr(T_1(a) x) = Tr(a T~(x))`."""
    return ext.adjoint_action


def _averages(
    action: SuperOperator,
    start: BlockMatrix,
    r_max: int,
) -> list[BlockMatrix]:
    if r_max < 0:
        raise InvalidInputError(f"averaging index must be non-negative, got {r_max}")
    dims = start.dims
    current = start.vector()
    running = current.copy()
    averages = [start]
    for r in range(1, r_max + 1):
        current = action.apply_vector(current)
        running = running + current
        averages.append(BlockMatrix.from_vector(running / (r + 1), dims))
    if isinstance(start, HermitianOperator):
        return [start] + [symmetrize(avg) for avg in averages[1:]]
    return averages


def cesaro_sequence(ext: ExtendedMap, a: LOneElement, r_max: int) -> list[LOneElement]:
    """`[S_0(a), ..., S_{r_max}(a)]` for `T_1`."""
    return [LOneElement(avg) for avg in _averages(ext.l1_action, a.rep, r_max)]


def cesaro(ext: ExtendedMap, a: LOneElement, r: int) -> LOneElement:
    """`S_r(a) = (1/(r+1)) sum_{k<=r} T_1^k(a)`."""
    return cesaro_sequence(ext, a, r)[-1]


def algebra_cesaro_sequence(
    model: PositiveMapModel,
    x: BlockMatrix,
    r_max: int,
) -> list[BlockMatrix]:
    return _averages(model.action, x, r_max)


def algebra_cesaro(model: PositiveMapModel, x: BlockMatrix, r: int) -> BlockMatrix:
    """Ergodic average of `T` itself on an algebra element."""
    return algebra_cesaro_sequence(model, x, r)[-1]


def check_lp_contraction(
    ext: ExtendedMap,
    p: float,
    samples: int = 16,
    seed: int = 0,
) -> float:
    """Largest observed excess `||T_p b||_p - ||b||_p` over random hermitian `b`."""
    action = ext.lp_action(p)
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(samples):
        b = random_element(ext.algebra, rng)
        worst = max(worst, schatten_norm(action(b), p) - schatten_norm(b, p))
    return worst


def modular_commutation_defect(
    model: PositiveMapModel,
    state: DensityReference,
    times: Sequence[float] = MODULAR_TIMES,
) -> float:
    """Max entrywise `|T(sigma_t(x)) - sigma_t(T(x))|` over matrix units and sampled `t`."""
    dims = model.algebra.signature
    worst = 0.0
    for t in times:
        for block, n in enumerate(dims):
            for i in range(n):
                for j in range(n):
                    blocks = [np.zeros((m, m), dtype=np.complex128) for m in dims]
                    blocks[block][i, j] = 1.0
                    unit = BlockMatrix(tuple(blocks))
                    left = model(modular_flow(unit, t, state))
                    right = modular_flow(model(unit), t, state)
                    worst = max(worst, left.distance(right))
    return worst


def random_certified_map(
    seed: int,
    algebra: Algebra,
    state: DensityReference,
    *,
    max_attempts: int = GENERATION_ATTEMPTS,
) -> PositiveMapModel:
    """Random Kraus map rescaled so that `T(1) <= 1` and `T^dagger(rho) <= rho` hold exactly.

    The same seed yields the same map bit for bit.

    Raises:
        GenerationFailureError: If the rescaled map still fails after `max_attempts`.
    """
    rng = np.random.default_rng(seed)
    dims = algebra.signature
    blocks = len(dims)
    term_count = int(rng.integers(1, 2 + 2 * blocks))
    raw: list[KrausTerm] = []
    for _ in range(term_count):
        source = int(rng.integers(blocks))
        target = int(rng.integers(blocks))
        shape = (dims[source], dims[target])
        v = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
        raw.append(KrausTerm(source, target, v, float(rng.uniform(0.2, 1.0))))
    beta = float(rng.uniform(0.0, 0.5))

    draft = kraus_map(algebra, raw)
    unit_top = max_eigenvalue(draft.unit_image())
    inverse_half = state.power(-0.5)
    pushed = symmetrize(draft.trace_adjoint()(state.rho))
    state_top = max_eigenvalue(symmetrize(pushed.congruence(inverse_half)))
    top = max(unit_top, state_top)
    if not top > 0:
        raise GenerationFailureError("random Kraus data vanished", seed=seed, attempts=0)

    shrink = 1.0
    for attempt in range(1, max_attempts + 1):
        scale = shrink / top
        scaled = kraus_map(
            algebra,
            [KrausTerm(t.source, t.target, t.operator, t.weight * scale) for t in raw],
            kind="kraus",
        )
        model = scaled.mixed_with_identity(beta)
        unit_margin = 1.0 - max_eigenvalue(model.unit_image())
        pushed = symmetrize(model.trace_adjoint()(state.rho))
        state_margin = min_eigenvalue(state.rho - pushed)
        if unit_margin >= 0.0 and state_margin >= 0.0:
            logger.debug("random map seed=%s accepted after %d attempt(s)", seed, attempt)
            return model
        logger.debug(
            "random map seed=%s attempt %d rejected: margins %.3e, %.3e",
            seed,
            attempt,
            unit_margin,
            state_margin,
        )
        shrink *= 1.0 - 10.0 ** (attempt - 13)
    raise GenerationFailureError(
        f"could not certify random map for seed {seed}", seed=seed, attempts=max_attempts
    )


def stationary_distribution(kernel: NDArray[np.float64]) -> NDArray[np.float64]:
    """Faithful stationary distribution of a row-stochastic kernel.

    Each closed communicating class contributes its Perron vector, weighted
    by the class size, so reducible kernels such as the identity get a
    strictly positive `mu`.

    Raises:
        NotSubInvariantError: If some state is transient, so every
            stationary distribution vanishes there.
    """
    p = np.asarray(kernel, dtype=np.float64)
    size = p.shape[0]
    count, labels = connected_components(p > 0.0, directed=True, connection="strong")
    mu = np.zeros(size)
    for label in range(count):
        members = np.flatnonzero(labels == label)
        outside = np.setdiff1d(np.arange(size), members)
        if outside.size and np.any(p[np.ix_(members, outside)] > 0.0):
            raise NotSubInvariantError(
                f"kernel {p.tolist()} has transient states {members.tolist()}; "
                "no faithful stationary distribution exists"
            )
        block = p[np.ix_(members, members)]
        _, _, vh = scipy.linalg.svd(block.T - np.eye(members.size))
        vector = np.abs(vh[-1].real)
        mu[members] = members.size * vector / vector.sum()
    return mu / mu.sum()


def example_tensor_markov(
    kernel: ArrayLike,
    inner: Algebra,
    inner_state: State,
    mu: ArrayLike | None = None,
) -> tuple[Algebra, State, PositiveMapModel]:
    """Classical Markov kernel tensored with the identity on an inner algebra.

    The algebra is `|Omega|` copies of `inner`; the state is `mu (x) rho`;
    the map is `T(x)_w = sum_v P[w, v] x_v`.

    Args:
        kernel: Row-stochastic matrix `P`.
        inner: Inner algebra.
        inner_state: Inner state.
        mu: Reference distribution with `mu P <= mu`; the stationary
            distribution of `P` when omitted.

    Raises:
        NotStochasticError: If `P` has negative entries or rows not summing to one.
        NotSubInvariantError: If `mu P <= mu` fails entrywise.
    """
    p = np.asarray(kernel, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1] or p.shape[0] < 1:
        raise NotStochasticError(f"Markov kernel must be a non-empty square matrix: {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < -STOCHASTIC_TOL):
        raise NotStochasticError("Markov kernel has negative or non-finite entries")
    rows = p.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > STOCHASTIC_TOL):
        raise NotStochasticError(f"Markov kernel rows sum to {rows.tolist()}, expected 1")
    p = np.clip(p, 0.0, None)

    size = p.shape[0]
    weights = stationary_distribution(p) if mu is None else np.asarray(mu, dtype=np.float64)
    if weights.shape != (size,) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-10:
        raise InvalidInputError("reference distribution must be a probability vector on Omega")
    if np.any(weights @ p > weights + STOCHASTIC_TOL):
        raise NotSubInvariantError(f"mu P <= mu fails: mu P = {(weights @ p).tolist()}")

    inner_dims = inner.signature
    algebra = Algebra(inner_dims * size)
    rho_blocks = [w * block for w in weights for block in inner_state.rho.blocks]
    state = make_state(algebra, rho_blocks)
    terms = []
    width = len(inner_dims)
    for omega in range(size):
        for other in range(size):
            if p[omega, other] == 0.0:
                continue
            for j, n in enumerate(inner_dims):
                terms.append(
                    KrausTerm(
                        source=other * width + j,
                        target=omega * width + j,
                        operator=np.eye(n, dtype=np.complex128),
                        weight=float(p[omega, other]),
                    )
                )
    return algebra, state, kraus_map(algebra, terms, kind="markov_tensor")


BlockPartition = Sequence[Sequence[Sequence[int]] | None]


def _group_projections(
    algebra: Algebra,
    partition: BlockPartition,
) -> list[list[NDArray[np.complex128]]]:
    if len(partition) != len(algebra.signature):
        raise NotSubalgebraError(
            f"partition covers {len(partition)} blocks, algebra has {len(algebra.signature)}"
        )
    projections: list[list[NDArray[np.complex128]]] = []
    for block, (n, groups) in enumerate(zip(algebra.signature, partition)):
        if groups is None:
            groups = [list(range(n))]
        seen: list[int] = []
        block_projections = []
        for group in groups:
            indices = [int(i) for i in group]
            if not indices:
                raise NotSubalgebraError(f"block {block} has an empty group")
            projection = np.zeros((n, n), dtype=np.complex128)
            for i in indices:
                if not 0 <= i < n:
                    raise NotSubalgebraError(f"block {block} group index {i} out of range")
                projection[i, i] = 1.0
            seen.extend(indices)
            block_projections.append(projection)
        if sorted(seen) != list(range(n)):
            raise NotSubalgebraError(
                f"groups of block {block} must partition range({n}) exactly, got {sorted(seen)}"
            )
        projections.append(block_projections)
    return projections


def _pinch(x: BlockMatrix, projections: list[list[NDArray[np.complex128]]]) -> BlockMatrix:
    return BlockMatrix(
        tuple(sum(q @ a @ q for q in groups) for a, groups in zip(x.blocks, projections))
    )


def is_modular_invariant(
    state: DensityReference,
    partition: BlockPartition,
    times: Sequence[float] = MODULAR_TIMES,
    tol: float = 1e-9,
) -> bool:
    """Whether the block-diagonal subalgebra is globally invariant under the modular flow.

    Checked on the subalgebra's matrix units at the sampled times.
    """
    projections = _group_projections(state.algebra, partition)
    dims = state.algebra.signature
    for t in times:
        for block, groups in enumerate(projections):
            for q in groups:
                indices = np.flatnonzero(np.diag(q).real)
                for i in indices:
                    for j in indices:
                        blocks = [np.zeros((m, m), dtype=np.complex128) for m in dims]
                        blocks[block][i, j] = 1.0
                        flowed = modular_flow(BlockMatrix(tuple(blocks)), t, state)
                        if _pinch(flowed, projections).distance(flowed) > tol:
                            return False
    return True


def example_cond_expectation(
    algebra: Algebra,
    state: DensityReference,
    partition: BlockPartition,
) -> PositiveMapModel:
    """Generalised conditional expectation onto a block-diagonal subalgebra.

    Each entry of `partition` lists the index groups of one block (`None`
    keeps the block whole); the subalgebra is the direct sum of the full
    matrix algebras on the groups. For a modular-invariant subalgebra the
    result is the state-preserving conditional expectation (a pinching);
    otherwise it is `E(x) = rho_N^{-1/2} P(rho^{1/2} x rho^{1/2}) rho_N^{-1/2}`
    with `P` the pinching and `rho_N = P(rho)`.

    Raises:
        NotSubalgebraError: If the groups do not partition every block.
    """
    projections = _group_projections(algebra, partition)
    algebra.check(state.rho)
    terms: list[KrausTerm] = []
    if is_modular_invariant(state, partition):
        for block, groups in enumerate(projections):
            terms.extend(KrausTerm(block, block, q) for q in groups)
        return kraus_map(algebra, terms, kind="cond_exp")

    logger.info("subalgebra is not modular invariant; using the generalised expectation")
    half = state.power(0.5)
    reduced = hermitian(_pinch(state.rho, projections))
    reduced_spectrum = eigh(reduced)
    reduced_inverse_half = reduced_spectrum.rebuild(
        [w**-0.5 for w in reduced_spectrum.eigenvalues]
    )
    for block, groups in enumerate(projections):
        for q in groups:
            v = half.blocks[block] @ q @ reduced_inverse_half.blocks[block]
            terms.append(KrausTerm(block, block, v))
    return kraus_map(algebra, terms, kind="cond_exp")
