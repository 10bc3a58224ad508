"""Maximal ergodic projections: the maximiser over `K`, spectral cuts and certificates.

For a positive `a` and `lambda > 0` the functional

    g(x_0, ..., x_n) = sum_r Tr(B_r x_r),   B_r = (r + 1)(S_r(a) - lambda rho)

is maximised over `K = {x_r >= 0, sum_r x_r <= 1}`. The kernel of
`z_n = 1 - sum_r x_r` at the maximiser gives `1 - e_n`; a stabilised limit of
the `e_n` gives the uniform projection `e`.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .dynamics import (
    ExtendedMap,
    PositiveMapModel,
    algebra_cesaro_sequence,
    cesaro_sequence,
)
from .errors import (
    DimensionMismatchError,
    InvalidInputError,
    NoStableLimitError,
    NotTracialError,
    SolverStalledError,
)
from .matalg import (
    BlockMatrix,
    HermitianOperator,
    Interval,
    default_eps_kernel,
    eigh,
    hermitian,
    min_eigenvalue,
    op_norm,
    spectral_mask,
    spectral_projection,
    symmetrize,
)
from .models import SolverOptions, Tolerances, UniformOptions
from .vna import DensityReference, LOneElement, Weight, lp_norm, random_element

logger = logging.getLogger(__name__)

Block = NDArray[np.complex128]

DUAL_FEASIBILITY_TOL = 1e-9
TYPE_INFINITY_HORIZON = 20
# `||(1 - e_n) z_n||` may not exceed this multiple of the kernel threshold.
KERNEL_IDENTITY_FACTOR = 10.0
# Cut point of the limit operator h.
LIMIT_CUT = 0.5
# Fixed mixing weights for the common-eigenbasis dual candidate.
_MIX_SEED = 20240601


class CertificateKind(StrEnum):
    POINTWISE = "pointwise"
    UNIFORM = "uniform"
    YEADON_TRACIAL = "yeadon_tracial"


@dataclass(frozen=True, slots=True, eq=False)
class KPoint:
    """Tuple `(x_0, ..., x_n)` in `K`.

    Attributes:
        xs: Positive operators with `sum_r x_r <= 1`.
    """

    xs: tuple[HermitianOperator, ...]

    @classmethod
    def zeros(cls, dims: Sequence[int], n: int) -> KPoint:
        zero = HermitianOperator(BlockMatrix.zeros(dims).blocks)
        return cls(tuple(zero for _ in range(n + 1)))

    @property
    def n(self) -> int:
        return len(self.xs) - 1

    @property
    def dims(self) -> tuple[int, ...]:
        return self.xs[0].dims

    def total(self) -> HermitianOperator:
        return symmetrize(BlockMatrix(tuple(sum(blocks) for blocks in zip(*(x.blocks for x in self.xs)))))

    def slack(self) -> HermitianOperator:
        """`z = 1 - sum_r x_r`."""
        return symmetrize(BlockMatrix.identity(self.dims) - self.total())

    def feasibility_defect(self) -> float:
        """Largest violation of `x_r >= 0` and `sum_r x_r <= 1` in eigenvalue terms."""
        worst = max(0.0, -min(min_eigenvalue(x) for x in self.xs))
        return max(worst, -min_eigenvalue(self.slack()))


@dataclass(frozen=True, slots=True, eq=False)
class MaximizerSolution:
    """Near-optimal point of the maximisation with its optimality certificate.

    Attributes:
        point: The maximiser `(x_0, ..., x_n)`.
        objective: `g(point)`.
        dual_bound: Trace of a feasible dual point; an upper bound on the optimum.
        gap: `max(0, dual_bound - objective)`.
        sweeps: Full sweeps performed.
        blocks_b: The operators `B_r`.
        dual_point: Dual operator `Z >= B_r, Z >= 0` attaining `dual_bound`.
        history: Objective after each sweep.
        shift_moves: Number of accepted shift moves.
        stalled: Whether the sweep cap was hit with a large gap.
    """

    point: KPoint
    objective: float
    dual_bound: float
    gap: float
    sweeps: int
    blocks_b: tuple[HermitianOperator, ...]
    dual_point: HermitianOperator
    history: tuple[float, ...] = ()
    shift_moves: int = 0
    stalled: bool = False


@dataclass(frozen=True, slots=True, eq=False)
class Certificate:
    """Projection with the signed slacks of the inequalities it satisfies.

    Attributes:
        projection: `e_n` or `e`.
        lam: Threshold `lambda`.
        kind: Which inequality family was checked.
        index: `n` for pointwise certificates, the horizon otherwise.
        residuals: Gated signed slacks; the certificate fails if one is below `-tol`.
        info: Informational quantities, never gated.
        tol: Absolute gate tolerance.
        passed: Whether all gated residuals are at least `-tol`.
        solution: Maximiser behind a pointwise certificate.
    """

    projection: HermitianOperator
    lam: float
    kind: CertificateKind
    index: int
    residuals: dict[str, float]
    info: dict[str, float]
    tol: float
    passed: bool
    solution: MaximizerSolution | None = None

    def worst_residual(self) -> float:
        return min(self.residuals.values(), default=math.inf)


@dataclass(frozen=True, slots=True, eq=False)
class LimitDiagnostics:
    """Limit point `h` of the projections `e_n` and its inverse cut.

    Attributes:
        h: Average of the chosen cluster of projections.
        distances: Operator-norm distances between consecutive `e_n`.
        members: Indices `n` in the chosen cluster.
        window: Required cluster size.
        cluster_tol: Clustering radius.
        inverse_cut: `g = int_{1/2}^1 s^{-1} de_s` for the spectral family of `h`.
        inverse_cut_norm: `||g||`, at most 2.
        stable: Whether the cluster reached the window.
    """

    h: HermitianOperator
    distances: tuple[float, ...]
    members: tuple[int, ...]
    window: int
    cluster_tol: float
    inverse_cut: HermitianOperator
    inverse_cut_norm: float
    stable: bool


@dataclass(frozen=True, slots=True, eq=False)
class PipelineResult:
    """Everything produced by one run of the projection construction.

    Attributes:
        pointwise: Certificates for `n = 0..n_max`.
        uniform: Uniform certificate, or `None` without a stable limit.
        diagnostics: Limit diagnostics (also present when unstable).
        solutions: Maximiser solutions for `n = 0..max(n_max, horizon)`.
    """

    pointwise: tuple[Certificate, ...]
    uniform: Certificate | None
    diagnostics: LimitDiagnostics
    solutions: tuple[MaximizerSolution, ...] = field(repr=False)

    @property
    def unstable(self) -> bool:
        return not self.diagnostics.stable

    @property
    def passed(self) -> bool:
        certificates = list(self.pointwise)
        if self.uniform is not None:
            certificates.append(self.uniform)
        return all(cert.passed for cert in certificates)


def gate_tolerance(a: LOneElement, lam: float, residual: float = 1e-7) -> float:
    """Absolute gate `residual * max(1, ||a||_1, lambda)`."""
    return residual * max(1.0, a.trace_norm(), lam)


def _check_inputs(a: LOneElement, lam: float, reference: DensityReference, ext: ExtendedMap) -> None:
    if not lam > 0 or not math.isfinite(lam):
        raise InvalidInputError(f"lambda must be positive and finite, got {lam!r}")
    reference.algebra.check(a.rep)
    if ext.algebra.signature != reference.algebra.signature:
        raise DimensionMismatchError("extended map and reference live on different algebras")


def objective_blocks(
    a: LOneElement,
    lam: float,
    n: int,
    reference: DensityReference,
    ext: ExtendedMap,
    *,
    averages: Sequence[LOneElement] | None = None,
) -> tuple[HermitianOperator, ...]:
    """`B_r = (r + 1)(S_r(a) - lambda rho)` for `r = 0..n`."""
    if n < 0:
        raise InvalidInputError(f"n must be non-negative, got {n}")
    if averages is None or len(averages) < n + 1:
        averages = cesaro_sequence(ext, a, n)
    rho = reference.rho
    return tuple(
        symmetrize((averages[r].rep - rho * lam) * float(r + 1)) for r in range(n + 1)
    )


def _objective_from_blocks(point: KPoint, blocks_b: Sequence[HermitianOperator]) -> float:
    if len(point.xs) != len(blocks_b):
        raise DimensionMismatchError(
            f"point has {len(point.xs)} components, objective has {len(blocks_b)}"
        )
    return float(sum(b.pairing(x).real for b, x in zip(blocks_b, point.xs)))


def objective_g(
    point: KPoint,
    a: LOneElement,
    lam: float,
    reference: DensityReference,
    ext: ExtendedMap,
) -> float:
    """`g(point) = sum_r Tr(B_r x_r)`."""
    if point.dims != reference.algebra.signature:
        raise DimensionMismatchError(
            f"point lives on {list(point.dims)}, algebra is {list(reference.algebra.signature)}"
        )
    blocks_b = objective_blocks(a, lam, point.n, reference, ext)
    return _objective_from_blocks(point, blocks_b)


def _herm(m: Block) -> Block:
    return 0.5 * (m + m.conj().T)


def _trace_pair(b: Block, x: Block) -> float:
    return float(np.sum(b * x.T).real)


def _psd_sqrt(w: Block) -> Block:
    values, vectors = scipy.linalg.eigh(_herm(w))
    roots = np.sqrt(np.clip(values, 0.0, None))
    return (vectors * roots) @ vectors.conj().T


def _pair_update(xi: Block, xj: Block, d: Block) -> tuple[Block, Block, float]:
    """Best split of `W = x_i + x_j` for `Tr(d x_i)`: `x_i = W^{1/2} P_+ W^{1/2}`.

    Returns the new pair and the objective gain.
    """
    root = _psd_sqrt(xi + xj)
    values, vectors = scipy.linalg.eigh(_herm(root @ d @ root))
    positive = vectors[:, values > 0]
    projection = positive @ positive.conj().T
    new_i = _herm(root @ projection @ root)
    new_j = _herm(root @ (np.eye(d.shape[0]) - projection) @ root)
    gain = _trace_pair(d, new_i) - _trace_pair(d, xi)
    return new_i, new_j, gain


def _tight_shift(z: Block, bs: Sequence[Block]) -> Block:
    """Shift `Z + t 1` with the least `t` making it dominate every `B_r` and 0."""
    t = float(scipy.linalg.eigvalsh(-z)[-1])
    for b in bs:
        t = max(t, float(scipy.linalg.eigvalsh(_herm(b - z))[-1]))
    return _herm(z + t * np.eye(z.shape[0]))


def _dual_candidates(bs: Sequence[Block], xs: Sequence[Block] | None) -> list[Block]:
    size = bs[0].shape[0]
    candidates = [sum((_positive_part(b) for b in bs), np.zeros((size, size), dtype=np.complex128))]
    mix = np.random.default_rng(_MIX_SEED).uniform(0.5, 1.5, size=len(bs))
    bases = [scipy.linalg.eigh(_herm(sum(c * b for c, b in zip(mix, bs))))[1]]
    if xs is not None:
        y = _herm(sum((b @ x for b, x in zip(bs, xs)), np.zeros((size, size), dtype=np.complex128)))
        candidates.append(y)
        bases.append(scipy.linalg.eigh(y)[1])
    for u in bases:
        diagonal = np.zeros(size)
        for b in bs:
            diagonal = np.maximum(diagonal, np.real(np.diag(u.conj().T @ b @ u)))
        candidates.append((u * diagonal) @ u.conj().T)
    return [_tight_shift(z, bs) for z in candidates]


def _positive_part(b: Block) -> Block:
    values, vectors = scipy.linalg.eigh(_herm(b))
    return (vectors * np.clip(values, 0.0, None)) @ vectors.conj().T


def _block_dual(bs: Sequence[Block], xs: Sequence[Block] | None) -> tuple[float, Block]:
    best_value = math.inf
    best: Block | None = None
    for z in _dual_candidates(bs, xs):
        scale = max(1.0, float(np.max(np.abs(z))))
        feasible = scipy.linalg.eigvalsh(z)[0] >= -DUAL_FEASIBILITY_TOL * scale and all(
            scipy.linalg.eigvalsh(_herm(z - b))[0] >= -DUAL_FEASIBILITY_TOL * scale for b in bs
        )
        if not feasible:
            continue
        value = float(np.trace(z).real)
        if value < best_value:
            best_value, best = value, z
    if best is None:
        raise InvalidInputError("no feasible dual candidate")
    return best_value, best


def _dual_bound(
    blocks_b: Sequence[HermitianOperator],
    point: KPoint | None = None,
) -> tuple[float, HermitianOperator]:
    total = 0.0
    dual_blocks = []
    for k in range(len(blocks_b[0].blocks)):
        bs = [b.blocks[k] for b in blocks_b]
        xs = [x.blocks[k] for x in point.xs] if point is not None else None
        value, z = _block_dual(bs, xs)
        total += value
        dual_blocks.append(z)
    return total, HermitianOperator(tuple(dual_blocks))


def dual_upper_bound(
    blocks_b: Sequence[HermitianOperator],
    point: KPoint | None = None,
) -> float:
    """Upper bound on `max_K g` from a feasible dual point `Z >= B_r, Z >= 0`.

    Candidates are `sum_r (B_r)_+`, the complementary-slackness guess
    `sum_r B_r x_r` when a point is given, and common-eigenbasis majorants;
    each is shifted by a multiple of the unit until tight, re-verified and the
    smallest trace wins. Blocks are handled independently.
    """
    if not blocks_b:
        raise InvalidInputError("dual bound needs at least one operator")
    return _dual_bound(blocks_b, point)[0]


@dataclass(slots=True)
class _BlockState:
    xs: list[Block]
    z: Block


def _sweep(state: _BlockState, bs: Sequence[Block]) -> None:
    n_terms = len(bs)
    for r in range(n_terms):
        new_x, new_z, gain = _pair_update(state.xs[r], state.z, bs[r])
        if gain > 0:
            state.xs[r], state.z = new_x, new_z
    for r in range(n_terms):
        for s in range(r + 1, n_terms):
            new_r, new_s, gain = _pair_update(state.xs[r], state.xs[s], bs[r] - bs[s])
            if gain > 0:
                state.xs[r], state.xs[s] = new_r, new_s


def _block_objective(state: _BlockState, bs: Sequence[Block]) -> float:
    return sum(_trace_pair(b, x) for b, x in zip(bs, state.xs))


def _to_point(states: Sequence[_BlockState], n: int) -> KPoint:
    return KPoint(
        tuple(HermitianOperator(tuple(st.xs[r] for st in states)) for r in range(n + 1))
    )


def _shift_candidate(point: KPoint, ext: ExtendedMap) -> KPoint:
    """`(T~(x_1), ..., T~(x_n), 0)`, rescaled into `K` if round-off pushes it out."""
    zero = HermitianOperator(BlockMatrix.zeros(point.dims).blocks)
    shifted = [symmetrize(ext.adjoint(x)) for x in point.xs[1:]] + [zero]
    candidate = KPoint(tuple(shifted))
    top = -min_eigenvalue(candidate.slack()) + 1.0
    if top > 1.0:
        candidate = KPoint(tuple(symmetrize(x / top) for x in shifted))
    return candidate


def solve_maximizer(
    a: LOneElement,
    lam: float,
    n: int,
    reference: DensityReference,
    ext: ExtendedMap,
    opts: SolverOptions | None = None,
    *,
    warm_start: KPoint | None = None,
    averages: Sequence[LOneElement] | None = None,
) -> MaximizerSolution:
    """Maximise `g` over `K` by exact pairwise block updates.

    A sweep first moves mass between each `x_r` and the slack `z`, then
    between every pair `x_r, x_s`; each move is the closed-form optimum of
    its two-variable subproblem and is kept only if it raises `g`. When a
    sweep stops improving, the shift move `(T~(x_1), ..., T~(x_n), 0)` is
    tried. The solve stops on a small relative objective change, a small
    duality gap, or after `opts.max_sweeps` sweeps.

    Args:
        a: Positive L^1 input.
        lam: Threshold `lambda > 0`.
        n: Largest averaging index.
        reference: Density `rho` (state or weight).
        ext: Certified extended map.
        opts: Stopping rules.
        warm_start: Feasible starting point, possibly with fewer components.
        averages: Precomputed `S_0(a), ..., S_m(a)` with `m >= n`.

    Returns:
        The best point found, with dual bound and gap.

    Raises:
        SolverStalledError: In strict mode, when the sweep cap is hit with a large gap.
    """
    opts = opts or SolverOptions()
    _check_inputs(a, lam, reference, ext)
    blocks_b = objective_blocks(a, lam, n, reference, ext, averages=averages)
    dims = reference.algebra.signature

    states: list[_BlockState] = []
    active: list[bool] = []
    for k, size in enumerate(dims):
        bs = [b.blocks[k] for b in blocks_b]
        xs = [np.zeros((size, size), dtype=np.complex128) for _ in range(n + 1)]
        if warm_start is not None:
            for r, x in enumerate(warm_start.xs[: n + 1]):
                xs[r] = x.blocks[k].copy()
        z = _herm(np.eye(size) - sum(xs, np.zeros((size, size), dtype=np.complex128)))
        states.append(_BlockState(xs, z))
        trivial = all(scipy.linalg.eigvalsh(_herm(b))[-1] <= 0 for b in bs)
        active.append(not trivial)
        if trivial:
            states[-1] = _BlockState(
                [np.zeros((size, size), dtype=np.complex128) for _ in range(n + 1)],
                np.eye(size, dtype=np.complex128),
            )

    def total_objective() -> float:
        return float(
            sum(
                _block_objective(st, [b.blocks[k] for b in blocks_b])
                for k, st in enumerate(states)
            )
        )

    objective = total_objective()
    history: list[float] = []
    shift_moves = 0
    sweeps = 0
    gap = math.inf
    dual_bound = math.inf
    dual_point: HermitianOperator | None = None

    if not any(active):
        dual_bound, dual_point = _dual_bound(blocks_b)
        point = _to_point(states, n)
        logger.debug("n=%d: all B_r <= 0, maximiser is zero", n)
        return MaximizerSolution(
            point=point,
            objective=objective,
            dual_bound=dual_bound,
            gap=max(0.0, dual_bound - objective),
            sweeps=0,
            blocks_b=blocks_b,
            dual_point=dual_point,
            history=(objective,),
        )

    while sweeps < opts.max_sweeps:
        previous = objective
        for k, st in enumerate(states):
            if active[k]:
                _sweep(st, [b.blocks[k] for b in blocks_b])
        sweeps += 1
        objective = total_objective()
        history.append(objective)

        point = _to_point(states, n)
        dual_bound, dual_point = _dual_bound(blocks_b, point)
        scale = max(1.0, abs(dual_bound))
        gap = max(0.0, dual_bound - objective)
        logger.debug("n=%d sweep=%d objective=%.12g gap=%.3e", n, sweeps, objective, gap)
        if gap <= opts.tol_gap * scale:
            break
        if objective - previous > opts.tol_obj * scale:
            continue
        if n >= 1:
            candidate = _shift_candidate(point, ext)
            value = _objective_from_blocks(candidate, blocks_b)
            if value > objective + opts.tol_obj * scale:
                logger.debug("n=%d shift move raises g from %.12g to %.12g", n, objective, value)
                shift_moves += 1
                for k, st in enumerate(states):
                    st.xs = [x.blocks[k].copy() for x in candidate.xs]
                    st.z = _herm(
                        np.eye(dims[k]) - sum(st.xs, np.zeros((dims[k],) * 2, dtype=np.complex128))
                    )
                    active[k] = True
                objective = total_objective()
                history.append(objective)
                continue
        break

    point = _to_point(states, n)
    if dual_point is None:
        dual_bound, dual_point = _dual_bound(blocks_b, point)
        gap = max(0.0, dual_bound - objective)
    scale = max(1.0, abs(dual_bound))
    stalled = sweeps >= opts.max_sweeps and gap > opts.stall_gap * scale
    solution = MaximizerSolution(
        point=point,
        objective=objective,
        dual_bound=dual_bound,
        gap=gap,
        sweeps=sweeps,
        blocks_b=blocks_b,
        dual_point=dual_point,
        history=tuple(history),
        shift_moves=shift_moves,
        stalled=stalled,
    )
    if stalled:
        logger.warning("n=%d: solver stalled after %d sweeps with gap %.3e", n, sweeps, gap)
        if opts.strict:
            raise SolverStalledError(
                f"maximiser stalled after {sweeps} sweeps with gap {gap:.3e}", solution=solution
            )
    return solution


def extract_projection(
    solution: MaximizerSolution,
    eps_kernel: float | None = None,
    *,
    strict: bool = False,
) -> HermitianOperator:
    """`e_n = 1 - p_0` where `p_0` is the kernel projection of `z_n = 1 - sum_r x_r`.

    Eigenvalues of `z_n` above round-off but within `eps_kernel` are counted
    in the kernel, so `e_n` can only shrink.

    Raises:
        AmbiguousSpectralCutError: In strict mode, on an eigenvalue in the ambiguity band.
    """
    z = solution.point.slack()
    eps = eps_kernel if eps_kernel is not None else default_eps_kernel(z)
    return spectral_projection(z, Interval(0.0), eps, strict=strict)


def kernel_identity_residual(solution: MaximizerSolution, projection: HermitianOperator) -> float:
    """`||(1 - e_n) - (1 - e_n) sum_r x_r||`, which equals `||(1 - e_n) z_n||`."""
    complement = BlockMatrix.identity(projection.dims) - projection
    return (complement @ solution.point.slack()).op_norm()


def _compress(e: HermitianOperator, x: BlockMatrix) -> HermitianOperator:
    return symmetrize(e @ x @ e)


def _pointwise_from_solution(
    solution: MaximizerSolution,
    a: LOneElement,
    lam: float,
    n: int,
    reference: DensityReference,
    averages: Sequence[LOneElement],
    tolerances: Tolerances,
    *,
    kind: CertificateKind = CertificateKind.POINTWISE,
) -> Certificate:
    e = extract_projection(solution, tolerances.eps_kernel, strict=tolerances.strict)
    tol = gate_tolerance(a, lam, tolerances.residual)
    rho = reference.rho
    compressed_rho = _compress(e, rho)
    residuals: dict[str, float] = {}
    for r in range(n + 1):
        gap_operator = symmetrize(compressed_rho * lam - _compress(e, averages[r].rep))
        residuals[f"order_{r}"] = min_eigenvalue(gap_operator)
    outside = reference.expectation(BlockMatrix.identity(e.dims) - e)
    mass = a.integral()
    residuals["mass"] = 2.0 * mass / lam - outside
    z = solution.point.slack()
    eps = tolerances.eps_kernel if tolerances.eps_kernel is not None else default_eps_kernel(z)
    residuals["kernel_identity"] = KERNEL_IDENTITY_FACTOR * eps - kernel_identity_residual(
        solution, e
    )
    info = {
        "mass_tight": mass / lam - outside,
        "objective": solution.objective,
        "gap": solution.gap,
    }
    passed = all(value >= -tol for value in residuals.values())
    if not passed:
        logger.warning(
            "pointwise certificate n=%d failed: worst residual %.3e (tol %.1e)",
            n,
            min(residuals.values()),
            tol,
        )
    return Certificate(
        projection=e,
        lam=lam,
        kind=kind,
        index=n,
        residuals=residuals,
        info=info,
        tol=tol,
        passed=passed,
        solution=solution,
    )


def pointwise_certificate(
    a: LOneElement,
    lam: float,
    n: int,
    reference: DensityReference,
    ext: ExtendedMap,
    *,
    solver: SolverOptions | None = None,
    tolerances: Tolerances | None = None,
    solution: MaximizerSolution | None = None,
) -> Certificate:
    """Certify `e_n S_r(a) e_n <= lambda e_n rho e_n` (r <= n) and `phi(1 - e_n) <= (2/lambda) Tr a`.

    The cut is gated too: `||(1 - e_n) z_n|| <= 10 eps_kernel`.
    The sharper bound `phi(1 - e_n) <= (1/lambda) Tr a` is recorded in
    `info["mass_tight"]` without gating.
    """
    tolerances = tolerances or Tolerances()
    averages = cesaro_sequence(ext, a, n)
    if solution is None:
        solution = solve_maximizer(a, lam, n, reference, ext, solver, averages=averages)
    return _pointwise_from_solution(solution, a, lam, n, reference, averages, tolerances)


def _cluster(projections: Sequence[HermitianOperator], radius: float) -> list[list[int]]:
    leaders: list[int] = []
    clusters: list[list[int]] = []
    for index, p in enumerate(projections):
        for slot, leader in enumerate(leaders):
            if (p - projections[leader]).op_norm() <= radius:
                clusters[slot].append(index)
                break
        else:
            leaders.append(index)
            clusters.append([index])
    return clusters


def limit_diagnostics(
    projections: Sequence[HermitianOperator],
    first_index: int,
    opts: UniformOptions,
    *,
    eps_kernel: float | None = None,
    strict: bool = False,
) -> LimitDiagnostics:
    """Cluster the projections and form the limit point `h` with its inverse cut."""
    if not projections:
        raise InvalidInputError("limit detection needs at least one projection")
    distances = tuple(
        (projections[i] - projections[i - 1]).op_norm() for i in range(1, len(projections))
    )
    clusters = _cluster(projections, opts.cluster_tol)
    chosen = max(clusters, key=lambda members: (len(members), members[-1]))
    h = symmetrize(
        BlockMatrix(
            tuple(
                sum(projections[i].blocks[k] for i in chosen) / len(chosen)
                for k in range(len(projections[0].blocks))
            )
        )
    )
    spectrum = eigh(h)
    eps = eps_kernel if eps_kernel is not None else default_eps_kernel(h)
    masks = spectral_mask(spectrum, Interval(LIMIT_CUT), eps, strict=strict)
    inverse_values = []
    for w, mask in zip(spectrum.eigenvalues, masks):
        values = np.zeros_like(w)
        values[mask] = 1.0 / w[mask]
        inverse_values.append(values)
    inverse_cut = hermitian(spectrum.rebuild(inverse_values))
    return LimitDiagnostics(
        h=h,
        distances=distances,
        members=tuple(first_index + i for i in chosen),
        window=opts.window,
        cluster_tol=opts.cluster_tol,
        inverse_cut=inverse_cut,
        inverse_cut_norm=op_norm(inverse_cut),
        stable=len(chosen) >= opts.window,
    )


def _uniform_from_projections(
    projections: Sequence[HermitianOperator],
    a: LOneElement,
    lam: float,
    horizon: int,
    reference: DensityReference,
    ext: ExtendedMap,
    opts: UniformOptions,
    tolerances: Tolerances,
    *,
    operator_bound: bool = False,
) -> tuple[Certificate | None, LimitDiagnostics]:
    diagnostics = limit_diagnostics(
        projections, 1, opts, eps_kernel=tolerances.eps_kernel, strict=tolerances.strict
    )
    if not diagnostics.stable:
        logger.warning(
            "no stable limit within horizon %d: largest cluster has %d of %d required members",
            horizon,
            len(diagnostics.members),
            diagnostics.window,
        )
        if tolerances.strict:
            raise NoStableLimitError(
                f"no cluster of {opts.window} projections within {opts.cluster_tol:.1e}",
                diagnostics=diagnostics,
            )
        return None, diagnostics

    h = diagnostics.h
    eps = tolerances.eps_kernel if tolerances.eps_kernel is not None else default_eps_kernel(h)
    e = spectral_projection(h, Interval(LIMIT_CUT), eps, strict=tolerances.strict)
    check_horizon = opts.check_horizon if opts.check_horizon is not None else 4 * horizon
    averages = cesaro_sequence(ext, a, check_horizon)
    tol = gate_tolerance(a, lam, tolerances.residual)
    identity = BlockMatrix.identity(e.dims)

    residuals: dict[str, float] = {}
    info: dict[str, float] = {}
    for r in range(check_horizon + 1):
        if operator_bound:
            bound = symmetrize(e * (2.0 * lam) - _compress(e, averages[r].rep))
            residuals[f"operator_{r}"] = min_eigenvalue(bound)
        else:
            residuals[f"trace_{r}"] = 4.0 * lam - float(averages[r].pair(e).real)
    mass = a.integral()
    residuals["mass"] = 2.0 * mass / lam - reference.expectation(identity - e)
    residuals["inverse_cut_norm"] = 2.0 - diagnostics.inverse_cut_norm
    residuals["inverse_cut_identity"] = -(e - diagnostics.inverse_cut @ h).op_norm()
    info["h_trace"] = float(h.trace().real)
    info["limit_members"] = float(len(diagnostics.members))

    passed = all(value >= -tol for value in residuals.values())
    if not passed:
        logger.warning(
            "uniform certificate failed: worst residual %.3e (tol %.1e)",
            min(residuals.values()),
            tol,
        )
    kind = CertificateKind.YEADON_TRACIAL if operator_bound else CertificateKind.UNIFORM
    certificate = Certificate(
        projection=e,
        lam=lam,
        kind=kind,
        index=horizon,
        residuals=residuals,
        info=info,
        tol=tol,
        passed=passed,
    )
    return certificate, diagnostics


def _solve_range(
    a: LOneElement,
    lam: float,
    n_top: int,
    reference: DensityReference,
    ext: ExtendedMap,
    solver: SolverOptions | None,
    averages: Sequence[LOneElement],
) -> list[MaximizerSolution]:
    solutions: list[MaximizerSolution] = []
    warm: KPoint | None = None
    for n in range(n_top + 1):
        solution = solve_maximizer(
            a, lam, n, reference, ext, solver, warm_start=warm, averages=averages
        )
        solutions.append(solution)
        warm = solution.point
    return solutions


def uniform_projection(
    a: LOneElement,
    lam: float,
    horizon: int,
    reference: DensityReference,
    ext: ExtendedMap,
    opts: UniformOptions | None = None,
    *,
    solver: SolverOptions | None = None,
    tolerances: Tolerances | None = None,
    solutions: Sequence[MaximizerSolution] | None = None,
) -> tuple[Certificate, LimitDiagnostics]:
    """Uniform projection `e = 1 - e_{1/2}` from a stabilised limit of `e_1, ..., e_horizon`.

    Certifies `Tr(e S_r(a) e) <= 4 lambda` for `r <= check_horizon` and
    `phi(1 - e) <= (2/lambda) Tr a`, plus `||g|| <= 2` and `e = g h` for the
    inverse cut `g`.

    Raises:
        NoStableLimitError: If no cluster reaches `opts.window` members.
    """
    if horizon < 1:
        raise InvalidInputError(f"horizon must be at least 1, got {horizon}")
    opts = opts or UniformOptions()
    tolerances = tolerances or Tolerances()
    if solutions is None or len(solutions) < horizon + 1:
        averages = cesaro_sequence(ext, a, horizon)
        solutions = _solve_range(a, lam, horizon, reference, ext, solver, averages)
    projections = [
        extract_projection(solutions[n], tolerances.eps_kernel, strict=tolerances.strict)
        for n in range(1, horizon + 1)
    ]
    certificate, diagnostics = _uniform_from_projections(
        projections, a, lam, horizon, reference, ext, opts, tolerances
    )
    if certificate is None:
        raise NoStableLimitError(
            f"no cluster of {opts.window} projections within {opts.cluster_tol:.1e}",
            diagnostics=diagnostics,
        )
    return certificate, diagnostics


def theorem_pipeline(
    a: LOneElement,
    lam: float,
    n_max: int,
    horizon: int,
    reference: DensityReference,
    ext: ExtendedMap,
    *,
    solver: SolverOptions | None = None,
    uniform: UniformOptions | None = None,
    tolerances: Tolerances | None = None,
) -> PipelineResult:
    """Pointwise certificates for `n <= n_max` and the uniform certificate for `horizon`.

    Each maximisation is solved once for `n = 0..max(n_max, horizon)`, warm
    started from `n - 1`. Without a stable limit the uniform certificate is
    `None` (strict mode raises `NoStableLimitError` instead).
    """
    if n_max < 0 or horizon < 1:
        raise InvalidInputError("n_max must be >= 0 and horizon >= 1")
    uniform = uniform or UniformOptions()
    tolerances = tolerances or Tolerances()
    _check_inputs(a, lam, reference, ext)
    n_top = max(n_max, horizon)
    averages = cesaro_sequence(ext, a, n_top)
    solutions = _solve_range(a, lam, n_top, reference, ext, solver, averages)
    pointwise = tuple(
        _pointwise_from_solution(solutions[n], a, lam, n, reference, averages, tolerances)
        for n in range(n_max + 1)
    )
    projections = [
        extract_projection(solutions[n], tolerances.eps_kernel, strict=tolerances.strict)
        for n in range(1, horizon + 1)
    ]
    certificate, diagnostics = _uniform_from_projections(
        projections, a, lam, horizon, reference, ext, uniform, tolerances
    )
    return PipelineResult(pointwise, certificate, diagnostics, tuple(solutions))


def yeadon_tracial(
    a: LOneElement,
    lam: float,
    horizon: int,
    weight: Weight,
    ext: ExtendedMap,
    *,
    solver: SolverOptions | None = None,
    uniform: UniformOptions | None = None,
    tolerances: Tolerances | None = None,
) -> Certificate:
    """Tracial path with `rho = 1`: `e S_r(a) e <= 2 lambda e` as an operator inequality.

    The returned certificate also carries the worst pointwise residuals
    (`e_n S_r(a) e_n <= lambda e_n`, `Tr(1 - e_n) <= (2/lambda) Tr a`) over
    `n = 0..horizon`.

    Raises:
        NotTracialError: If `weight` is not the trace.
        NoStableLimitError: If no stable limit is found.
    """
    if not isinstance(weight, Weight) or not weight.tracial:
        raise NotTracialError("Yeadon path requires the tracial weight rho_w = 1")
    if ext.reference is not weight and not (
        isinstance(ext.reference, Weight) and ext.reference.tracial
    ):
        raise NotTracialError("extended map must be built against the tracial weight")
    if horizon < 1:
        raise InvalidInputError(f"horizon must be at least 1, got {horizon}")
    uniform = uniform or UniformOptions()
    tolerances = tolerances or Tolerances()
    _check_inputs(a, lam, weight, ext)
    averages = cesaro_sequence(ext, a, horizon)
    solutions = _solve_range(a, lam, horizon, weight, ext, solver, averages)
    pointwise = [
        _pointwise_from_solution(
            solutions[n], a, lam, n, weight, averages, tolerances,
            kind=CertificateKind.YEADON_TRACIAL,
        )
        for n in range(horizon + 1)
    ]
    projections = [cert.projection for cert in pointwise[1:]]
    certificate, diagnostics = _uniform_from_projections(
        projections, a, lam, horizon, weight, ext, uniform, tolerances, operator_bound=True
    )
    if certificate is None:
        raise NoStableLimitError(
            f"no cluster of {uniform.window} projections within {uniform.cluster_tol:.1e}",
            diagnostics=diagnostics,
        )
    residuals = dict(certificate.residuals)
    residuals["pointwise_order"] = min(
        value
        for cert in pointwise
        for key, value in cert.residuals.items()
        if key.startswith("order_")
    )
    residuals["pointwise_mass"] = min(cert.residuals["mass"] for cert in pointwise)
    residuals["pointwise_kernel_identity"] = min(
        cert.residuals["kernel_identity"] for cert in pointwise
    )
    passed = all(value >= -certificate.tol for value in residuals.values())
    return Certificate(
        projection=certificate.projection,
        lam=lam,
        kind=CertificateKind.YEADON_TRACIAL,
        index=horizon,
        residuals=residuals,
        info=certificate.info,
        tol=certificate.tol,
        passed=passed,
    )


def _averages_for(
    x: LOneElement | BlockMatrix,
    ext: ExtendedMap,
    horizon: int,
) -> list[BlockMatrix]:
    if isinstance(x, LOneElement):
        return [avg.rep for avg in cesaro_sequence(ext, x, horizon)]
    return algebra_cesaro_sequence(ext.base, x, horizon)


def _exceptional_mass_ok(
    e: HermitianOperator,
    x: LOneElement | BlockMatrix,
    lam: float,
    c: float,
    p: float,
    reference: DensityReference,
    tol: float,
) -> bool:
    outside = reference.expectation(BlockMatrix.identity(e.dims) - e)
    bound = (c * lp_norm(x, p, reference) / lam) ** p
    return outside <= bound + tol


def weak_type_predicate(
    e: HermitianOperator,
    x: LOneElement | BlockMatrix,
    lam: float,
    c: float,
    p: float,
    reference: DensityReference,
    ext: ExtendedMap,
    horizon: int,
    *,
    tol: float = 1e-7,
) -> bool:
    """`phi(1 - e) <= (c ||x||_p / lambda)^p` and `e S_n(x) e <= lambda 1` for `n <= horizon`."""
    if not p >= 1 or math.isinf(p):
        raise InvalidInputError(f"weak type needs 1 <= p < inf, got {p!r}")
    scale = tol * max(1.0, lam)
    if not _exceptional_mass_ok(e, x, lam, c, p, reference, scale):
        return False
    identity = BlockMatrix.identity(e.dims)
    for average in _averages_for(x, ext, horizon):
        if min_eigenvalue(symmetrize(identity * lam - _compress(e, average))) < -scale:
            return False
    return True


def pre_weak_type_predicate(
    e: HermitianOperator,
    x: LOneElement | BlockMatrix,
    lam: float,
    c: float,
    p: float,
    reference: DensityReference,
    ext: ExtendedMap,
    horizon: int,
    *,
    tol: float = 1e-7,
) -> bool:
    """`phi(1 - e) <= (c ||x||_p / lambda)^p` and `||e S_n(x) e||_p <= lambda` for `n <= horizon`.

    The compressed average is measured in the same space as `x`: the trace
    norm of the representative for L^1 input, the Kosaki norm otherwise.
    """
    if not p >= 1 or math.isinf(p):
        raise InvalidInputError(f"pre-weak type needs 1 <= p < inf, got {p!r}")
    scale = tol * max(1.0, lam)
    if not _exceptional_mass_ok(e, x, lam, c, p, reference, scale):
        return False
    for average in _averages_for(x, ext, horizon):
        compressed = _compress(e, average)
        element: LOneElement | BlockMatrix = (
            LOneElement(compressed) if isinstance(x, LOneElement) else compressed
        )
        if lp_norm(element, p, reference) > lam + scale:
            return False
    return True


def type_pp_predicate(
    witness: BlockMatrix,
    x: LOneElement | BlockMatrix,
    c: float,
    p: float,
    reference: DensityReference,
    ext: ExtendedMap,
    horizon: int,
    *,
    tol: float = 1e-7,
) -> bool:
    """Type (p,p) on a supplied dominating witness `w`.

    True iff `S_n(x) <= w` for every `n <= horizon` and `||w||_p <= c ||x||_p`.
    """
    scale = tol * max(1.0, op_norm(witness))
    witness_element: LOneElement | BlockMatrix = (
        LOneElement(witness) if isinstance(x, LOneElement) else witness
    )
    if lp_norm(witness_element, p, reference) > c * lp_norm(x, p, reference) + scale:
        return False
    for average in _averages_for(x, ext, horizon):
        if min_eigenvalue(symmetrize(witness - average)) < -scale:
            return False
    return True


def type_infinity_check(
    model: PositiveMapModel,
    samples: int = 16,
    *,
    r_max: int = TYPE_INFINITY_HORIZON,
    seed: int = 0,
    tol: float = 1e-9,
) -> bool:
    """`||S_r(x)|| <= ||x||` and `S_r(x) <= ||x|| 1` for sampled `x >= 0` and `r <= r_max`.

    The unit is always among the samples.
    """
    rng = np.random.default_rng(seed)
    algebra = model.algebra
    inputs: list[HermitianOperator] = [algebra.identity()]
    inputs += [random_element(algebra, rng, positive=True) for _ in range(samples)]
    for x in inputs:
        norm = op_norm(x)
        identity = BlockMatrix.identity(algebra.signature)
        for average in algebra_cesaro_sequence(model, x, r_max):
            if op_norm(average) > norm + tol * max(1.0, norm):
                return False
            if min_eigenvalue(symmetrize(identity * norm - average)) < -tol * max(1.0, norm):
                return False
    return True


@dataclass(frozen=True, slots=True)
class OracleResult:
    """Scalar reference for diagonal instances.

    Attributes:
        averages: `S_r(a)_i` for `r = 0..n`, shape `(n + 1, N)`.
        exceptional: Coordinates with `max_r S_r(a)_i > lambda rho_i`.
        phi_mass: `sum of rho_i` over the exceptional set.
        optimum: `sum_i max(0, max_r (r + 1)(S_r(a)_i - lambda rho_i))`.
        indicator: Diagonal of `e_n`, the complement of the exceptional set.
    """

    averages: NDArray[np.float64]
    exceptional: NDArray[np.bool_]
    phi_mass: float
    optimum: float
    indicator: NDArray[np.float64]


def commutative_oracle(
    a_diag: ArrayLike,
    rho_diag: ArrayLike,
    kernel: ArrayLike | None,
    lam: float,
    n: int,
) -> OracleResult:
    """Brute-force scalar loops for commuting data.

    With `kernel = P` the dynamics is `T(x)_i = sum_j P_ij x_j`, so that
    `T_1(a)_i = rho_i sum_j P_ij a_j / rho_j`; `kernel=None` is the identity.
    """
    a_values = [float(v) for v in np.asarray(a_diag, dtype=np.float64)]
    rho_values = [float(v) for v in np.asarray(rho_diag, dtype=np.float64)]
    size = len(a_values)
    if len(rho_values) != size:
        raise DimensionMismatchError("a and rho must have the same length")
    if any(v < 0 for v in a_values) or any(v <= 0 for v in rho_values):
        raise InvalidInputError("a must be non-negative and rho positive")
    p = np.eye(size) if kernel is None else np.asarray(kernel, dtype=np.float64)

    powers = [a_values]
    for _ in range(n):
        last = powers[-1]
        powers.append(
            [
                rho_values[i] * sum(p[i, j] * last[j] / rho_values[j] for j in range(size))
                for i in range(size)
            ]
        )
    averages = []
    for r in range(n + 1):
        averages.append([sum(powers[k][i] for k in range(r + 1)) / (r + 1) for i in range(size)])

    exceptional = []
    optimum = 0.0
    for i in range(size):
        best = 0.0
        hit = False
        for r in range(n + 1):
            excess = averages[r][i] - lam * rho_values[i]
            best = max(best, (r + 1) * excess)
            hit = hit or excess > 0
        exceptional.append(hit)
        optimum += best
    phi_mass = sum(rho_values[i] for i in range(size) if exceptional[i])
    return OracleResult(
        averages=np.array(averages),
        exceptional=np.array(exceptional),
        phi_mass=phi_mass,
        optimum=optimum,
        indicator=np.array([0.0 if hit else 1.0 for hit in exceptional]),
    )
