"""Finite-dimensional von Neumann algebras with a faithful density.

The commutant weight is fixed to `psi(.) = phi(J . J)`, so the spatial
derivative of a state is represented by its density `rho` and the pairing
`int . dpsi` on L^1 representatives is the matrix trace.
"""

from __future__ import annotations

import math
import os
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import TypeAlias

import numpy as np
from numpy.typing import ArrayLike

from .errors import (
    DimensionMismatchError,
    IllConditionedError,
    InvalidExponentError,
    InvalidInputError,
    NotFaithfulError,
    NotNormalizedError,
)
from .matalg import (
    BlockMatrix,
    HermitianOperator,
    SpectralData,
    eigh,
    hermitian,
    is_psd,
    random_hermitian,
    random_psd,
    schatten_norm,
)

MAX_DIMENSION_ENV = "NCERGODIC_MAX_DIMENSION"
DEFAULT_MAX_DIMENSION = 1024
NORMALIZATION_TOL = 1e-10
MAX_CONDITION_NUMBER = 1e12
TRACIAL_TOL = 1e-12


def max_dimension() -> int:
    """Coefficient-dimension cap, read from the environment on every call."""
    raw = os.getenv(MAX_DIMENSION_ENV)
    if not raw:
        return DEFAULT_MAX_DIMENSION
    try:
        value = int(raw)
    except ValueError as exc:
        raise InvalidInputError(f"{MAX_DIMENSION_ENV} must be an integer, got {raw!r}") from exc
    if value < 1:
        raise InvalidInputError(f"{MAX_DIMENSION_ENV} must be positive, got {value}")
    return value


@dataclass(frozen=True, slots=True)
class Algebra:
    """Direct sum of full matrix blocks `M_{n_1} + ... + M_{n_k}`.

    Attributes:
        signature: Block sizes, each at least one.
    """

    signature: tuple[int, ...]

    def __post_init__(self) -> None:
        signature = tuple(int(n) for n in self.signature)
        if not signature:
            raise InvalidInputError("algebra signature must contain at least one block")
        if any(n < 1 for n in signature):
            raise InvalidInputError(f"block sizes must be positive: {list(signature)}")
        limit = max_dimension()
        coefficient_dim = sum(n * n for n in signature)
        if coefficient_dim > limit:
            raise InvalidInputError(
                f"coefficient dimension {coefficient_dim} exceeds the maximum {limit}"
            )
        object.__setattr__(self, "signature", signature)

    @classmethod
    def of(cls, *sizes: int) -> Algebra:
        return cls(tuple(sizes))

    @property
    def coefficient_dim(self) -> int:
        return sum(n * n for n in self.signature)

    @property
    def total_dim(self) -> int:
        """Dimension of the Hilbert space the algebra acts on."""
        return sum(self.signature)

    def identity(self) -> HermitianOperator:
        return HermitianOperator(BlockMatrix.identity(self.signature).blocks)

    def zeros(self) -> HermitianOperator:
        return HermitianOperator(BlockMatrix.zeros(self.signature).blocks)

    def element(self, blocks: Iterable[ArrayLike]) -> BlockMatrix:
        return BlockMatrix.from_blocks(blocks, self.signature)

    def hermitian(self, blocks: Iterable[ArrayLike] | BlockMatrix) -> HermitianOperator:
        return hermitian(blocks, dims=self.signature)

    def check(self, matrix: BlockMatrix) -> None:
        """Raise if `matrix` does not live in this algebra."""
        if matrix.dims != self.signature:
            raise DimensionMismatchError(
                f"element with block sizes {list(matrix.dims)} is not in algebra "
                f"{list(self.signature)}"
            )


@dataclass(frozen=True, slots=True, eq=False)
class _Density:
    algebra: Algebra
    rho: HermitianOperator
    spectrum: SpectralData = field(repr=False)
    _powers: dict[float, HermitianOperator] = field(
        default_factory=dict, init=False, repr=False
    )

    def power(self, exponent: float) -> HermitianOperator:
        """Real power `rho^s`, memoised per exponent."""
        cached = self._powers.get(exponent)
        if cached is None:
            cached = hermitian(
                self.spectrum.rebuild([w**exponent for w in self.spectrum.eigenvalues])
            )
            self._powers[exponent] = cached
        return cached

    def unitary_power(self, t: float) -> BlockMatrix:
        """`rho^{it}`."""
        return self.spectrum.rebuild(
            [np.exp(1j * t * np.log(w)) for w in self.spectrum.eigenvalues]
        )

    @property
    def condition_number(self) -> float:
        return self.spectrum.maximum() / self.spectrum.minimum()

    def expectation(self, x: BlockMatrix) -> float:
        """`Tr(rho x)`, real part."""
        return float(self.rho.pairing(x).real)

    def mass(self) -> float:
        return float(self.rho.trace().real)


class State(_Density):
    """Faithful normal state `phi(x) = Tr(rho x)`; build with `make_state`."""

    __slots__ = ()

    @property
    def tracial(self) -> bool:
        """True when `rho` is a multiple of the identity."""
        values = self.spectrum.all_eigenvalues()
        return float(values.max() - values.min()) <= TRACIAL_TOL


@dataclass(frozen=True, slots=True, eq=False)
class Weight(_Density):
    """Faithful unnormalised weight `Tr(rho_w x)`.

    Attributes:
        tracial: True when `rho_w` is the identity (the trace itself).
    """

    tracial: bool = False


DensityReference: TypeAlias = State | Weight


def _validated_density(
    algebra: Algebra,
    rho: BlockMatrix | Iterable[ArrayLike],
) -> tuple[HermitianOperator, SpectralData]:
    operator = hermitian(rho, dims=algebra.signature)
    algebra.check(operator)
    spectrum = eigh(operator)
    smallest = spectrum.minimum()
    if smallest <= 0:
        raise NotFaithfulError(f"density has non-positive eigenvalue {smallest!r}")
    condition = spectrum.maximum() / smallest
    if condition > MAX_CONDITION_NUMBER:
        raise IllConditionedError(
            f"density condition number {condition:.3e} exceeds {MAX_CONDITION_NUMBER:.0e}"
        )
    return operator, spectrum


def make_state(algebra: Algebra, rho: BlockMatrix | Iterable[ArrayLike]) -> State:
    """Validate a block density and wrap it as a state.

    Args:
        algebra: Owning algebra.
        rho: Block density, positive definite with unit trace.

    Returns:
        Validated state.

    Raises:
        NotFaithfulError: If an eigenvalue is not strictly positive.
        NotNormalizedError: If the trace deviates from one by more than 1e-10.
        IllConditionedError: If the condition number exceeds 1e12.
    """
    operator, spectrum = _validated_density(algebra, rho)
    total = float(operator.trace().real)
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NotNormalizedError(f"density trace is {total!r}, expected 1")
    return State(algebra, operator, spectrum)


def make_tracial_state(algebra: Algebra) -> State:
    """Normalised trace `rho = 1/N`."""
    return make_state(algebra, algebra.identity() / algebra.total_dim)


def make_weight(algebra: Algebra, rho_w: BlockMatrix | Iterable[ArrayLike]) -> Weight:
    """Validate an unnormalised faithful density."""
    operator, spectrum = _validated_density(algebra, rho_w)
    tracial = operator.distance(algebra.identity()) <= TRACIAL_TOL
    return Weight(algebra, operator, spectrum, tracial=tracial)


def make_tracial_weight(algebra: Algebra) -> Weight:
    """The trace itself, `rho_w = 1`."""
    identity = algebra.identity()
    return Weight(algebra, identity, eigh(identity), tracial=True)


def random_state(algebra: Algebra, rng: np.random.Generator, *, floor: float = 0.1) -> State:
    """Random faithful density: a Gram matrix lifted by `floor` and normalised."""
    gram = random_psd(algebra.signature, rng)
    lifted = gram + algebra.identity() * floor
    return make_state(algebra, lifted / lifted.trace().real)


@dataclass(frozen=True, slots=True, eq=False)
class LOneElement:
    """Element of `L^1(M; psi)` given by its trace-class representative.

    Attributes:
        rep: Representative `a`; `int a dpsi` is `Tr(a)`.
    """

    rep: BlockMatrix

    @property
    def dims(self) -> tuple[int, ...]:
        return self.rep.dims

    def integral(self) -> float:
        """`int a dpsi`, real part of the trace."""
        return float(self.rep.trace().real)

    def pair(self, x: BlockMatrix) -> complex:
        """Duality `int a x dpsi = Tr(a x)`."""
        return self.rep.pairing(x)

    def is_positive(self, tol: float = 1e-9) -> bool:
        return isinstance(self.rep, HermitianOperator) and is_psd(self.rep, tol)

    def trace_norm(self) -> float:
        return schatten_norm(self.rep, 1)

    def __add__(self, other: LOneElement) -> LOneElement:
        return LOneElement(self.rep + other.rep)

    def __sub__(self, other: LOneElement) -> LOneElement:
        return LOneElement(self.rep - other.rep)

    def __mul__(self, scalar: float) -> LOneElement:
        return LOneElement(self.rep * scalar)

    __rmul__ = __mul__


def positive_l1(
    algebra: Algebra,
    blocks: Iterable[ArrayLike] | BlockMatrix,
    *,
    tol: float = 1e-9,
) -> LOneElement:
    """Wrap a positive semidefinite representative.

    Raises:
        InvalidInputError: If the representative is not positive within `tol`.
    """
    element = LOneElement(algebra.hermitian(blocks))
    if not element.is_positive(tol):
        raise InvalidInputError("L^1 input must be positive semidefinite")
    return element


def spatial_derivative(reference: DensityReference) -> LOneElement:
    """L^1 representative of `d = dphi/dpsi`: the density itself."""
    return LOneElement(reference.rho)


def _sandwich(x: BlockMatrix, c: HermitianOperator) -> BlockMatrix:
    result = x.congruence(c)
    if isinstance(x, HermitianOperator):
        return hermitian(result)
    return result


def embed_l1(x: BlockMatrix, reference: DensityReference) -> LOneElement:
    """Symmetric embedding `x -> rho^{1/2} x rho^{1/2}`."""
    reference.algebra.check(x)
    return LOneElement(_sandwich(x, reference.power(0.5)))


def pull_back(a: LOneElement | BlockMatrix, reference: DensityReference) -> BlockMatrix:
    """Inverse of `embed_l1`: `a -> rho^{-1/2} a rho^{-1/2}`."""
    rep = a.rep if isinstance(a, LOneElement) else a
    reference.algebra.check(rep)
    return _sandwich(rep, reference.power(-0.5))


def _check_exponent(p: float) -> None:
    if not (p >= 1 or math.isinf(p)) or math.isnan(p):
        raise InvalidExponentError(f"L^p exponent must satisfy 1 <= p <= inf, got {p!r}")


def embed_lp(x: BlockMatrix, p: float, reference: DensityReference) -> BlockMatrix:
    """L^p embedding `x -> rho^{1/(2p)} x rho^{1/(2p)}`; identity at `p = inf`."""
    _check_exponent(p)
    reference.algebra.check(x)
    if math.isinf(p):
        return x
    return _sandwich(x, reference.power(1.0 / (2.0 * p)))


def kosaki_norm(x: BlockMatrix, p: float, reference: DensityReference) -> float:
    """Kosaki L^p norm `||rho^{1/(2p)} x rho^{1/(2p)}||_p` of an algebra element.

    Raises:
        InvalidExponentError: If `p < 1`.
    """
    return schatten_norm(embed_lp(x, p, reference), p)


def lp_norm(
    element: LOneElement | BlockMatrix,
    p: float,
    reference: DensityReference,
) -> float:
    """L^p norm of an algebra element or of an L^1 element through its pull-back."""
    if isinstance(element, LOneElement):
        _check_exponent(p)
        if p == 1:
            return element.trace_norm()
        return kosaki_norm(pull_back(element, reference), p, reference)
    return kosaki_norm(element, p, reference)


def modular_flow(x: BlockMatrix, t: float, state: DensityReference) -> BlockMatrix:
    """Modular automorphism `sigma_t(x) = rho^{it} x rho^{-it}`."""
    state.algebra.check(x)
    if t == 0:
        return x
    u = state.unitary_power(t)
    result = u @ x @ u.adjoint()
    if isinstance(x, HermitianOperator):
        return hermitian(result)
    return result


def random_element(
    algebra: Algebra,
    rng: np.random.Generator,
    *,
    positive: bool = False,
    rank: int | None = None,
) -> HermitianOperator:
    """Seeded random hermitian (or positive) algebra element."""
    if positive:
        return random_psd(algebra.signature, rng, rank=rank)
    return random_hermitian(algebra.signature, rng)
