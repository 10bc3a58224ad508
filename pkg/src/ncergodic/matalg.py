"""Dense hermitian linear algebra on finite direct sums of full matrix blocks.

Every operator is stored block by block; no routine ever couples two blocks.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from typing import TypeAlias

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray
from scipy.stats import unitary_group

from .errors import (
    AmbiguousSpectralCutError,
    DimensionMismatchError,
    DomainError,
    InvalidExponentError,
    InvalidInputError,
    NonConvergenceError,
    NotHermitianError,
)

ComplexArray: TypeAlias = NDArray[np.complex128]
RealArray: TypeAlias = NDArray[np.float64]
SpectralFunction: TypeAlias = Callable[[RealArray], ArrayLike]

# Hermiticity defect accepted at construction, relative to max(1, max |entry|).
HERMITICITY_TOL = 1e-12
# Default relative slack for positivity tests.
PSD_TOL = 1e-9
# Default relative kernel threshold for spectral cuts.
KERNEL_TOL = 1e-8
# Distance to a cut point below which an eigenvalue is treated as exactly on it.
ROUNDOFF_TOL = 1e-12
# Unitarity defect tolerated on eigenvector matrices.
UNITARITY_TOL = 1e-10


@dataclass(frozen=True, slots=True, eq=False)
class BlockMatrix:
    """Element of a block algebra: one square complex matrix per block.

    Attributes:
        blocks: Square complex matrices, in algebra block order.
    """

    blocks: tuple[ComplexArray, ...]

    @classmethod
    def from_blocks(
        cls,
        blocks: Iterable[ArrayLike],
        dims: Sequence[int] | None = None,
    ) -> BlockMatrix:
        """Validate and copy raw block data.

        Args:
            blocks: Square matrices (anything `numpy.asarray` accepts).
            dims: Expected block sizes; checked when given.

        Raises:
            DimensionMismatchError: If a block is not square or sizes disagree.
            InvalidInputError: If an entry is NaN or infinite.
        """
        arrays = tuple(np.array(block, dtype=np.complex128, copy=True) for block in blocks)
        for index, array in enumerate(arrays):
            if array.ndim != 2 or array.shape[0] != array.shape[1] or array.shape[0] < 1:
                raise DimensionMismatchError(
                    f"block {index} is not a non-empty square matrix: shape={array.shape}"
                )
            if not np.all(np.isfinite(array)):
                raise InvalidInputError(f"block {index} contains NaN or infinite entries")
        if dims is not None:
            actual = tuple(array.shape[0] for array in arrays)
            if actual != tuple(dims):
                raise DimensionMismatchError(
                    f"block sizes {list(actual)} do not match signature {list(dims)}"
                )
        return cls(arrays)

    @classmethod
    def identity(cls, dims: Sequence[int]) -> BlockMatrix:
        return cls(tuple(np.eye(n, dtype=np.complex128) for n in dims))

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> BlockMatrix:
        return cls(tuple(np.zeros((n, n), dtype=np.complex128) for n in dims))

    @classmethod
    def from_vector(cls, vector: ArrayLike, dims: Sequence[int]) -> BlockMatrix:
        """Rebuild blocks from a coefficient vector (row-major per block)."""
        flat = np.asarray(vector, dtype=np.complex128)
        if flat.shape != (sum(n * n for n in dims),):
            raise DimensionMismatchError(
                f"coefficient vector of shape {flat.shape} does not fit signature {list(dims)}"
            )
        blocks: list[ComplexArray] = []
        offset = 0
        for n in dims:
            blocks.append(flat[offset : offset + n * n].reshape(n, n).copy())
            offset += n * n
        return cls(tuple(blocks))

    @property
    def dims(self) -> tuple[int, ...]:
        """Block sizes."""
        return tuple(block.shape[0] for block in self.blocks)

    @property
    def coefficient_dim(self) -> int:
        """Dimension of the coefficient space, the sum of squared block sizes."""
        return sum(n * n for n in self.dims)

    def vector(self) -> ComplexArray:
        """Concatenate the row-major flattened blocks."""
        return np.concatenate([block.reshape(-1) for block in self.blocks])

    def _check_same(self, other: BlockMatrix) -> None:
        if self.dims != other.dims:
            raise DimensionMismatchError(
                f"block sizes {list(self.dims)} and {list(other.dims)} differ"
            )

    def __add__(self, other: BlockMatrix) -> BlockMatrix:
        self._check_same(other)
        return BlockMatrix(tuple(a + b for a, b in zip(self.blocks, other.blocks)))

    def __sub__(self, other: BlockMatrix) -> BlockMatrix:
        self._check_same(other)
        return BlockMatrix(tuple(a - b for a, b in zip(self.blocks, other.blocks)))

    def __neg__(self) -> BlockMatrix:
        return BlockMatrix(tuple(-a for a in self.blocks))

    def __mul__(self, scalar: complex) -> BlockMatrix:
        return BlockMatrix(tuple(scalar * a for a in self.blocks))

    __rmul__ = __mul__

    def __truediv__(self, scalar: complex) -> BlockMatrix:
        return BlockMatrix(tuple(a / scalar for a in self.blocks))

    def __matmul__(self, other: BlockMatrix) -> BlockMatrix:
        self._check_same(other)
        return BlockMatrix(tuple(a @ b for a, b in zip(self.blocks, other.blocks)))

    def adjoint(self) -> BlockMatrix:
        return BlockMatrix(tuple(a.conj().T for a in self.blocks))

    def congruence(self, c: BlockMatrix) -> BlockMatrix:
        """Return `c @ self @ c*`."""
        self._check_same(c)
        return BlockMatrix(tuple(m @ a @ m.conj().T for a, m in zip(self.blocks, c.blocks)))

    def trace(self) -> complex:
        return complex(sum(np.trace(a) for a in self.blocks))

    def pairing(self, other: BlockMatrix) -> complex:
        """Return `Tr(self @ other)` without forming the product."""
        self._check_same(other)
        return complex(sum(np.sum(a * b.T) for a, b in zip(self.blocks, other.blocks)))

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) for a in self.blocks)

    def distance(self, other: BlockMatrix) -> float:
        """Entrywise max distance."""
        return (self - other).max_abs()

    def op_norm(self) -> float:
        """Largest singular value over all blocks."""
        return max(float(scipy.linalg.svdvals(a)[0]) for a in self.blocks)

    def hermiticity_defect(self) -> float:
        return max(float(np.max(np.abs(a - a.conj().T))) for a in self.blocks)


class HermitianOperator(BlockMatrix):
    """Self-adjoint block matrix, symmetrised and validated at construction.

    Sums, differences and real multiples of hermitian operators stay
    hermitian; products fall back to `BlockMatrix`.
    """

    __slots__ = ()

    def __add__(self, other: BlockMatrix) -> BlockMatrix:
        result = BlockMatrix.__add__(self, other)
        return HermitianOperator(result.blocks) if isinstance(other, HermitianOperator) else result

    def __sub__(self, other: BlockMatrix) -> BlockMatrix:
        result = BlockMatrix.__sub__(self, other)
        return HermitianOperator(result.blocks) if isinstance(other, HermitianOperator) else result

    def __neg__(self) -> HermitianOperator:
        return HermitianOperator(tuple(-a for a in self.blocks))

    def __mul__(self, scalar: complex) -> BlockMatrix:
        if isinstance(scalar, (int, float, np.floating, np.integer)):
            return HermitianOperator(tuple(float(scalar) * a for a in self.blocks))
        return BlockMatrix.__mul__(self, scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar: complex) -> BlockMatrix:
        if isinstance(scalar, (int, float, np.floating, np.integer)):
            return HermitianOperator(tuple(a / float(scalar) for a in self.blocks))
        return BlockMatrix.__truediv__(self, scalar)


def hermitian(
    matrix: BlockMatrix | Iterable[ArrayLike],
    *,
    dims: Sequence[int] | None = None,
    tol: float = HERMITICITY_TOL,
) -> HermitianOperator:
    """Symmetrise `A <- (A + A*)/2` after checking the hermiticity defect.

    Args:
        matrix: Block matrix or raw blocks.
        dims: Expected block sizes when raw blocks are given.
        tol: Accepted defect relative to `max(1, max |entry|)`.

    Raises:
        NotHermitianError: If the defect exceeds the tolerance.
    """
    if isinstance(matrix, HermitianOperator):
        return matrix
    block_matrix = (
        matrix if isinstance(matrix, BlockMatrix) else BlockMatrix.from_blocks(matrix, dims)
    )
    if dims is not None and block_matrix.dims != tuple(dims):
        raise DimensionMismatchError(
            f"block sizes {list(block_matrix.dims)} do not match signature {list(dims)}"
        )
    scale = max(1.0, block_matrix.max_abs())
    defect = block_matrix.hermiticity_defect()
    if defect > tol * scale:
        raise NotHermitianError(f"hermiticity defect {defect:.3e} exceeds {tol * scale:.3e}")
    return HermitianOperator(tuple(0.5 * (a + a.conj().T) for a in block_matrix.blocks))


@dataclass(frozen=True, slots=True, eq=False)
class SpectralData:
    """Per-block eigendecomposition `A = U diag(w) U*`.

    Attributes:
        eigenvalues: Ascending real eigenvalues per block.
        eigenvectors: Unitary eigenvector matrices per block (columns).
    """

    eigenvalues: tuple[RealArray, ...]
    eigenvectors: tuple[ComplexArray, ...]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.eigenvalues)

    def minimum(self) -> float:
        return min(float(w[0]) for w in self.eigenvalues)

    def maximum(self) -> float:
        return max(float(w[-1]) for w in self.eigenvalues)

    def spectral_radius(self) -> float:
        return max(abs(self.minimum()), abs(self.maximum()))

    def all_eigenvalues(self) -> RealArray:
        return np.concatenate(self.eigenvalues)

    def rebuild(self, values: Sequence[ArrayLike]) -> BlockMatrix:
        """Return `U diag(values) U*` block by block."""
        blocks = []
        for vectors, diagonal in zip(self.eigenvectors, values):
            blocks.append((vectors * np.asarray(diagonal)) @ vectors.conj().T)
        return BlockMatrix(tuple(blocks))


def eigh(matrix: BlockMatrix) -> SpectralData:
    """Eigendecomposition of a hermitian block matrix.

    Raises:
        NonConvergenceError: If LAPACK fails; no partial data is returned.
    """
    operator = hermitian(matrix)
    values: list[RealArray] = []
    vectors: list[ComplexArray] = []
    for index, block in enumerate(operator.blocks):
        try:
            w, u = scipy.linalg.eigh(block, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError) as exc:
            raise NonConvergenceError(f"eigensolver failed on block {index}") from exc
        values.append(np.asarray(w, dtype=np.float64))
        vectors.append(np.asarray(u, dtype=np.complex128))
    return SpectralData(tuple(values), tuple(vectors))


def op_norm(matrix: BlockMatrix) -> float:
    """Operator norm; uses eigenvalues for hermitian input."""
    if isinstance(matrix, HermitianOperator):
        return eigh(matrix).spectral_radius()
    return matrix.op_norm()


def default_eps_kernel(matrix: BlockMatrix) -> float:
    """Kernel threshold `KERNEL_TOL * max(1, ||A||)`."""
    return KERNEL_TOL * max(1.0, op_norm(matrix))


def functional_calculus(matrix: BlockMatrix, f: Callable[[RealArray], ArrayLike]) -> BlockMatrix:
    """Apply a possibly complex-valued function through the spectral decomposition.

    Raises:
        DomainError: If `f` is not finite at some eigenvalue.
    """
    spectrum = eigh(matrix)
    values = []
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for w in spectrum.eigenvalues:
            fw = np.asarray(f(w), dtype=np.complex128)
            if fw.shape != w.shape:
                fw = np.broadcast_to(fw, w.shape)
            if not np.all(np.isfinite(fw)):
                bad = w[~np.isfinite(fw)]
                raise DomainError(f"spectral function undefined at eigenvalue {float(bad[0])!r}")
            values.append(fw)
    return spectrum.rebuild(values)


def apply_spectral(matrix: BlockMatrix, f: SpectralFunction) -> HermitianOperator:
    """Return `U f(w) U*` for a real-valued function `f`.

    Raises:
        DomainError: If `f` is undefined (non-finite) at an eigenvalue.
    """
    result = functional_calculus(matrix, lambda w: np.real(np.asarray(f(w))))
    return HermitianOperator(tuple(0.5 * (a + a.conj().T) for a in result.blocks))


def power(matrix: BlockMatrix, exponent: float, *, floor: float = 0.0) -> HermitianOperator:
    """Real power of a positive semidefinite operator.

    Eigenvalues at or below `floor` are mapped to zero (pseudo-power on the
    range); with `floor=0` negative round-off is clipped as well.
    """

    def f(w: RealArray) -> RealArray:
        out = np.zeros_like(w)
        mask = w > floor
        out[mask] = w[mask] ** exponent
        return out

    return apply_spectral(matrix, f)


def positive_part(matrix: BlockMatrix) -> HermitianOperator:
    """Return `A_+`, the spectral clip of negative eigenvalues."""
    return apply_spectral(matrix, lambda w: np.maximum(w, 0.0))


@dataclass(frozen=True, slots=True)
class Interval:
    """Real interval with open lower endpoint and closed upper endpoint.

    Attributes:
        lower: Open lower endpoint.
        upper: Closed upper endpoint, possibly `inf`.
    """

    lower: float
    upper: float = math.inf

    def __post_init__(self) -> None:
        if not self.lower < self.upper:
            raise InvalidInputError(f"empty interval ({self.lower}, {self.upper}]")

    def classify(
        self,
        values: RealArray,
        *,
        eps: float,
        roundoff: float,
        strict: bool = False,
    ) -> NDArray[np.bool_]:
        """Return membership flags with the conservative cut rule.

        Values within `roundoff` of an endpoint follow exact membership
        (lower open, upper closed). Values farther than `roundoff` but within
        `eps` of a finite endpoint are ambiguous and are classified outside;
        in strict mode they raise instead.

        Raises:
            AmbiguousSpectralCutError: On an ambiguous value in strict mode.
        """
        inside = (values > self.lower + roundoff) & (values <= self.upper + roundoff)
        for cut in (self.lower, self.upper):
            if not math.isfinite(cut):
                continue
            distance = np.abs(values - cut)
            ambiguous = (distance > roundoff) & (distance <= eps)
            if np.any(ambiguous):
                if strict:
                    offending = float(values[ambiguous][0])
                    raise AmbiguousSpectralCutError(
                        f"eigenvalue {offending!r} lies within {eps:.1e} of cut {cut!r}",
                        cut=cut,
                        eigenvalue=offending,
                    )
                inside = inside & ~ambiguous
        return inside


def spectral_mask(
    spectrum: SpectralData,
    interval: Interval,
    eps_kernel: float,
    *,
    strict: bool = False,
) -> tuple[NDArray[np.bool_], ...]:
    """Classify every eigenvalue of every block against `interval`."""
    if eps_kernel <= 0:
        raise InvalidInputError("eps_kernel must be positive")
    roundoff = ROUNDOFF_TOL * max(1.0, spectrum.spectral_radius())
    roundoff = min(roundoff, 0.5 * eps_kernel)
    return tuple(
        interval.classify(w, eps=eps_kernel, roundoff=roundoff, strict=strict)
        for w in spectrum.eigenvalues
    )


def spectral_projection(
    matrix: BlockMatrix,
    interval: Interval,
    eps_kernel: float,
    *,
    strict: bool = False,
) -> HermitianOperator:
    """Orthogonal projection onto the eigenvectors with eigenvalue in `interval`.

    Raises:
        AmbiguousSpectralCutError: In strict mode, on an eigenvalue inside the
            ambiguity band of a cut point.
    """
    spectrum = eigh(matrix)
    masks = spectral_mask(spectrum, interval, eps_kernel, strict=strict)
    projection = spectrum.rebuild([mask.astype(np.float64) for mask in masks])
    return hermitian(projection)


def min_eigenvalue(matrix: BlockMatrix) -> float:
    return eigh(matrix).minimum()


def max_eigenvalue(matrix: BlockMatrix) -> float:
    return eigh(matrix).maximum()


def is_psd(matrix: BlockMatrix, tol: float = PSD_TOL) -> bool:
    """True iff the smallest eigenvalue is at least `-tol * max(1, ||A||)`."""
    if tol < 0:
        raise InvalidInputError("tol must be non-negative")
    spectrum = eigh(matrix)
    return spectrum.minimum() >= -tol * max(1.0, spectrum.spectral_radius())


def is_projection(matrix: BlockMatrix, tol: float = 1e-9) -> bool:
    """True iff `P^2 = P = P*` entrywise within `tol`."""
    return matrix.hermiticity_defect() <= tol and (matrix @ matrix).distance(matrix) <= tol


def schatten_norm(matrix: BlockMatrix, p: float) -> float:
    """Schatten p-norm over the whole direct sum; `p = inf` gives the operator norm.

    Raises:
        InvalidExponentError: If `p < 1`.
    """
    if not p >= 1:
        raise InvalidExponentError(f"Schatten exponent must satisfy p >= 1, got {p!r}")
    singular = np.concatenate([scipy.linalg.svdvals(a) for a in matrix.blocks])
    if math.isinf(p):
        return float(np.max(singular))
    if p == 1:
        return float(np.sum(singular))
    top = float(np.max(singular))
    if top == 0.0:
        return 0.0
    return top * float(np.sum((singular / top) ** p) ** (1.0 / p))


def random_matrix(dims: Sequence[int], rng: np.random.Generator) -> BlockMatrix:
    """Complex Ginibre blocks."""
    return BlockMatrix(
        tuple(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) for n in dims)
    )


def random_hermitian(dims: Sequence[int], rng: np.random.Generator) -> HermitianOperator:
    g = random_matrix(dims, rng)
    return hermitian((g + g.adjoint()) * 0.5)


def random_psd(
    dims: Sequence[int],
    rng: np.random.Generator,
    *,
    rank: int | None = None,
) -> HermitianOperator:
    """Gram matrix `B B*`; with `rank` set, each block has at most that rank."""
    blocks = []
    for n in dims:
        k = n if rank is None else min(rank, n)
        b = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
        blocks.append(b @ b.conj().T)
    return hermitian(BlockMatrix(tuple(blocks)))


def random_unitary(dims: Sequence[int], rng: np.random.Generator) -> BlockMatrix:
    return BlockMatrix(
        tuple(
            np.atleast_2d(unitary_group.rvs(n, random_state=rng)).astype(np.complex128)
            if n > 1
            else np.exp(2j * np.pi * rng.random()) * np.ones((1, 1), dtype=np.complex128)
            for n in dims
        )
    )


def symmetrize(matrix: BlockMatrix) -> HermitianOperator:
    """Return `(A + A*)/2` without a defect check (for round-off cleanup)."""
    return HermitianOperator(tuple(0.5 * (a + a.conj().T) for a in matrix.blocks))
