from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncergodic.errors import (
    AmbiguousSpectralCutError,
    DimensionMismatchError,
    DomainError,
    InvalidExponentError,
    InvalidInputError,
    NotHermitianError,
)
from ncergodic.matalg import (
    BlockMatrix,
    HermitianOperator,
    Interval,
    apply_spectral,
    eigh,
    functional_calculus,
    hermitian,
    is_projection,
    is_psd,
    min_eigenvalue,
    op_norm,
    positive_part,
    power,
    random_hermitian,
    random_psd,
    random_unitary,
    schatten_norm,
    spectral_projection,
)

signatures = st.lists(st.integers(min_value=1, max_value=4), min_size=1, max_size=3)
seeds = st.integers(min_value=0, max_value=2**32 - 1)
exponents = st.sampled_from([1.0, 1.5, 2.0, 3.0, math.inf])


def _diag(*values: float) -> HermitianOperator:
    return hermitian([np.diag(values)])


def test_from_blocks_rejects_non_square_and_wrong_signature() -> None:
    with pytest.raises(DimensionMismatchError):
        BlockMatrix.from_blocks([np.zeros((2, 3))])
    with pytest.raises(DimensionMismatchError):
        BlockMatrix.from_blocks([np.eye(2)], dims=[3])


def test_from_blocks_rejects_nan() -> None:
    with pytest.raises(InvalidInputError):
        BlockMatrix.from_blocks([[[math.nan]]])


def test_hermitian_rejects_large_defect() -> None:
    with pytest.raises(NotHermitianError):
        hermitian([[[0.0, 1.0], [0.0, 0.0]]])


def test_vector_round_trip_keeps_block_order() -> None:
    matrix = BlockMatrix.from_blocks([[[1.0]], [[2.0, 3.0], [4.0, 5.0]]])
    vector = matrix.vector()
    assert vector.tolist() == [1.0, 2.0, 3.0, 4.0, 5.0]
    rebuilt = BlockMatrix.from_vector(vector, matrix.dims)
    assert rebuilt.distance(matrix) == 0.0


def test_hermitian_arithmetic_stays_hermitian() -> None:
    a = _diag(1.0, 2.0)
    b = _diag(3.0, -1.0)
    assert isinstance(a + b, HermitianOperator)
    assert isinstance(a * 2.0, HermitianOperator)
    assert not isinstance(a * 1j, HermitianOperator)


@settings(max_examples=25, deadline=None)
@given(signature=signatures, seed=seeds)
def test_pairing_matches_trace_of_product(signature: list[int], seed: int) -> None:
    rng = np.random.default_rng(seed)
    a = random_hermitian(signature, rng)
    b = random_hermitian(signature, rng)
    assert abs(a.pairing(b) - (a @ b).trace()) <= 1e-9 * max(1.0, a.max_abs() * b.max_abs())


@settings(max_examples=25, deadline=None)
@given(signature=signatures, seed=seeds)
def test_eigh_reconstructs_operator(signature: list[int], seed: int) -> None:
    a = random_hermitian(signature, np.random.default_rng(seed))
    spectrum = eigh(a)
    assert spectrum.rebuild(spectrum.eigenvalues).distance(a) <= 1e-9 * max(1.0, a.max_abs())


@settings(max_examples=25, deadline=None)
@given(signature=signatures, seed=seeds)
def test_positive_part_is_psd_and_dominates(signature: list[int], seed: int) -> None:
    a = random_hermitian(signature, np.random.default_rng(seed))
    plus = positive_part(a)
    assert is_psd(plus)
    assert is_psd(plus - a)


@settings(max_examples=25, deadline=None)
@given(signature=signatures, seed=seeds)
def test_square_root_squares_back(signature: list[int], seed: int) -> None:
    a = random_psd(signature, np.random.default_rng(seed))
    root = power(a, 0.5)
    assert (root @ root).distance(a) <= 1e-8 * max(1.0, a.max_abs())


@settings(max_examples=25, deadline=None)
@given(signature=signatures, seed=seeds)
def test_schatten_norms_are_ordered(signature: list[int], seed: int) -> None:
    a = random_hermitian(signature, np.random.default_rng(seed))
    one = schatten_norm(a, 1)
    two = schatten_norm(a, 2)
    top = schatten_norm(a, math.inf)
    assert top <= two + 1e-9 <= one + 2e-9
    assert abs(top - op_norm(a)) <= 1e-9 * max(1.0, top)


def _conjugate(p: float) -> float:
    if p == 1.0:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


@settings(max_examples=25, deadline=None)
@given(signature=signatures, seed=seeds, p=exponents)
def test_schatten_norm_triangle_inequality(signature: list[int], seed: int, p: float) -> None:
    rng = np.random.default_rng(seed)
    a = random_hermitian(signature, rng)
    b = random_hermitian(signature, rng)
    total = schatten_norm(a, p) + schatten_norm(b, p)
    assert schatten_norm(a + b, p) <= total + 1e-9 * max(1.0, total)


@settings(max_examples=25, deadline=None)
@given(signature=signatures, seed=seeds, p=exponents)
def test_schatten_norm_is_unitarily_invariant(signature: list[int], seed: int, p: float) -> None:
    rng = np.random.default_rng(seed)
    a = random_hermitian(signature, rng)
    u = random_unitary(signature, rng)
    v = random_unitary(signature, rng)
    norm = schatten_norm(a, p)
    assert schatten_norm(u @ a @ v, p) == pytest.approx(norm, rel=1e-9, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(signature=signatures, seed=seeds, p=exponents)
def test_schatten_norm_holder_inequality(signature: list[int], seed: int, p: float) -> None:
    rng = np.random.default_rng(seed)
    a = random_hermitian(signature, rng)
    b = random_unitary(signature, rng) @ random_psd(signature, rng)
    bound = schatten_norm(a, p) * schatten_norm(b, _conjugate(p))
    assert abs(a.pairing(b)) <= bound + 1e-9 * max(1.0, bound)


@settings(max_examples=25, deadline=None)
@given(signature=signatures, seed=seeds)
def test_positive_and_negative_parts_are_orthogonal(signature: list[int], seed: int) -> None:
    a = random_hermitian(signature, np.random.default_rng(seed))
    plus = positive_part(a)
    minus = positive_part(-a)
    scale = max(1.0, a.max_abs())
    assert (plus - minus).distance(a) <= 1e-9 * scale
    assert (plus @ minus).max_abs() <= 1e-9 * scale * scale
    assert is_psd(minus)


def test_schatten_norm_rejects_small_exponent() -> None:
    with pytest.raises(InvalidExponentError):
        schatten_norm(_diag(1.0), 0.5)


def test_functional_calculus_flags_domain_errors() -> None:
    with pytest.raises(DomainError):
        apply_spectral(_diag(0.0, 1.0), np.log)


def test_functional_calculus_accepts_complex_functions() -> None:
    result = functional_calculus(_diag(0.0, math.pi), lambda w: np.exp(1j * w))
    assert np.allclose(np.diag(result.blocks[0]), [1.0, -1.0])


def test_random_unitary_is_unitary_including_scalar_blocks() -> None:
    u = random_unitary([1, 3], np.random.default_rng(3))
    assert (u @ u.adjoint()).distance(BlockMatrix.identity([1, 3])) <= 1e-10


def test_interval_rejects_empty() -> None:
    with pytest.raises(InvalidInputError):
        Interval(1.0, 1.0)


def test_kernel_cut_keeps_exact_zero_out_of_open_interval() -> None:
    projection = spectral_projection(_diag(0.0, 1e-15, 0.5), Interval(0.0), 1e-8)
    assert np.allclose(np.diag(projection.blocks[0]).real, [0.0, 0.0, 1.0])


def test_ambiguous_eigenvalue_is_classified_outside() -> None:
    projection = spectral_projection(_diag(1e-9, 2.0), Interval(0.0), 1e-8)
    assert np.allclose(np.diag(projection.blocks[0]).real, [0.0, 1.0])


def test_ambiguous_eigenvalue_raises_in_strict_mode() -> None:
    with pytest.raises(AmbiguousSpectralCutError) as excinfo:
        spectral_projection(_diag(1e-9, 2.0), Interval(0.0), 1e-8, strict=True)
    assert excinfo.value.cut == 0.0
    assert excinfo.value.eigenvalue == pytest.approx(1e-9)


def test_upper_endpoint_is_closed() -> None:
    projection = spectral_projection(_diag(0.2, 0.5, 0.9), Interval(0.0, 0.5), 1e-8)
    assert np.allclose(np.diag(projection.blocks[0]).real, [1.0, 1.0, 0.0])


@settings(max_examples=20, deadline=None)
@given(signature=signatures, seed=seeds)
def test_spectral_projection_is_projection(signature: list[int], seed: int) -> None:
    a = random_hermitian(signature, np.random.default_rng(seed))
    projection = spectral_projection(a, Interval(0.0), 1e-8)
    assert is_projection(projection)
    assert min_eigenvalue(projection) >= -1e-12


def test_is_psd_rejects_negative_tolerance() -> None:
    with pytest.raises(InvalidInputError):
        is_psd(_diag(1.0), tol=-1.0)
