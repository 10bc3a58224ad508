from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncergodic.dynamics import (
    KrausTerm,
    Pedigree,
    adjoint_map,
    algebra_cesaro,
    cesaro,
    cesaro_sequence,
    check_conditions,
    check_lp_contraction,
    example_cond_expectation,
    example_tensor_markov,
    explicit_map,
    extend_l1,
    identity_map,
    is_modular_invariant,
    kraus_map,
    modular_commutation_defect,
    random_certified_map,
    stationary_distribution,
)
from ncergodic.errors import (
    ConditionsNotMetError,
    DimensionMismatchError,
    InvalidInputError,
    NotStochasticError,
    NotSubalgebraError,
    NotSubInvariantError,
)
from ncergodic.matalg import BlockMatrix, is_psd, symmetrize
from ncergodic.vna import (
    Algebra,
    LOneElement,
    make_state,
    make_tracial_state,
    random_element,
    random_state,
)


def _certified(seed: int, *sizes: int):
    algebra = Algebra.of(*sizes)
    rng = np.random.default_rng(seed)
    state = random_state(algebra, rng)
    model = random_certified_map(seed, algebra, state)
    return algebra, state, model, extend_l1(model, state), rng


def test_identity_map_passes_all_conditions_exactly() -> None:
    algebra = Algebra.of(2, 1)
    state = make_tracial_state(algebra)
    report = check_conditions(identity_map(algebra), state)
    assert report.passed
    assert report.pedigree is Pedigree.CONSTRUCTED_POSITIVE
    assert report.positivity.method == "constructed"
    assert report.contraction.margin == pytest.approx(0.0, abs=1e-12)


def test_kraus_map_cross_block_term_moves_mass() -> None:
    algebra = Algebra.of(1, 2)
    v = np.array([[1.0, 0.0]])
    model = kraus_map(algebra, [KrausTerm(source=0, target=1, operator=v)])
    image = model(BlockMatrix.from_blocks([[[3.0]], np.zeros((2, 2))]))
    assert np.allclose(image.blocks[0], 0.0)
    assert np.allclose(image.blocks[1], np.diag([3.0, 0.0]))


def test_kraus_map_validates_terms() -> None:
    algebra = Algebra.of(2)
    with pytest.raises(DimensionMismatchError):
        kraus_map(algebra, [KrausTerm(0, 1, np.eye(2))])
    with pytest.raises(DimensionMismatchError):
        kraus_map(algebra, [KrausTerm(0, 0, np.eye(3))])
    with pytest.raises(InvalidInputError):
        kraus_map(algebra, [KrausTerm(0, 0, np.eye(2), weight=-1.0)])


def test_explicit_map_rejects_non_hermiticity_preserving_matrix() -> None:
    algebra = Algebra.of(2)
    matrix = np.zeros((4, 4), dtype=complex)
    matrix[1, 0] = 1.0
    with pytest.raises(InvalidInputError):
        explicit_map(algebra, matrix)
    with pytest.raises(DimensionMismatchError):
        explicit_map(algebra, np.eye(3))


def test_explicit_transpose_passes_sampled_positivity() -> None:
    algebra = Algebra.of(2)
    transpose = np.zeros((4, 4))
    for i in range(2):
        for j in range(2):
            transpose[j * 2 + i, i * 2 + j] = 1.0
    model = explicit_map(algebra, transpose)
    report = check_conditions(model, make_tracial_state(algebra), seed=1)
    assert report.positivity.method == "sampled"
    assert report.passed
    assert report.pedigree is Pedigree.SAMPLED_POSITIVE


def test_contraction_failure_blocks_extension() -> None:
    algebra = Algebra.of(2)
    state = make_tracial_state(algebra)
    model = kraus_map(algebra, [KrausTerm(0, 0, np.eye(2), weight=2.0)])
    with pytest.raises(ConditionsNotMetError) as excinfo:
        extend_l1(model, state)
    assert excinfo.value.report.failures() == ["contraction", "trace_decrease"]


def test_random_certified_map_is_deterministic_and_certified() -> None:
    algebra = Algebra.of(2)
    state = make_state(algebra, [np.diag([0.7, 0.3])])
    first = random_certified_map(17, algebra, state)
    second = random_certified_map(17, algebra, state)
    assert np.array_equal(first.action.matrix, second.action.matrix)
    report = check_conditions(first, state)
    assert report.passed
    assert report.contraction.margin >= 0.0
    assert report.trace_decrease.margin >= 0.0


@pytest.mark.parametrize("seed", range(10))
def test_extension_is_positive_trace_decreasing_and_dual(seed: int) -> None:
    algebra, state, _, ext, rng = _certified(seed, 2, 3)
    a = LOneElement(random_element(algebra, rng, positive=True))
    image = ext.t1(a)
    assert is_psd(symmetrize(image.rep))
    assert image.integral() <= a.integral() + 1e-9
    x = random_element(algebra, rng)
    assert abs(image.pair(x) - a.pair(ext.adjoint(x))) <= 1e-9 * max(1.0, a.integral())
    assert is_psd(symmetrize(algebra.identity() - ext.adjoint(algebra.identity())))


@pytest.mark.parametrize("seed", range(4))
def test_adjoint_map_is_positive_and_subunital(seed: int) -> None:
    algebra, _, _, ext, rng = _certified(seed, 2, 2)
    adjoint = adjoint_map(ext)
    x = random_element(algebra, rng, positive=True)
    assert is_psd(symmetrize(adjoint(x)))
    a = LOneElement(random_element(algebra, rng, positive=True))
    assert abs(ext.t1(a).pair(x) - a.pair(adjoint(x))) <= 1e-9 * max(1.0, a.integral())
    assert is_psd(symmetrize(algebra.identity() - adjoint(algebra.identity())))


def test_adjoint_of_identity_map_is_identity() -> None:
    algebra = Algebra.of(2)
    state = make_state(algebra, [np.diag([0.7, 0.3])])
    adjoint = adjoint_map(extend_l1(identity_map(algebra), state))
    x = algebra.hermitian([np.array([[1.0, 0.4], [0.4, 0.2]])])
    assert np.allclose(adjoint(x).blocks[0], x.blocks[0], atol=1e-10)


def test_cesaro_telescoping_identity() -> None:
    algebra, _, _, ext, rng = _certified(3, 2)
    a = LOneElement(random_element(algebra, rng, positive=True))
    averages = cesaro_sequence(ext, a, 20)
    for r in range(20):
        lhs = averages[r + 1].rep * float(r + 2) - ext.t1(averages[r]).rep * float(r + 1)
        assert lhs.distance(a.rep) <= 1e-9 * max(1.0, a.rep.max_abs())
    assert cesaro(ext, a, 0).rep is a.rep


def test_cesaro_rejects_negative_index() -> None:
    algebra, _, _, ext, rng = _certified(1, 2)
    with pytest.raises(InvalidInputError):
        cesaro(ext, LOneElement(algebra.identity()), -1)


def test_algebra_averages_of_identity_map_are_constant() -> None:
    algebra = Algebra.of(2)
    x = random_element(algebra, np.random.default_rng(0))
    assert algebra_cesaro(identity_map(algebra), x, 5).distance(x) <= 1e-12


def test_lp_contraction_holds_for_certified_maps() -> None:
    _, _, _, ext, _ = _certified(8, 2, 2)
    for p in (1.0, 2.0, 4.0):
        assert check_lp_contraction(ext, p) <= 1e-9


def test_markov_tensor_example_on_two_points() -> None:
    kernel = np.array([[0.9, 0.1], [0.2, 0.8]])
    inner = Algebra.of(2)
    inner_state = make_state(inner, [np.diag([0.6, 0.4])])
    algebra, state, model = example_tensor_markov(kernel, inner, inner_state)
    assert algebra.signature == (2, 2)
    mu = stationary_distribution(kernel)
    assert np.allclose(mu, [2 / 3, 1 / 3])
    assert np.allclose(state.rho.blocks[0], mu[0] * np.diag([0.6, 0.4]))
    assert check_conditions(model, state).passed
    x = BlockMatrix.from_blocks([np.eye(2), np.zeros((2, 2))])
    image = model(x)
    assert np.allclose(image.blocks[0], 0.9 * np.eye(2))
    assert np.allclose(image.blocks[1], 0.2 * np.eye(2))


def test_markov_tensor_identity_kernel_gives_identity_map() -> None:
    inner = Algebra.of(2)
    inner_state = make_tracial_state(inner)
    algebra, state, model = example_tensor_markov(np.eye(2), inner, inner_state)
    assert np.allclose(stationary_distribution(np.eye(3)), [1 / 3, 1 / 3, 1 / 3])
    assert np.allclose(state.rho.blocks[0], np.eye(2) / 4)
    assert check_conditions(model, state).passed
    x = random_element(algebra, np.random.default_rng(2))
    assert model(x).distance(x) <= 1e-12


def test_markov_tensor_swap_kernel_has_uniform_measure() -> None:
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    inner = Algebra.of(1)
    _, state, model = example_tensor_markov(swap, inner, make_tracial_state(inner))
    assert np.allclose(stationary_distribution(swap), [0.5, 0.5])
    assert np.allclose([block[0, 0].real for block in state.rho.blocks], [0.5, 0.5])
    image = model(BlockMatrix.from_blocks([np.eye(1), np.zeros((1, 1))]))
    assert np.allclose(image.blocks[1], np.eye(1))


def test_stationary_distribution_rejects_transient_states() -> None:
    kernel = np.array([[0.5, 0.5], [0.0, 1.0]])
    with pytest.raises(NotSubInvariantError, match="transient"):
        stationary_distribution(kernel)
    with pytest.raises(NotSubInvariantError):
        example_tensor_markov(kernel, Algebra.of(1), make_tracial_state(Algebra.of(1)))


def test_markov_tensor_example_validates_kernel_and_measure() -> None:
    inner = Algebra.of(1)
    inner_state = make_state(inner, [[[1.0]]])
    with pytest.raises(NotStochasticError):
        example_tensor_markov([[0.5, 0.6], [0.5, 0.5]], inner, inner_state)
    with pytest.raises(NotSubInvariantError):
        example_tensor_markov([[0.0, 1.0], [0.0, 1.0]], inner, inner_state, mu=[0.5, 0.5])


def test_cond_expectation_on_tracial_diagonal_is_pinching() -> None:
    algebra = Algebra.of(2)
    state = make_tracial_state(algebra)
    model = example_cond_expectation(algebra, state, [[[0], [1]]])
    x = BlockMatrix.from_blocks([[[1.0, 2.0], [2.0, 3.0]]])
    image = model(x)
    assert np.allclose(image.blocks[0], np.diag([1.0, 3.0]))
    assert model(image).distance(image) <= 1e-12
    assert check_conditions(model, state).passed


def test_cond_expectation_on_full_algebra_is_identity() -> None:
    algebra = Algebra.of(2)
    state = make_state(algebra, [np.diag([0.8, 0.2])])
    model = example_cond_expectation(algebra, state, [None])
    x = random_element(algebra, np.random.default_rng(9))
    assert model(x).distance(x) <= 1e-12


def test_diagonal_subalgebra_is_modular_invariant_for_diagonal_state() -> None:
    algebra = Algebra.of(2)
    state = make_state(algebra, [np.diag([0.8, 0.2])])
    assert is_modular_invariant(state, [[[0], [1]]])
    model = example_cond_expectation(algebra, state, [[[0], [1]]])
    assert check_conditions(model, state).passed
    assert modular_commutation_defect(model, state, (0.3, 1.1)) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1))
def test_diagonal_expectation_is_idempotent_and_state_preserving(seed: int) -> None:
    algebra = Algebra.of(2)
    state = make_state(algebra, [np.diag([0.8, 0.2])])
    model = example_cond_expectation(algebra, state, [[[0], [1]]])
    x = random_element(algebra, np.random.default_rng(seed))
    image = model(x)
    assert model(image).distance(image) <= 1e-10 * max(1.0, x.max_abs())
    assert state.expectation(image) == pytest.approx(state.expectation(x), abs=1e-10)


def test_generalised_expectation_for_non_invariant_subalgebra() -> None:
    algebra = Algebra.of(2)
    rng = np.random.default_rng(21)
    state = random_state(algebra, rng)
    partition = [[[0], [1]]]
    assert not is_modular_invariant(state, partition)
    model = example_cond_expectation(algebra, state, partition)
    report = check_conditions(model, state)
    assert report.passed
    assert model.unit_image().distance(algebra.identity()) <= 1e-10
    pushed = symmetrize(model.trace_adjoint()(state.rho))
    assert pushed.distance(state.rho) <= 1e-10


def test_cond_expectation_rejects_bad_partitions() -> None:
    algebra = Algebra.of(3)
    state = make_tracial_state(algebra)
    with pytest.raises(NotSubalgebraError):
        example_cond_expectation(algebra, state, [[[0], [1]]])
    with pytest.raises(NotSubalgebraError):
        example_cond_expectation(algebra, state, [[[0, 1], [1, 2]]])
