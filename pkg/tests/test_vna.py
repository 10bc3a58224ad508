from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncergodic.errors import (
    DimensionMismatchError,
    IllConditionedError,
    InvalidExponentError,
    InvalidInputError,
    NotFaithfulError,
    NotNormalizedError,
)
from ncergodic.matalg import BlockMatrix, hermitian, op_norm, schatten_norm
from ncergodic.vna import (
    MAX_DIMENSION_ENV,
    Algebra,
    LOneElement,
    embed_l1,
    embed_lp,
    kosaki_norm,
    lp_norm,
    make_state,
    make_tracial_state,
    make_tracial_weight,
    make_weight,
    modular_flow,
    positive_l1,
    pull_back,
    random_element,
    random_state,
    spatial_derivative,
)

signatures = st.lists(st.integers(min_value=1, max_value=3), min_size=1, max_size=3)
seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _state_m2() -> tuple[Algebra, object]:
    algebra = Algebra.of(2)
    return algebra, make_state(algebra, [np.diag([0.7, 0.3])])


def test_algebra_rejects_empty_and_non_positive_signatures() -> None:
    with pytest.raises(InvalidInputError):
        Algebra(())
    with pytest.raises(InvalidInputError):
        Algebra.of(2, 0)


def test_algebra_dimension_cap_reads_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv(MAX_DIMENSION_ENV, "8")
    assert Algebra.of(2, 2).coefficient_dim == 8
    with pytest.raises(InvalidInputError):
        Algebra.of(3)
    monkeypatch.setenv(MAX_DIMENSION_ENV, "many")
    with pytest.raises(InvalidInputError):
        Algebra.of(1)


def test_make_state_validates_density() -> None:
    algebra = Algebra.of(2)
    with pytest.raises(NotFaithfulError):
        make_state(algebra, [np.diag([1.0, 0.0])])
    with pytest.raises(NotNormalizedError):
        make_state(algebra, [np.diag([0.7, 0.7])])
    with pytest.raises(IllConditionedError):
        make_state(algebra, [np.diag([1.0 - 1e-14, 1e-14])])
    with pytest.raises(DimensionMismatchError):
        make_state(algebra, [np.eye(3) / 3])


def test_tracial_constructors() -> None:
    algebra = Algebra.of(2, 2)
    state = make_tracial_state(algebra)
    assert state.tracial
    assert state.rho.distance(algebra.identity() / 4) <= 1e-15
    weight = make_tracial_weight(algebra)
    assert weight.tracial
    assert weight.mass() == pytest.approx(4.0)
    assert make_weight(algebra, [np.eye(2), np.eye(2)]).tracial
    assert not make_weight(algebra, [np.eye(2), 2 * np.eye(2)]).tracial


def test_embedding_of_unit_is_the_spatial_derivative() -> None:
    _, state = _state_m2()
    unit = embed_l1(state.algebra.identity(), state)
    assert unit.rep.distance(spatial_derivative(state).rep) <= 1e-14
    assert unit.integral() == pytest.approx(1.0)


def test_pull_back_inverts_embedding() -> None:
    algebra = Algebra.of(2, 3)
    rng = np.random.default_rng(11)
    state = random_state(algebra, rng)
    x = random_element(algebra, rng)
    assert pull_back(embed_l1(x, state), state).distance(x) <= 1e-10


def test_pairing_is_the_state_on_embedded_elements() -> None:
    algebra = Algebra.of(3)
    rng = np.random.default_rng(5)
    state = random_state(algebra, rng)
    x = random_element(algebra, rng)
    assert embed_l1(x, state).integral() == pytest.approx(state.expectation(x))


def test_positive_l1_rejects_indefinite_representative() -> None:
    with pytest.raises(InvalidInputError):
        positive_l1(Algebra.of(2), [np.diag([1.0, -0.5])])


def test_kosaki_norm_at_one_is_trace_norm_of_embedding() -> None:
    algebra = Algebra.of(2)
    rng = np.random.default_rng(2)
    state = random_state(algebra, rng)
    x = random_element(algebra, rng)
    assert kosaki_norm(x, 1, state) == pytest.approx(schatten_norm(embed_l1(x, state).rep, 1))
    assert kosaki_norm(x, math.inf, state) == pytest.approx(schatten_norm(x, math.inf))


def test_lp_norm_of_l1_element() -> None:
    algebra, state = _state_m2()
    a = LOneElement(hermitian([np.diag([0.2, 0.1])]))
    assert lp_norm(a, 1, state) == pytest.approx(0.3)
    assert lp_norm(a, 2, state) == pytest.approx(kosaki_norm(pull_back(a, state), 2, state))


def test_embed_lp_is_identity_at_infinity_and_rejects_small_exponents() -> None:
    algebra, state = _state_m2()
    x = algebra.identity()
    assert embed_lp(x, math.inf, state) is x
    with pytest.raises(InvalidExponentError):
        embed_lp(x, 0.5, state)


def test_modular_flow_fixes_density_commutant_and_is_a_group() -> None:
    algebra = Algebra.of(2)
    rng = np.random.default_rng(4)
    state = random_state(algebra, rng)
    x = random_element(algebra, rng)
    assert modular_flow(state.rho, 1.7, state).distance(state.rho) <= 1e-12
    composed = modular_flow(modular_flow(x, 0.4, state), 0.9, state)
    assert composed.distance(modular_flow(x, 1.3, state)) <= 1e-10
    assert modular_flow(x, 0.0, state) is x


@settings(max_examples=25, deadline=None)
@given(signature=signatures, seed=seeds)
def test_kosaki_one_norm_is_bounded_by_operator_norm(signature: list[int], seed: int) -> None:
    algebra = Algebra.of(*signature)
    rng = np.random.default_rng(seed)
    state = random_state(algebra, rng)
    x = random_element(algebra, rng)
    assert state.mass() == pytest.approx(1.0)
    assert kosaki_norm(x, 1, state) <= op_norm(x) * state.mass() + 1e-9


@settings(max_examples=25, deadline=None)
@given(
    signature=signatures,
    seed=seeds,
    t=st.floats(min_value=-5.0, max_value=5.0, allow_nan=False),
)
def test_modular_flow_preserves_the_state(signature: list[int], seed: int, t: float) -> None:
    algebra = Algebra.of(*signature)
    rng = np.random.default_rng(seed)
    state = random_state(algebra, rng)
    x = random_element(algebra, rng)
    flowed = modular_flow(x, t, state)
    assert state.expectation(flowed) == pytest.approx(state.expectation(x), abs=1e-10)


def test_block_dimension_mismatch_is_reported() -> None:
    _, state = _state_m2()
    with pytest.raises(DimensionMismatchError):
        embed_l1(BlockMatrix.identity([3]), state)
