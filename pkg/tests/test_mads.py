import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bads import mads
from bads.mads import (
    FAILURE,
    POLL_SUCCESS,
    SEARCH_SUCCESS,
    EmptyPollSet,
    MeshState,
    generate_poll_directions,
    ltmads_basis,
    ltmads_index,
    on_mesh,
    order_poll,
    poll_candidates,
    project_to_mesh,
    rescale_factors,
    sufficient_improvement,
    update_mesh,
)

from .oracles import ltmads_positive_span

coords = st.floats(-3, 3)
mesh_sizes = st.sampled_from([2.0**-k for k in range(0, 14)])


def test_sufficient_improvement_threshold():
    assert sufficient_improvement(1.0, 1.0 - 0.125, 0.25)
    assert not sufficient_improvement(1.0, 1.0 - 0.124, 0.25)


@given(st.lists(coords, min_size=3, max_size=3), st.lists(coords, min_size=3, max_size=3), mesh_sizes)
def test_projection_lands_on_mesh_and_is_nearest(u, x, delta):
    u, x = np.array(u), np.array(x)
    p = project_to_mesh(u, x, delta)
    assert on_mesh(p, x, delta)
    assert np.all(np.abs(p - u) <= delta / 2 + 1e-12)


@given(st.lists(coords, min_size=2, max_size=2), mesh_sizes)
def test_projection_inside_bounds(u, delta):
    lb, ub = np.array([-1.0, -0.7]), np.array([1.0, 0.9])
    x = np.array([0.3, -0.2])
    p = project_to_mesh(np.array(u), x, delta, lb, ub)
    assert np.all(p >= lb) and np.all(p <= ub)


def test_projection_ties_round_toward_incumbent():
    x = np.zeros(2)
    np.testing.assert_array_equal(project_to_mesh(np.array([0.5, -1.5]), x, 1.0), [0.0, -1.0])


def test_ltmads_index():
    assert ltmads_index(2.0**-10, 1.0) == 10
    assert ltmads_index(1.0, 1.0) == 0
    assert ltmads_index(1.0, 0.5) == 0


@given(st.integers(1, 6), st.integers(0, 8), st.integers(0, 2**31))
def test_ltmads_basis_structure(D, index, seed):
    rng = np.random.default_rng(seed)
    B = ltmads_basis(D, index, rng)
    b = 2**index
    assert np.all(B == np.round(B))
    # one +-b entry per row and column after permutation, other entries strictly smaller
    assert np.all(np.sum(np.abs(B) == b, axis=0) >= 1)
    assert abs(np.linalg.det(B)) == pytest.approx(b**D)
    assert np.all(np.abs(B) <= b)


@given(st.integers(1, 5), st.integers(0, 2**31))
def test_poll_directions_positively_span(D, seed):
    rng = np.random.default_rng(seed)
    V = generate_poll_directions(D, 2.0**-6, 2.0**-2, np.exp(rng.normal(size=D)), np.full(D, 2.0), rng)
    assert V.shape == (2 * D, D)
    assert ltmads_positive_span(V)


def test_rescale_factors():
    ell = np.array([1.0, 4.0])
    w = rescale_factors(ell, 2.0**-10, np.array([10.0, 1.5]))
    np.testing.assert_allclose(w, [0.5, 1.5])


def test_poll_candidates_on_mesh_in_bounds(rng):
    x = np.array([0.9, -0.9])
    lb, ub = -np.ones(2), np.ones(2)
    V = generate_poll_directions(2, 2.0**-4, 2.0**-1, None, np.full(2, 2.0), rng)
    P = poll_candidates(x, V, 2.0**-4, lb, ub)
    assert all(on_mesh(p, x, 2.0**-4) for p in P)
    assert np.all(P >= lb) and np.all(P <= ub)
    assert not any(np.array_equal(p, x) for p in P)


def test_poll_candidates_all_infeasible_raises():
    V = np.array([[1.0], [-1.0]])
    with pytest.raises(EmptyPollSet):
        poll_candidates(np.array([0.0]), V, 1.0, np.array([-1.0]), np.array([1.0]), feasible=lambda p: False)


def test_order_poll_stable():
    C = np.arange(8.0).reshape(4, 2)
    np.testing.assert_array_equal(order_poll(C, np.array([1.0, 0.0, 1.0, 0.0])), C[[1, 3, 0, 2]])
    assert order_poll(C, None) is C


def state(mesh=2.0**-10, poll=1.0, stall=0):
    return MeshState(x=np.zeros(1), f=0.0, delta_mesh=mesh, delta_poll=poll, stall_count=stall)


def test_update_poll_success_doubles_with_cap():
    s = update_mesh(state(2.0**-6, 2.0**-3), POLL_SUCCESS, True)
    assert (s.delta_mesh, s.delta_poll) == (2.0**-5, 2.0**-2)
    s = update_mesh(state(2.0**-6, 1.0), POLL_SUCCESS, True)
    assert s.delta_poll == 1.0 and s.delta_mesh == 2.0**-5


def test_update_failure_halves_then_quarters():
    s = update_mesh(state(2.0**-6, 2.0**-3, stall=2), FAILURE, False)
    assert (s.delta_mesh, s.delta_poll, s.stall_count) == (2.0**-7, 2.0**-4, 3)
    s = update_mesh(s, FAILURE, False)
    assert (s.delta_mesh, s.delta_poll, s.stall_count) == (2.0**-9, 2.0**-6, 4)


def test_update_search_success_keeps_sizes():
    s = update_mesh(state(2.0**-6, 2.0**-3, stall=2), SEARCH_SUCCESS, True)
    assert (s.delta_mesh, s.delta_poll, s.stall_count, s.iteration) == (2.0**-6, 2.0**-3, 0, 1)
    with pytest.raises(ValueError):
        update_mesh(s, "other", True)


@given(st.lists(st.sampled_from([POLL_SUCCESS, FAILURE, SEARCH_SUCCESS]), max_size=40))
def test_poll_never_below_mesh(outcomes):
    s = state()
    for o in outcomes:
        s = update_mesh(s, o, o != FAILURE)
        assert s.delta_poll >= s.delta_mesh
        assert s.delta_poll <= mads.DELTA_POLL_MAX
