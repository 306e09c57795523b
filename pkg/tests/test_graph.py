import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flockgnn.graph import (
    AggregationBuffer,
    GraphSequence,
    GraphSnapshot,
    advance_buffer,
    delayed_k_hop_cone,
    shift,
)

from conftest import random_symmetric_graphs


def unrolled_tap(S, X, t, k):
    """S(t) S(t-1) ... S(t-k+1) X(t-k), zero before the start."""
    if t - k < 0:
        return np.zeros_like(X[0])
    out = X[t - k]
    for tau in range(t - k + 1, t + 1):
        out = S[tau] @ out
    return out


def run_buffer(S, X, K):
    buf = AggregationBuffer.zeros(K, X.shape[1], X.shape[2])
    history = []
    for t in range(len(X)):
        buf = advance_buffer(buf, GraphSnapshot.from_dense(S[t]), X[t])
        history.append(buf)
    return history


def test_shift_two_node_swap():
    g = GraphSnapshot(2, [(0, 1), (1, 0)])
    np.testing.assert_array_equal(shift(g, np.array([[1.0], [2.0]])), [[2.0], [1.0]])


def test_shift_without_edges_is_zero(rng):
    g = GraphSnapshot(4)
    np.testing.assert_array_equal(shift(g, rng.normal(size=(4, 3))), np.zeros((4, 3)))


def test_shift_matches_dense_product(rng):
    S = random_symmetric_graphs(rng, 1, 6)[0]
    X = rng.normal(size=(6, 3))
    np.testing.assert_allclose(shift(GraphSnapshot.from_dense(S), X), S @ X, rtol=0, atol=1e-14)


def test_shift_uses_incoming_edges():
    # edge (src=0, dst=2): agent 0 is a neighbor of agent 2, not vice versa
    g = GraphSnapshot(3, [(0, 2)], [2.5])
    X = np.array([[1.0], [10.0], [100.0]])
    np.testing.assert_array_equal(shift(g, X), [[0.0], [0.0], [2.5]])
    assert g.dense()[2, 0] == 2.5 and g.dense()[0, 2] == 0.0


def test_shift_dimension_mismatch():
    with pytest.raises(ValueError):
        shift(GraphSnapshot(3), np.zeros((4, 2)))


def test_snapshot_rejects_self_loops_and_bad_weights():
    with pytest.raises(ValueError):
        GraphSnapshot(3, [(1, 1)])
    with pytest.raises(ValueError):
        GraphSnapshot(3, [(0, 1)], [0.0])
    with pytest.raises(ValueError):
        GraphSnapshot(3, [(0, 3)])


def test_dense_round_trip_respects_sparsity(rng):
    S = random_symmetric_graphs(rng, 1, 7)[0]
    g = GraphSnapshot.from_dense(S)
    assert g.is_symmetric()
    np.testing.assert_array_equal(g.dense(), S)
    for i, j in itertools.product(range(7), repeat=2):
        if i != j and (j, i) not in set(map(tuple, g.edges.tolist())):
            assert g.dense()[i, j] == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000))
def test_shift_permutation_equivariance_exact(n, seed):
    rng = np.random.default_rng(seed)
    S = random_symmetric_graphs(rng, 1, n)[0]
    # integer-valued signals keep every sum exact whatever the summation order
    X = rng.integers(-50, 50, size=(n, 3)).astype(np.float64)
    perm = rng.permutation(n)
    P = np.eye(n)[perm]
    g = GraphSnapshot.from_dense(S)
    lhs = shift(g.permuted(perm), P @ X)
    np.testing.assert_array_equal(lhs, P @ shift(g, X))
    np.testing.assert_array_equal(g.permuted(perm).dense(), P @ S @ P.T)


def test_buffer_starts_from_zero_history(rng):
    X0 = rng.normal(size=(5, 2))
    g = GraphSnapshot.from_dense(random_symmetric_graphs(rng, 1, 5)[0])
    buf = advance_buffer(AggregationBuffer.zeros(3, 5, 2), g, X0)
    np.testing.assert_array_equal(buf[0], X0)
    np.testing.assert_array_equal(buf[1], 0)
    np.testing.assert_array_equal(buf[2], 0)


def test_buffer_two_advances_constant_graph(rng):
    S = random_symmetric_graphs(rng, 1, 5)[0]
    X = rng.normal(size=(5, 2))
    g = GraphSnapshot.from_dense(S)
    buf = AggregationBuffer.zeros(2, 5, 2)
    buf = advance_buffer(advance_buffer(buf, g, X), g, X)
    np.testing.assert_allclose(buf[1], S @ X, rtol=1e-14, atol=1e-14)


def test_buffer_matches_unrolled_products(rng):
    T, N, K = 4, 5, 3
    S = random_symmetric_graphs(rng, T, N)
    X = rng.normal(size=(T, N, 2))
    for t, buf in enumerate(run_buffer(S, X, K)):
        for k in range(K):
            np.testing.assert_allclose(buf[k], unrolled_tap(S, X, t, k), rtol=1e-12, atol=1e-12)


def test_buffer_dimension_mismatch():
    buf = AggregationBuffer.zeros(2, 3, 2)
    with pytest.raises(ValueError):
        advance_buffer(buf, GraphSnapshot(4), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        advance_buffer(buf, GraphSnapshot(3), np.zeros((3, 5)))


# --- delayed k-hop cone -----------------------------------------------------------

def brute_force_hops(seq, i, t, k):
    """Literal recursion N_i^k(t) = {j' in N_j^{k-1}(t-1) : j in N_i(t)}."""
    if k == 0:
        return {i}
    if k == 1:
        return set(seq[t].neighbors(i).tolist())
    return {jp for j in seq[t].neighbors(i).tolist() for jp in brute_force_hops(seq, j, t - 1, k - 1)}


def test_cone_single_tap():
    seq = GraphSequence((GraphSnapshot(3, [(0, 1), (1, 0)]),) * 2)
    assert delayed_k_hop_cone(seq, 1, 1, 1) == {(1, 1)}


def test_cone_complete_graph_two_taps():
    n = 4
    S = np.ones((n, n)) - np.eye(n)
    seq = GraphSequence.from_dense(np.stack([S, S, S]))
    cone = delayed_k_hop_cone(seq, 0, 2, 2)
    assert cone == {(0, 2)} | {(j, 1) for j in range(1, n)}
    # one hop reaches every other agent; with the self term at time t all agents appear
    assert {a for a, _ in cone} == set(range(n))


def test_cone_path_graph_losing_an_edge():
    path = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    broken = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    seq = GraphSequence.from_dense(np.stack([path, path, broken, path]))
    for i in range(3):
        for t in range(4):
            for K in range(1, 5):
                expected = {(j, t - k) for k in range(K) if t - k >= 0 for j in brute_force_hops(seq, i, t, k)}
                assert delayed_k_hop_cone(seq, i, t, K) == expected


def test_cone_rejects_out_of_range():
    seq = GraphSequence((GraphSnapshot(3),))
    with pytest.raises(ValueError):
        delayed_k_hop_cone(seq, 0, 1, 2)
    with pytest.raises(ValueError):
        delayed_k_hop_cone(seq, 3, 0, 2)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(1, 5), st.integers(1, 4), st.integers(0, 10_000))
def test_zeroing_outside_cone_leaves_taps_unchanged(n, T, K, seed):
    rng = np.random.default_rng(seed)
    S = random_symmetric_graphs(rng, T, n, density=0.35)
    X = rng.normal(size=(T, n, 2))
    seq = GraphSequence.from_dense(S)
    i, t = int(rng.integers(n)), T - 1
    cone = delayed_k_hop_cone(seq, i, t, K)
    masked = X.copy()
    for a in range(n):
        for tau in range(T):
            if (a, tau) not in cone:
                masked[tau, a] = 0.0
    full = run_buffer(S, X, K)[t]
    cut = run_buffer(S, masked, K)[t]
    np.testing.assert_array_equal(full.taps[:, i], cut.taps[:, i])
