"""Time-varying communication graphs and the delayed aggregation recursion.

Edges are stored as ordered ``(src, dst)`` pairs: information travels from
``src`` to ``dst``, so ``src`` belongs to the neighborhood of ``dst`` and the
dense shift operator carries the weight at ``S[dst, src]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class GraphSnapshot:
    """Graph shift operator for a single time step."""

    n_agents: int
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be positive, got {self.n_agents}")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= self.n_agents):
            raise ValueError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loops are not allowed")
        if self.weights is None:
            weights = np.ones(len(edges))
        else:
            weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if weights.shape[0] != edges.shape[0]:
                raise ValueError("one weight per edge required")
            if np.any(weights <= 0):
                raise ValueError("edge weights must be positive")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_dense(cls, matrix: np.ndarray) -> "GraphSnapshot":
        matrix = np.asarray(matrix, dtype=np.float64)
        dst, src = np.nonzero(matrix)
        keep = dst != src
        dst, src = dst[keep], src[keep]
        return cls(matrix.shape[0], np.stack([src, dst], axis=1), matrix[dst, src])

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def dense(self) -> np.ndarray:
        S = np.zeros((self.n_agents, self.n_agents))
        S[self.edges[:, 1], self.edges[:, 0]] = self.weights
        return S

    def neighbors(self, i: int) -> np.ndarray:
        """Agents that send to ``i``."""
        return np.sort(self.edges[self.edges[:, 1] == i, 0])

    def is_symmetric(self) -> bool:
        fwd = set(map(tuple, self.edges.tolist()))
        return all((j, i) in fwd for i, j in fwd)

    def permuted(self, perm: np.ndarray) -> "GraphSnapshot":
        """Relabel agents so that old agent ``perm[k]`` becomes agent ``k``.

        Matches ``P S P^T`` with ``P[k, perm[k]] = 1``.
        """
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        return GraphSnapshot(self.n_agents, inverse[self.edges], self.weights.copy())


@dataclass(frozen=True)
class GraphSequence:
    snapshots: tuple[GraphSnapshot, ...]

    def __post_init__(self):
        snaps = tuple(self.snapshots)
        if not snaps:
            raise ValueError("a graph sequence needs at least one snapshot")
        n = snaps[0].n_agents
        if any(g.n_agents != n for g in snaps):
            raise ValueError("all snapshots must share the number of agents")
        object.__setattr__(self, "snapshots", snaps)

    @classmethod
    def from_dense(cls, matrices: np.ndarray) -> "GraphSequence":
        return cls(tuple(GraphSnapshot.from_dense(m) for m in matrices))

    @property
    def n_agents(self) -> int:
        return self.snapshots[0].n_agents

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, t: int) -> GraphSnapshot:
        return self.snapshots[t]

    def dense(self) -> np.ndarray:
        return np.stack([g.dense() for g in self.snapshots])


def shift(graph: GraphSnapshot, signal: np.ndarray) -> np.ndarray:
    """Aggregate ``signal`` over incoming neighbors: ``(S X)[i] = sum_j s_ij X[j]``."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 2 or signal.shape[0] != graph.n_agents:
        raise ValueError(
            f"signal of shape {signal.shape} does not match a graph with {graph.n_agents} agents"
        )
    out = np.zeros_like(signal)
    src, dst = graph.edges[:, 0], graph.edges[:, 1]
    np.add.at(out, dst, graph.weights[:, None] * signal[src])
    return out


@dataclass(frozen=True)
class AggregationBuffer:
    """Delayed aggregates ``Y^(k)(t)``, stacked as an array of shape (K, N, F).

    Tap 0 holds the current signal; tap k holds the signal from k steps ago
    carried through the k most recent shift operators.
    """

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 3:
            raise ValueError("taps must have shape (K, N, F)")
        object.__setattr__(self, "taps", taps)

    @classmethod
    def zeros(cls, n_taps: int, n_agents: int, n_features: int) -> "AggregationBuffer":
        if n_taps < 1:
            raise ValueError("at least one tap is required")
        return cls(np.zeros((n_taps, n_agents, n_features)))

    @property
    def n_taps(self) -> int:
        return self.taps.shape[0]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.taps[k]


def advance_buffer(
    buffer: AggregationBuffer, graph: GraphSnapshot, new_signal: np.ndarray
) -> AggregationBuffer:
    """One communication round: each tap is shifted once and moves one slot down."""
    new_signal = np.asarray(new_signal, dtype=np.float64)
    _, n, f = buffer.taps.shape
    if n != graph.n_agents or new_signal.shape != (n, f):
        raise ValueError(
            f"buffer taps {buffer.taps.shape}, graph N={graph.n_agents} and "
            f"signal {new_signal.shape} disagree"
        )
    taps = np.empty_like(buffer.taps)
    taps[0] = new_signal
    for k in range(1, buffer.n_taps):
        taps[k] = shift(graph, buffer.taps[k - 1])
    return AggregationBuffer(taps)


def advance_taps(taps: np.ndarray, S: np.ndarray, new_signal: np.ndarray) -> np.ndarray:
    """Dense, batched form of :func:`advance_buffer`.

    ``taps`` has shape (K, ..., N, F) and ``S`` shape (..., N, N).
    """
    out = np.empty_like(taps)
    out[0] = new_signal
    if taps.shape[0] > 1:
        out[1:] = S @ taps[:-1]
    return out


def delayed_k_hop_cone(seq: GraphSequence, agent: int, t: int, n_taps: int) -> set[tuple[int, int]]:
    """(agent, time) pairs whose features can reach ``agent`` at time ``t``.

    ``N_i^k(t) = {j' in N_j^{k-1}(t-1) : j in N_i(t)}`` with ``N_i^0(t) = {i}``.
    Times before zero are dropped since nothing was observed there.
    """
    if not 0 <= t < len(seq):
        raise ValueError(f"time {t} outside sequence of length {len(seq)}")
    if not 0 <= agent < seq.n_agents:
        raise ValueError(f"agent {agent} outside 0..{seq.n_agents - 1}")
    if n_taps < 1:
        raise ValueError("at least one tap is required")

    cone = {(agent, t)}
    frontier = {agent}
    for k in range(1, n_taps):
        tk = t - k + 1  # graph used for the k-th hop
        if t - k < 0:
            break
        graph = seq[tk]
        frontier = {int(j) for i in frontier for j in graph.neighbors(i)}
        cone.update((j, t - k) for j in frontier)
    return cone


def as_dense_sequence(graphs: GraphSequence | Sequence[GraphSnapshot] | np.ndarray) -> np.ndarray:
    if isinstance(graphs, np.ndarray):
        return graphs.astype(np.float64, copy=False)
    if isinstance(graphs, GraphSequence):
        return graphs.dense()
    return GraphSequence(tuple(graphs)).dense()
