"""Point-mass flocking: dynamics, cost, centralized expert, features and rollouts.

Positions and velocities are arrays of shape (..., N, 2); the leading axes
index independent swarms so whole test sets roll out in one loop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.sparse.csgraph import connected_components

from .controllers import ControllerParams, Policy
from .graph import GraphSequence, GraphSnapshot

log = logging.getLogger(__name__)

DISTANCE_FLOOR = 1e-6
MAX_PLACEMENT_ATTEMPTS = 1000


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class FlockingConfig:
    n_agents: int = 50
    sampling_time: float = 0.01
    duration: float = 2.0
    comm_radius: float = 2.0
    max_accel: float = 10.0
    vel_range: float = 3.0
    bias_range: float = 3.0
    min_init_dist: float = 0.1
    potential_cutoff: float = 1.0
    placement_spacing: float = 0.6
    seed: int = 0

    def __post_init__(self):
        positive = ("sampling_time", "duration", "comm_radius", "max_accel", "vel_range",
                    "min_init_dist", "potential_cutoff", "placement_spacing")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.bias_range < 0:
            raise ConfigurationError("bias_range must be non-negative")
        if self.n_agents < 2:
            raise ConfigurationError("flocking needs at least two agents")
        if self.min_init_dist >= self.comm_radius:
            raise ConfigurationError("min_init_dist must be below comm_radius")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.sampling_time))

    def replace(self, **changes) -> "FlockingConfig":
        return replace(self, **changes)


@dataclass
class SwarmState:
    positions: np.ndarray
    velocities: np.ndarray
    time_index: int = 0
    sampling_time: float = 0.01

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.velocities = np.asarray(self.velocities, dtype=np.float64)
        if self.positions.shape != self.velocities.shape or self.positions.shape[-1] != 2:
            raise ValueError("positions and velocities must share a (..., N, 2) shape")
        if self.positions.shape[-2] < 2:
            raise ValueError("a swarm needs at least two agents")

    @property
    def n_agents(self) -> int:
        return self.positions.shape[-2]


def step_dynamics(state: SwarmState, actions: np.ndarray, max_accel: float) -> SwarmState:
    """Zero-order-hold double integrator with per-component acceleration clipping."""
    actions = np.asarray(actions, dtype=np.float64)
    if not (np.all(np.isfinite(actions)) and np.all(np.isfinite(state.positions))
            and np.all(np.isfinite(state.velocities))):
        raise ValueError("non-finite state or action")
    u = np.clip(actions, -max_accel, max_accel)
    ts = state.sampling_time
    return SwarmState(
        positions=u * ts**2 / 2 + state.velocities * ts + state.positions,
        velocities=u * ts + state.velocities,
        time_index=state.time_index + 1,
        sampling_time=ts,
    )


def adjacency(positions: np.ndarray, radius: float) -> np.ndarray:
    """Binary symmetric adjacency, (..., N, N); closed ball, no self-loops."""
    diff = positions[..., :, None, :] - positions[..., None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    A = (dist <= radius).astype(np.float64)
    idx = np.arange(positions.shape[-2])
    A[..., idx, idx] = 0.0
    return A


def build_comm_graph(positions: np.ndarray, radius: float) -> GraphSnapshot:
    if radius <= 0:
        raise ValueError("communication radius must be positive")
    return GraphSnapshot.from_dense(adjacency(np.asarray(positions, dtype=np.float64), radius))


def cost(velocities: np.ndarray) -> np.ndarray:
    """Mean squared deviation from the team-average velocity, per swarm."""
    v = np.asarray(velocities, dtype=np.float64)
    dev = v - v.mean(axis=-2, keepdims=True)
    return np.sum(dev**2, axis=(-2, -1)) / v.shape[-2]


def _pair_terms(positions: np.ndarray):
    """``r_ij = r_i - r_j`` and the floored distance, (..., N, N, 2) and (..., N, N)."""
    r_ij = positions[..., :, None, :] - positions[..., None, :, :]
    dist = np.maximum(np.sqrt(np.sum(r_ij**2, axis=-1)), DISTANCE_FLOOR)
    return r_ij, dist


def potential(r_i: np.ndarray, r_j: np.ndarray, cutoff: float) -> float:
    """Collision-avoidance potential ``1/d^2 - log(d^2)``, flat beyond ``cutoff``."""
    d = max(float(np.linalg.norm(np.asarray(r_i) - np.asarray(r_j))), DISTANCE_FLOOR)
    d = min(d, cutoff)
    return 1.0 / d**2 - np.log(d**2)


def potential_gradient(r_i: np.ndarray, r_j: np.ndarray, cutoff: float) -> np.ndarray:
    """Gradient of :func:`potential` with respect to ``r_i``."""
    r_ij = np.asarray(r_i, dtype=np.float64) - np.asarray(r_j, dtype=np.float64)
    d = max(float(np.linalg.norm(r_ij)), DISTANCE_FLOOR)
    if d > cutoff:
        return np.zeros(2)
    return -2.0 * r_ij / d**4 - 2.0 * r_ij / d**2


def expert_action(state: SwarmState, cutoff: float) -> np.ndarray:
    """Centralized flocking accelerations (unclipped)."""
    p, v = state.positions, state.velocities
    n = p.shape[-2]
    velocity_term = -(n * v - v.sum(axis=-2, keepdims=True))
    r_ij, dist = _pair_terms(p)
    inside = (dist <= cutoff)
    idx = np.arange(n)
    inside[..., idx, idx] = False
    coef = np.where(inside, -2.0 / dist**4 - 2.0 / dist**2, 0.0)
    grad = np.sum(coef[..., None] * r_ij, axis=-2)
    return velocity_term - grad


def local_features(state: SwarmState, graph: GraphSnapshot | np.ndarray) -> np.ndarray:
    """Six features per agent: neighbor velocity differences and two inverse-power position sums."""
    A = graph.dense() if isinstance(graph, GraphSnapshot) else np.asarray(graph, dtype=np.float64)
    p, v = state.positions, state.velocities
    deg = A.sum(axis=-1, keepdims=True)
    vel = deg * v - A @ v
    r_ij, dist = _pair_terms(p)
    w4 = A / dist**4
    w2 = A / dist**2
    inv4 = np.sum(w4[..., None] * r_ij, axis=-2)
    inv2 = np.sum(w2[..., None] * r_ij, axis=-2)
    return np.concatenate([vel, inv4, inv2], axis=-1)


def is_connected(A: np.ndarray) -> bool:
    n_comp, _ = connected_components(A, directed=False)
    return n_comp == 1


def sample_initial_state(config: FlockingConfig, rng: np.random.Generator) -> SwarmState:
    """Random placement in a disc of radius ``spacing * sqrt(N)``; random velocities plus a shared bias."""
    n = config.n_agents
    disc = config.placement_spacing * np.sqrt(n)
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        radius = disc * np.sqrt(rng.uniform(size=n))
        angle = rng.uniform(0.0, 2 * np.pi, size=n)
        pos = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        dist = np.sqrt(np.sum((pos[:, None] - pos[None]) ** 2, axis=-1))
        dist[np.diag_indices(n)] = np.inf
        if dist.min() >= config.min_init_dist and is_connected(adjacency(pos, config.comm_radius)):
            break
    else:
        raise ConfigurationError(
            f"no valid placement of {n} agents after {MAX_PLACEMENT_ATTEMPTS} attempts"
        )
    vel = rng.uniform(-config.vel_range, config.vel_range, size=(n, 2))
    bias = rng.uniform(-config.bias_range, config.bias_range, size=2)
    return SwarmState(pos, vel + bias, 0, config.sampling_time)


def stack_states(states: list[SwarmState]) -> SwarmState:
    return SwarmState(
        np.stack([s.positions for s in states]),
        np.stack([s.velocities for s in states]),
        states[0].time_index,
        states[0].sampling_time,
    )


@dataclass
class TrajectoryRecord:
    """One closed-loop run; graphs are kept as dense binary shift operators."""

    positions: np.ndarray  # (T, N, 2)
    velocities: np.ndarray  # (T, N, 2)
    features: np.ndarray  # (T, N, 6)
    actions: np.ndarray  # (T, N, 2), as executed (clipped)
    graphs: np.ndarray  # (T, N, N), boolean adjacency

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0]

    @property
    def n_agents(self) -> int:
        return self.positions.shape[1]

    def shift_operators(self) -> np.ndarray:
        return self.graphs.astype(np.float64)

    def graph_sequence(self) -> GraphSequence:
        return GraphSequence.from_dense(self.shift_operators())

    def cost_trace(self) -> np.ndarray:
        return cost(self.velocities)


@dataclass
class CostTrace:
    per_step: np.ndarray  # (B, T)

    @property
    def totals(self) -> np.ndarray:
        return self.per_step.sum(axis=-1)

    @property
    def mean(self) -> float:
        return float(self.totals.mean())

    @property
    def std(self) -> float:
        return float(self.totals.std())


Controller = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ZeroController:
    def __call__(self, S, X):
        return np.zeros(X.shape[:-1] + (2,))


def rollout(
    controller: ControllerParams | Policy | Controller | str,
    initial: SwarmState | list[SwarmState],
    config: FlockingConfig,
    record: bool = True,
) -> tuple[list[TrajectoryRecord], CostTrace]:
    """Closed loop for ``config.n_steps`` steps from each initial state.

    ``controller`` is ``"expert"``, ``"zero"``, trained parameters, or any
    callable mapping ``(S(t), X(t))`` to actions. Learned controllers only see
    the graph and local features. The cost is recorded at every step before
    the action is applied.
    """
    state = stack_states(initial) if isinstance(initial, list) else initial
    if state.positions.ndim == 2:
        state = SwarmState(state.positions[None], state.velocities[None], state.time_index, state.sampling_time)
    state = replace(state, sampling_time=config.sampling_time)

    expert = controller == "expert"
    if controller == "zero":
        controller = ZeroController()
    elif isinstance(controller, ControllerParams):
        controller = Policy(controller)
    if isinstance(controller, Policy):
        controller.reset(state.positions.shape[:-2], state.n_agents)

    T = config.n_steps
    B, N = state.positions.shape[0], state.n_agents
    costs = np.empty((B, T))
    if record:
        pos = np.empty((T, B, N, 2))
        vel = np.empty((T, B, N, 2))
        feats = np.empty((T, B, N, 6))
        acts = np.empty((T, B, N, 2))
        graphs = np.empty((T, B, N, N), dtype=bool)
    for t in range(T):
        S = adjacency(state.positions, config.comm_radius)
        X = local_features(state, S)
        if expert:
            u = expert_action(state, config.potential_cutoff)
        else:
            u = controller(S, X)
        u = np.clip(u, -config.max_accel, config.max_accel)
        costs[:, t] = cost(state.velocities)
        if record:
            pos[t], vel[t], feats[t], acts[t], graphs[t] = state.positions, state.velocities, X, u, S > 0
        state = step_dynamics(state, u, config.max_accel)

    records = []
    if record:
        records = [
            TrajectoryRecord(pos[:, b].copy(), vel[:, b].copy(), feats[:, b].copy(),
                             acts[:, b].copy(), graphs[:, b].copy())
            for b in range(B)
        ]
    return records, CostTrace(costs)


@dataclass
class Dataset:
    config: FlockingConfig
    seed: int
    train: list[TrajectoryRecord] = field(default_factory=list)
    valid: list[TrajectoryRecord] = field(default_factory=list)
    test: list[TrajectoryRecord] = field(default_factory=list)

    def split(self, name: str) -> list[TrajectoryRecord]:
        return getattr(self, name)

    @property
    def n_steps(self) -> int:
        return self.config.n_steps


SPLITS = ("train", "valid", "test")


def split_rngs(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(SPLITS))
    return {name: np.random.default_rng(child) for name, child in zip(SPLITS, children)}


def sample_initial_states(config: FlockingConfig, count: int, rng: np.random.Generator) -> list[SwarmState]:
    return [sample_initial_state(config, rng) for _ in range(count)]


def generate_dataset(
    config: FlockingConfig,
    n_train: int = 400,
    n_valid: int = 20,
    n_test: int = 20,
    seed: int | None = None,
    chunk: int = 20,
) -> Dataset:
    """Expert rollouts for each split, each split drawing from its own rng stream."""
    seed = config.seed if seed is None else seed
    rngs = split_rngs(seed)
    data = Dataset(config=config, seed=seed)
    for name, count in zip(SPLITS, (n_train, n_valid, n_test)):
        initial = sample_initial_states(config, count, rngs[name])
        records = data.split(name)
        for start in range(0, count, chunk):
            recs, trace = rollout("expert", initial[start:start + chunk], config)
            records.extend(recs)
        log.info("generated %d %s trajectories", count, name)
    return data
