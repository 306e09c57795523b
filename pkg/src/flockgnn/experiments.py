"""Hyperparameter sweep, robustness and transfer experiments with multi-seed aggregation.

A realization fixes one dataset seed and one parameter-init seed; every cell
of an experiment is evaluated once per realization and the report keeps the
raw per-realization values next to their seeds.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .controllers import Arch, ControllerParams
from .flocking import (
    ConfigurationError,
    Dataset,
    FlockingConfig,
    SwarmState,
    generate_dataset,
    rollout,
    sample_initial_states,
)
from .training import TrainConfig, train

log = logging.getLogger(__name__)

BEST_SIZES = {"GC": (32, 4), "GCNN": (64, 3), "GRNN": (64, 3)}
KINDS = ("sweep", "velocity-robustness", "radius-robustness", "transfer")


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = "sweep"
    archs: tuple[str, ...] = ("GC", "GCNN", "GRNN")
    G_values: tuple[int, ...] = (16, 32, 64)
    K_values: tuple[int, ...] = (2, 3, 4)
    best: dict = field(default_factory=lambda: dict(BEST_SIZES))
    velocity_values: tuple[float, ...] = (1.5, 2.25, 3.0, 3.75, 4.5)
    radius_values: tuple[float, ...] = (1.5, 2.0, 2.5, 3.0, 3.5)
    team_sizes: tuple[int, ...] = (50, 62, 75, 87, 100)
    n_realizations: int = 5
    n_train: int = 400
    n_valid: int = 20
    n_test: int = 20
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}")
        for name in ("archs", "G_values", "K_values", "velocity_values", "radius_values", "team_sizes"):
            value = tuple(getattr(self, name))
            if not value:
                raise ConfigurationError(f"{name} must not be empty")
            object.__setattr__(self, name, value)
        for arch in self.archs:
            Arch(arch)
        best = {k: tuple(v) for k, v in dict(self.best).items()}
        missing = [a for a in self.archs if a not in best]
        if missing:
            raise ConfigurationError(f"no best (G, K) given for {', '.join(missing)}")
        object.__setattr__(self, "best", best)
        for name in ("n_realizations", "n_train", "n_valid", "n_test", "workers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1")

    def realization_seed(self, r: int) -> int:
        return int(np.random.SeedSequence([self.seed, r]).generate_state(1)[0])


@dataclass
class Cell:
    experiment: str
    arch: str
    G: int
    K: int
    n_agents: int
    parameter: str
    value: float
    seeds: list[int] = field(default_factory=list)
    costs: list[float] = field(default_factory=list)
    cost_stds: list[float] = field(default_factory=list)
    expert_costs: list[float] = field(default_factory=list)

    @property
    def relative(self) -> list[float]:
        return [c / e for c, e in zip(self.costs, self.expert_costs)]

    def values(self, relative: bool = False) -> np.ndarray:
        return np.asarray(self.relative if relative else self.costs)

    def mean(self, relative: bool = False) -> float:
        return float(self.values(relative).mean())

    def std(self, relative: bool = False) -> float:
        return float(self.values(relative).std())


CSV_COLUMNS = (
    "experiment", "arch", "G", "K", "n_agents", "parameter", "value",
    "realization", "seed", "cost", "cost_std", "expert_cost", "relative_cost",
)


@dataclass
class CostReport:
    experiment: str
    cells: list[Cell] = field(default_factory=list)

    def cell(self, **match) -> Cell:
        found = [c for c in self.cells if all(getattr(c, k) == v for k, v in match.items())]
        if len(found) != 1:
            raise KeyError(f"{len(found)} cells match {match}")
        return found[0]

    def rows(self) -> Iterable[dict]:
        for c in self.cells:
            for r, (seed, cost, std, expert) in enumerate(zip(c.seeds, c.costs, c.cost_stds, c.expert_costs)):
                yield {
                    "experiment": c.experiment, "arch": c.arch, "G": c.G, "K": c.K,
                    "n_agents": c.n_agents, "parameter": c.parameter, "value": c.value,
                    "realization": r, "seed": seed, "cost": repr(cost), "cost_std": repr(std),
                    "expert_cost": repr(expert), "relative_cost": repr(cost / expert),
                }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(self.rows())

    def best_cells(self) -> dict[str, Cell]:
        out = {}
        for c in self.cells:
            if c.arch not in out or c.mean() < out[c.arch].mean():
                out[c.arch] = c
        return out

    def summary(self, relative: bool = False) -> str:
        lines = []
        for c in self.cells:
            lines.append(
                f"{c.arch:5s} G={c.G:<3d} K={c.K}  N={c.n_agents:<4d} {c.parameter}={c.value:<6g} "
                f"{c.mean(relative):10.3f} (+-{c.std(relative):.3f})"
            )
        return "\n".join(lines)


def read_csv(path: str | Path) -> CostReport:
    """Rebuild a report from its CSV rows."""
    cells: dict[tuple, Cell] = {}
    experiment = ""
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            experiment = row["experiment"]
            key = (row["arch"], int(row["G"]), int(row["K"]), int(row["n_agents"]), row["parameter"], float(row["value"]))
            cell = cells.setdefault(key, Cell(experiment, *key))
            cell.seeds.append(int(row["seed"]))
            cell.costs.append(float(row["cost"]))
            cell.cost_stds.append(float(row["cost_std"]))
            cell.expert_costs.append(float(row["expert_cost"]))
    return CostReport(experiment, list(cells.values()))


# --- building blocks --------------------------------------------------------

@functools.lru_cache(maxsize=1)
def realization_dataset(config: FlockingConfig, n_train: int, n_valid: int, n_test: int, seed: int) -> Dataset:
    return generate_dataset(config, n_train, n_valid, n_test, seed=seed)


def initial_states(records) -> list[SwarmState]:
    return [SwarmState(r.positions[0], r.velocities[0]) for r in records]


def evaluate(controller, initial: list[SwarmState], config: FlockingConfig) -> tuple[float, float]:
    """Mean and std over trajectories of the total closed-loop cost."""
    _, trace = rollout(controller, initial, config, record=False)
    return trace.mean, trace.std


def train_eval(spec: ExperimentSpec, flocking: FlockingConfig, training: TrainConfig,
               arch: str, G: int, K: int, seed: int):
    """One cell for one realization seed: train on that seed's dataset, evaluate on its test split.

    Returns ``(seed, cost, cost_std, expert_cost, params)``; rerunning with a
    seed recorded in a report reproduces that row exactly.
    """
    data = realization_dataset(flocking, spec.n_train, spec.n_valid, spec.n_test, seed)
    result = train(arch, data, dataclasses.replace(training, seed=seed), G, K)
    test = initial_states(data.test)
    cost, std = evaluate(result.params, test, flocking)
    expert, _ = evaluate("expert", test, flocking)
    log.info("%s G=%d K=%d seed %d: cost %.2f (expert %.2f)", arch, G, K, seed, cost, expert)
    return seed, cost, std, expert, result.params


def _map(spec: ExperimentSpec, fn, jobs: list[tuple]):
    if spec.workers == 1 or len(jobs) == 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=spec.workers) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]


# --- experiments -------------------------------------------------------------

def _run_jobs(spec: ExperimentSpec, flocking: FlockingConfig, training: TrainConfig,
              cells: list[tuple[str, int, int]]) -> dict[tuple[str, int, int, int], tuple]:
    # realization-major order so each worker reuses its cached dataset
    keys = [(arch, G, K, r) for r in range(spec.n_realizations) for arch, G, K in cells]
    jobs = [(spec, flocking, training, arch, G, K, spec.realization_seed(r)) for arch, G, K, r in keys]
    return dict(zip(keys, _map(spec, train_eval, jobs)))


def run_sweep(spec: ExperimentSpec, flocking: FlockingConfig, training: TrainConfig) -> CostReport:
    """Train and evaluate every (arch, G, K) cell once per realization."""
    grid = [(arch, G, K) for arch in spec.archs for G in spec.G_values for K in spec.K_values]
    results = _run_jobs(spec, flocking, training, grid)
    cells = []
    for arch, G, K in grid:
        cell = Cell("sweep", arch, G, K, flocking.n_agents, "none", 0.0)
        for r in range(spec.n_realizations):
            seed, cost, std, expert, _ = results[arch, G, K, r]
            cell.seeds.append(seed)
            cell.costs.append(cost)
            cell.cost_stds.append(std)
            cell.expert_costs.append(expert)
        cells.append(cell)
    return CostReport("sweep", cells)


def train_best(spec: ExperimentSpec, flocking: FlockingConfig, training: TrainConfig) -> dict[str, list[ControllerParams]]:
    """Parameters for each architecture's best (G, K), one set per realization."""
    grid = [(arch, *spec.best[arch]) for arch in spec.archs]
    results = _run_jobs(spec, flocking, training, grid)
    return {
        arch: [results[arch, G, K, r][-1] for r in range(spec.n_realizations)]
        for arch, G, K in grid
    }


def _zero_shot(spec: ExperimentSpec, best: dict[str, list[ControllerParams]], experiment: str,
               parameter: str, values, configure) -> CostReport:
    cells = {}
    for arch in spec.archs:
        p = best[arch][0]
        for value in values:
            cfg = configure(value)
            cells[arch, value] = Cell(experiment, arch, p.n_outputs, p.n_taps, cfg.n_agents, parameter, float(value))
    for value in values:
        cfg = configure(value)
        for r in range(spec.n_realizations):
            seed = spec.realization_seed(r)
            # fresh test conditions, independent of the training splits
            rng = np.random.default_rng([seed, 7919, int(round(float(value) * 1000))])
            initial = sample_initial_states(cfg, spec.n_test, rng)
            expert, _ = evaluate("expert", initial, cfg)
            for arch in spec.archs:
                params = best[arch][r % len(best[arch])]
                cost, std = evaluate(params, initial, cfg)
                cell = cells[arch, value]
                cell.seeds.append(seed)
                cell.costs.append(cost)
                cell.cost_stds.append(std)
                cell.expert_costs.append(expert)
            log.info("%s %s=%g realization %d done", experiment, parameter, value, r)
    return CostReport(experiment, list(cells.values()))


def run_robustness(spec: ExperimentSpec, best: dict[str, list[ControllerParams]],
                   flocking: FlockingConfig, parameter: str = "velocity") -> CostReport:
    """Zero-shot cost relative to the expert under a swept initial velocity range or radius."""
    if parameter == "velocity":
        values = spec.velocity_values
        configure = lambda v: dataclasses.replace(flocking, vel_range=float(v), bias_range=float(v))
    elif parameter == "radius":
        values = spec.radius_values
        configure = lambda v: dataclasses.replace(flocking, comm_radius=float(v))
    else:
        raise ValueError(f"unknown robustness parameter {parameter!r}")
    return _zero_shot(spec, best, f"{parameter}-robustness", parameter, values, configure)


def run_transfer(spec: ExperimentSpec, best: dict[str, list[ControllerParams]], flocking: FlockingConfig) -> CostReport:
    """Evaluate unchanged parameters on larger teams; the placement disc scales with sqrt(N)."""
    configure = lambda n: dataclasses.replace(flocking, n_agents=int(n))
    return _zero_shot(spec, best, "transfer", "n_agents", spec.team_sizes, configure)
