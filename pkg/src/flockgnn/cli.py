"""Command-line entry point: ``flockgnn <command> [options]``.

Exit status is 0 on success, 1 on validation or IO errors and 2 when
``gradcheck`` finds a gradient outside tolerance.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .controllers import Arch
from .experiments import BEST_SIZES, CostReport, Cell, ExperimentSpec, evaluate, run_robustness, run_sweep, \
    run_transfer, train_best
from .flocking import ConfigurationError, FlockingConfig, cost, generate_dataset, sample_initial_states
from .training import TrainConfig, backward, gradient_check, train

log = logging.getLogger("flockgnn")

GRADCHECK_TOLERANCE = 1e-5
GRADCHECK_SIZES = {"N": 5, "T": 4, "K": 3, "G": 4}

DESK = {
    "dataset": {"n_train": 40, "n_valid": 20, "n_test": 20},
    "training": {"epochs": 10, "batch_size": 1},
    "experiment": {"n_realizations": 3, "n_train": 40, "n_valid": 20, "n_test": 20},
}


class Settings:
    """Defaults, then the --desk preset, then the JSON config, then explicit flags."""

    def __init__(self, args: argparse.Namespace):
        sections = {"flocking": {}, "training": {}, "experiment": {}, "paths": {}}
        if args.desk:
            sections["training"].update(DESK["training"])
            sections["experiment"].update(DESK["experiment"])
        if args.config:
            for name, values in io.load_run_config(args.config).items():
                sections[name].update(values)
        if args.seed is not None:
            for name in ("flocking", "training", "experiment"):
                sections[name]["seed"] = args.seed
        self.paths = sections.pop("paths")
        self.sections = sections
        self.desk = args.desk

    def flocking(self, **overrides) -> FlockingConfig:
        return FlockingConfig(**{**self.sections["flocking"], **_given(overrides)})

    def training(self, **overrides) -> TrainConfig:
        return TrainConfig(**{**self.sections["training"], **_given(overrides)})

    def experiment(self, **overrides) -> ExperimentSpec:
        return ExperimentSpec(**{**self.sections["experiment"], **_given(overrides)})

    def dataset_counts(self, args) -> tuple[int, int, int]:
        base = {"n_train": 400, "n_valid": 20, "n_test": 20}
        if self.desk:
            base.update(DESK["dataset"])
        exp = self.sections["experiment"]
        base.update({k: exp[k] for k in base if k in exp})
        base.update(_given({k: getattr(args, k, None) for k in base}))
        return base["n_train"], base["n_valid"], base["n_test"]

    def path(self, name: str, flag) -> Path | None:
        if flag is not None:
            return Path(flag).resolve()
        return self.paths.get(name)


def _given(values: dict) -> dict:
    return {k: v for k, v in values.items() if v is not None}


def _require_path(path: Path | None, what: str) -> Path:
    if path is None:
        raise ConfigurationError(f"no {what} given")
    return path


# --- commands ------------------------------------------------------------------

def cmd_generate(args, settings: Settings) -> int:
    cfg = settings.flocking(n_agents=args.n_agents)
    n_train, n_valid, n_test = settings.dataset_counts(args)
    out = settings.path("dataset", args.out) or Path("dataset.flk")
    data = generate_dataset(cfg, n_train, n_valid, n_test, seed=cfg.seed)
    io.write_dataset(data, out)
    test_costs = [float(cost(r.velocities).sum()) for r in data.test] or [float("nan")]
    print(f"wrote {out}: train={len(data.train)} valid={len(data.valid)} test={len(data.test)} "
          f"N={cfg.n_agents} T={cfg.n_steps}")
    print(f"expert cost on test split: {np.mean(test_costs):.3f} (+-{np.std(test_costs):.3f})")
    return 0


def cmd_train(args, settings: Settings) -> int:
    dataset_path = _require_path(settings.path("dataset", args.dataset), "dataset (--dataset)")
    arch = Arch(args.arch)
    G = args.G or BEST_SIZES[arch.value][0]
    K = args.K or BEST_SIZES[arch.value][1]
    cfg = settings.training(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr)
    data = io.read_dataset(dataset_path, settings.flocking())
    result = train(arch, data, cfg, G, K)
    out = settings.path("checkpoint", args.out) or Path(f"{arch.value.lower()}.flkm")
    io.write_checkpoint(result.params, out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log")
    # the file log stays reproducible; per-epoch wall time only goes to the console
    log_path.write_text(result.text_log(timing=False))
    for entry in result.log:
        print(entry.line())
    print(f"wrote {out} ({arch.value} G={G} K={K}); best epoch {result.best_epoch} "
          f"valid_loss {result.best_valid_loss:.6g}; log {log_path}")
    return 0


def cmd_eval(args, settings: Settings) -> int:
    cfg = settings.flocking(n_agents=args.n_agents)
    if args.checkpoint:
        params = io.read_checkpoint(args.checkpoint)
        if args.arch and Arch(args.arch) is not params.arch:
            raise ConfigurationError(f"--arch {args.arch} but checkpoint holds {params.arch.value}")
        controller, label, G, K = params, params.arch.value, params.n_outputs, params.n_taps
    elif args.controller:
        controller, label, G, K = args.controller, args.controller, 0, 0
    else:
        raise ConfigurationError("eval needs --checkpoint or --controller")
    rng = np.random.default_rng(cfg.seed)
    initial = sample_initial_states(cfg, args.n_test, rng)
    mean, std = evaluate(controller, initial, cfg)
    expert, expert_std = evaluate("expert", initial, cfg)
    print(f"{label}: cost {mean:.3f} (+-{std:.3f})  expert {expert:.3f} (+-{expert_std:.3f})  "
          f"N={cfg.n_agents} trajectories={args.n_test}")
    cell = Cell("eval", label, G, K, cfg.n_agents, "none", 0.0, [cfg.seed], [mean], [std], [expert])
    out = settings.path("report", args.out) or Path("eval.csv")
    CostReport("eval", [cell]).write_csv(out)
    return 0


def _experiment_dir(settings: Settings, args) -> Path:
    out = settings.path("out", args.out) or Path("results")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _spec(args, settings: Settings, kind: str) -> ExperimentSpec:
    archs = tuple(args.archs.split(",")) if args.archs else None
    return settings.experiment(kind=kind, archs=archs, workers=args.workers)


def cmd_sweep(args, settings: Settings) -> int:
    from .plotting import plot_sweep

    spec = _spec(args, settings, "sweep")
    report = run_sweep(spec, settings.flocking(), settings.training())
    out = _experiment_dir(settings, args)
    report.write_csv(out / "sweep.csv")
    plot_sweep(report, out / "sweep.svg")
    print(report.summary())
    for arch, cell in report.best_cells().items():
        print(f"best {arch}: G={cell.G} K={cell.K} cost {cell.mean():.2f} (+-{cell.std():.2f})")
    return 0


def _best_params(args, settings: Settings, spec: ExperimentSpec):
    if args.checkpoint:
        best = {}
        for item in args.checkpoint:
            arch, _, path = item.partition("=")
            params = io.read_checkpoint(path)
            if params.arch is not Arch(arch):
                raise ConfigurationError(f"{path} holds {params.arch.value}, not {arch}")
            best[arch] = [params]
        missing = [a for a in spec.archs if a not in best]
        if missing:
            raise ConfigurationError(f"missing --checkpoint for {', '.join(missing)}")
        return best
    return train_best(spec, settings.flocking(), settings.training())


def cmd_robustness(args, settings: Settings) -> int:
    from .plotting import plot_lines

    kind = "radius-robustness" if args.parameter == "radius" else "velocity-robustness"
    spec = _spec(args, settings, kind)
    best = _best_params(args, settings, spec)
    out = _experiment_dir(settings, args)
    parameters = ("velocity", "radius") if args.parameter == "both" else (args.parameter,)
    for parameter in parameters:
        report = run_robustness(spec, best, settings.flocking(), parameter)
        report.write_csv(out / f"robustness_{parameter}.csv")
        plot_lines(report, out / f"robustness_{parameter}.svg", relative=True, skip=tuple(args.hide))
        print(report.summary(relative=True))
    return 0


def cmd_transfer(args, settings: Settings) -> int:
    from .plotting import plot_lines

    spec = _spec(args, settings, "transfer")
    best = _best_params(args, settings, spec)
    report = run_transfer(spec, best, settings.flocking())
    out = _experiment_dir(settings, args)
    report.write_csv(out / "transfer.csv")
    plot_lines(report, out / "transfer.svg", relative=False)
    print(report.summary())
    return 0


def run_gradcheck(seed: int = 0, grad_fn=backward, tolerance: float = GRADCHECK_TOLERANCE) -> tuple[bool, dict]:
    errors = {}
    for arch in Arch:
        errors[arch.value] = gradient_check(arch, GRADCHECK_SIZES["G"], GRADCHECK_SIZES["K"],
                                            GRADCHECK_SIZES["N"], GRADCHECK_SIZES["T"], seed, grad_fn=grad_fn)
    return all(e <= tolerance for e in errors.values()), errors


def cmd_gradcheck(args, settings: Settings) -> int:
    t0 = time.perf_counter()
    ok, errors = run_gradcheck(args.seed or 0)
    for arch, err in errors.items():
        status = "PASS" if err <= GRADCHECK_TOLERANCE else "FAIL"
        print(f"{arch:5s} max relative error {err:.3e}  {status}")
    print(f"tolerance {GRADCHECK_TOLERANCE:g}, {time.perf_counter() - t0:.2f}s")
    return 0 if ok else 2


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="seed for every random stream")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--desk", action="store_true", help="scaled-down trajectory counts and realizations")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="flockgnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="simulate expert trajectories")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-valid", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--n-agents", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="imitation-learn a controller")
    p.add_argument("--dataset")
    p.add_argument("--arch", choices=[a.value for a in Arch], default="GRNN")
    p.add_argument("-G", type=int)
    p.add_argument("-K", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--log", help="training log path (default: checkpoint with .log suffix)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="closed-loop cost of a controller")
    p.add_argument("--checkpoint")
    p.add_argument("--controller", choices=["expert", "zero"])
    p.add_argument("--arch", choices=[a.value for a in Arch])
    p.add_argument("--n-agents", type=int)
    p.add_argument("--n-test", type=int, default=20)
    p.set_defaults(func=cmd_eval)

    for name, func, help_text in (
        ("sweep", cmd_sweep, "grid over G and K"),
        ("robustness", cmd_robustness, "initial velocity / radius robustness"),
        ("transfer", cmd_transfer, "evaluate on larger teams"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--archs", help="comma-separated subset of GC,GCNN,GRNN")
        p.add_argument("--workers", type=int)
        if name != "sweep":
            p.add_argument("--checkpoint", action="append", metavar="ARCH=PATH",
                           help="use trained parameters instead of training the best cells")
        if name == "robustness":
            p.add_argument("--parameter", choices=["velocity", "radius", "both"], default="both")
            p.add_argument("--hide", action="append", default=[], help="architecture left out of the figure")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", parents=[common], help="reverse mode vs finite differences")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        settings = Settings(args)
        return args.func(args, settings)
    except (io.FormatError, ConfigurationError, ValueError, OSError, KeyError) as exc:
        print(f"flockgnn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
