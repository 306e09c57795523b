import csv
import json

import numpy as np
import pytest

from flockgnn import io
from flockgnn.cli import main, run_gradcheck
from flockgnn.controllers import backward
from flockgnn.flocking import FlockingConfig, cost, sample_initial_states

SMALL = {"n_agents": 6, "duration": 0.1}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "version": 1,
        "flocking": SMALL,
        "training": {"epochs": 2, "batch_size": 2},
        "experiment": {
            "n_realizations": 2, "n_train": 3, "n_valid": 2, "n_test": 2,
            "G_values": [2, 3], "K_values": [1, 2],
            "best": {"GC": [2, 2], "GCNN": [3, 2], "GRNN": [2, 2]},
            "velocity_values": [1.0, 2.0], "radius_values": [1.5, 2.5], "team_sizes": [6, 9],
        },
    }))
    return path


@pytest.fixture
def dataset(tmp_path, config):
    out = tmp_path / "d.flk"
    assert main(["generate", "--config", str(config), "--n-train", "3", "--n-valid", "2",
                 "--n-test", "2", "--seed", "4", "--out", str(out)]) == 0
    return out


def test_generate_is_byte_deterministic(tmp_path, config, dataset, capsys):
    again = tmp_path / "e.flk"
    main(["generate", "--config", str(config), "--n-train", "3", "--n-valid", "2",
          "--n-test", "2", "--seed", "4", "--out", str(again)])
    assert dataset.read_bytes() == again.read_bytes()
    data = io.read_dataset(dataset)
    assert (len(data.train), len(data.valid), len(data.test)) == (3, 2, 2)
    assert "expert cost" in capsys.readouterr().out


def test_train_is_byte_deterministic(tmp_path, config, dataset):
    outs = []
    for name in ("a", "b"):
        ckpt = tmp_path / f"{name}.flkm"
        assert main(["train", "--config", str(config), "--dataset", str(dataset), "--arch", "GRNN",
                     "-G", "3", "-K", "2", "--seed", "9", "--out", str(ckpt)]) == 0
        outs.append((ckpt.read_bytes(), ckpt.with_suffix(".log").read_bytes()))
    assert outs[0] == outs[1]
    params = io.parse_checkpoint(outs[0][0])
    assert (params.arch.value, params.n_outputs, params.n_taps) == ("GRNN", 3, 2)
    assert outs[0][1].decode().count("epoch") == 2


def test_eval_on_larger_team_and_arch_mismatch(tmp_path, config, dataset, capsys):
    ckpt = tmp_path / "m.flkm"
    main(["train", "--config", str(config), "--dataset", str(dataset), "--arch", "GCNN",
          "-G", "3", "-K", "2", "--out", str(ckpt)])
    report = tmp_path / "eval.csv"
    assert main(["eval", "--config", str(config), "--checkpoint", str(ckpt), "--n-agents", "12",
                 "--n-test", "2", "--out", str(report)]) == 0
    with open(report, newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1 and rows[0]["n_agents"] == "12" and rows[0]["arch"] == "GCNN"
    assert main(["eval", "--config", str(config), "--checkpoint", str(ckpt), "--arch", "GRNN"]) == 1
    assert "checkpoint holds GCNN" in capsys.readouterr().err


def test_zero_controller_eval_is_initial_cost_times_steps(tmp_path, config):
    report = tmp_path / "zero.csv"
    assert main(["eval", "--config", str(config), "--controller", "zero", "--n-test", "3",
                 "--seed", "2", "--out", str(report)]) == 0
    with open(report, newline="") as f:
        row = next(csv.DictReader(f))
    cfg = FlockingConfig(**SMALL, seed=2)
    initial = sample_initial_states(cfg, 3, np.random.default_rng(2))
    expected = np.mean([cost(s.velocities) * cfg.n_steps for s in initial])
    assert float(row["cost"]) == pytest.approx(expected, rel=1e-12)


def test_corrupted_checkpoint_is_an_error(tmp_path, config, dataset, capsys):
    bad = tmp_path / "bad.flkm"
    bad.write_bytes(b"NOPE" + bytes(40))
    assert main(["eval", "--config", str(config), "--checkpoint", str(bad)]) == 1
    assert "not an FLKM" in capsys.readouterr().err


def test_dataset_format_errors_exit_1(tmp_path, config):
    bad = tmp_path / "bad.flk"
    bad.write_bytes(b"FLK2" + bytes(100))
    assert main(["train", "--config", str(config), "--dataset", str(bad), "--out", str(tmp_path / "m.flkm")]) == 1


def test_unknown_config_key_exits_1(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"version": 1, "flocking": {"radius": 2.0}}))
    assert main(["gradcheck", "--config", str(path)]) == 1


def test_gradcheck_passes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    for arch in ("GC", "GCNN", "GRNN"):
        assert f"{arch}" in out
    assert "FAIL" not in out


def test_gradcheck_flags_a_perturbed_gradient():
    def perturbed(params, tape, dU):
        g = backward(params, tape, dU)
        return g.with_tensors({"input_bank": g.input_bank.taps * (1 + 1e-3)})

    ok, errors = run_gradcheck(grad_fn=perturbed)
    assert not ok and all(e > 1e-5 for e in errors.values())


def test_sweep_writes_csv_and_svg(tmp_path, config):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(config), "--archs", "GC,GCNN", "--out", str(out)]) == 0
    with open(out / "sweep.csv", newline="") as f:
        assert len(list(csv.DictReader(f))) == 2 * 2 * 2 * 2
    assert (out / "sweep.svg").read_bytes().count(b"<svg") == 1


def test_robustness_and_transfer_commands(tmp_path, config, dataset):
    ckpts = []
    for arch, G in (("GCNN", 3), ("GRNN", 2)):
        path = tmp_path / f"{arch}.flkm"
        main(["train", "--config", str(config), "--dataset", str(dataset), "--arch", arch,
              "-G", str(G), "-K", "2", "--out", str(path)])
        ckpts += ["--checkpoint", f"{arch}={path}"]
    out = tmp_path / "res"
    assert main(["robustness", "--config", str(config), "--archs", "GCNN,GRNN", *ckpts,
                 "--hide", "GRNN", "--out", str(out)]) == 0
    for name in ("velocity", "radius"):
        assert (out / f"robustness_{name}.svg").exists()
        with open(out / f"robustness_{name}.csv", newline="") as f:
            assert len(list(csv.DictReader(f))) == 2 * 2 * 2
    assert main(["transfer", "--config", str(config), "--archs", "GCNN,GRNN", *ckpts, "--out", str(out)]) == 0
    with open(out / "transfer.csv", newline="") as f:
        assert {r["n_agents"] for r in csv.DictReader(f)} == {"6", "9"}
    assert main(["transfer", "--config", str(config), "--archs", "GCNN,GRNN",
                 "--checkpoint", f"GRNN={tmp_path / 'GCNN.flkm'}", "--out", str(out)]) == 1
