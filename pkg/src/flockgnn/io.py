"""Binary containers for datasets (FLK1) and checkpoints (FLKM), plus JSON run configs.

All integers and floats are little-endian.

FLK1 layout::

    b"FLK1"  u32 version
    u64 N, u64 T, u64 F, u64 G, f64 Ts, f64 R, u64 seed,
    u64 n_train, u64 n_valid, u64 n_test
    per trajectory (train, then valid, then test):
        f64 positions[T, N, 2], f64 velocities[T, N, 2],
        f64 features[T, N, F], f64 actions[T, N, G]
        per step: u32 edge_count, then edge_count pairs of u32 (src, dst)

FLKM layout::

    b"FLKM"  u32 version  u8 arch  u32 G  u32 K  u32 H  u32 n_tensors
    per tensor: u32 ndim, u32 dims[ndim], f64 data
    u32 crc32 of everything before it
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .controllers import Arch, ControllerParams, N_ACTIONS, N_FEATURES
from .flocking import SPLITS, Dataset, FlockingConfig, TrajectoryRecord

DATASET_MAGIC = b"FLK1"
CHECKPOINT_MAGIC = b"FLKM"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1

_HEADER = struct.Struct("<QQQQddQQQQ")
_F64 = np.dtype("<f8")
_U32 = np.dtype("<u4")

# flocking parameters that are not part of the FLK1 header
_DATASET_DEFAULTS = FlockingConfig()


class FormatError(ValueError):
    """Unreadable, corrupted or wrong-version file."""


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError("unexpected end of file")
    return data


def _array(f: BinaryIO, dtype: np.dtype, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape))
    return np.frombuffer(_read_exact(f, count * dtype.itemsize), dtype=dtype).reshape(shape).astype(
        dtype.newbyteorder("=")
    )


def _edges_from_adjacency(A: np.ndarray) -> np.ndarray:
    dst, src = np.nonzero(A)
    return np.stack([src, dst], axis=1).astype(_U32)


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    cfg = dataset.config
    splits = [dataset.split(name) for name in SPLITS]
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", DATASET_VERSION))
        f.write(_HEADER.pack(cfg.n_agents, cfg.n_steps, N_FEATURES, N_ACTIONS, cfg.sampling_time,
                             cfg.comm_radius, dataset.seed, *(len(s) for s in splits)))
        for records in splits:
            for rec in records:
                for arr in (rec.positions, rec.velocities, rec.features, rec.actions):
                    f.write(np.ascontiguousarray(arr, dtype=_F64).tobytes())
                for A in rec.graphs:
                    edges = _edges_from_adjacency(A)
                    f.write(struct.pack("<I", len(edges)))
                    f.write(edges.tobytes())


def read_dataset(path: str | Path, config: FlockingConfig | None = None) -> Dataset:
    """Load an FLK1 file. Header values override the matching fields of ``config``."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != DATASET_MAGIC:
            raise FormatError(f"{path}: not an FLK1 dataset")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != DATASET_VERSION:
            raise FormatError(f"{path}: unsupported dataset version {version}")
        N, T, F, G, ts, radius, seed, *counts = _HEADER.unpack(_read_exact(f, _HEADER.size))
        if F != N_FEATURES or G != N_ACTIONS:
            raise FormatError(f"{path}: expected F={N_FEATURES}, G={N_ACTIONS}, got F={F}, G={G}")
        base = config or _DATASET_DEFAULTS
        cfg = dataclasses.replace(base, n_agents=N, sampling_time=ts, duration=T * ts,
                                  comm_radius=radius, seed=seed)
        if cfg.n_steps != T:
            raise FormatError(f"{path}: inconsistent step count")
        data = Dataset(config=cfg, seed=seed)
        for name, count in zip(SPLITS, counts):
            records = data.split(name)
            for _ in range(count):
                pos = _array(f, _F64, (T, N, 2))
                vel = _array(f, _F64, (T, N, 2))
                feats = _array(f, _F64, (T, N, F))
                acts = _array(f, _F64, (T, N, G))
                graphs = np.zeros((T, N, N), dtype=bool)
                for t in range(T):
                    (n_edges,) = struct.unpack("<I", _read_exact(f, 4))
                    edges = _array(f, _U32, (n_edges, 2)).astype(np.intp)
                    if n_edges and edges.max() >= N:
                        raise FormatError(f"{path}: edge index out of range")
                    graphs[t, edges[:, 1], edges[:, 0]] = True
                records.append(TrajectoryRecord(pos, vel, feats, acts, graphs))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after the last trajectory")
    return data


def checkpoint_bytes(params: ControllerParams) -> bytes:
    tensors = params.tensors()
    K = params.n_taps
    G = params.n_outputs
    H = params.n_hidden
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<IBIIII", CHECKPOINT_VERSION, params.arch.code, G, K, H, len(tensors)),
    ]
    for value in tensors.values():
        parts.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype=_F64).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def write_checkpoint(params: ControllerParams, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def parse_checkpoint(blob: bytes) -> ControllerParams:
    if len(blob) < 8 or blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not an FLKM checkpoint")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise FormatError("checkpoint CRC mismatch")
    head = struct.Struct("<IBIIII")
    version, arch_code, G, K, H, n_tensors = head.unpack_from(body, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if arch_code >= len(Arch):
        raise FormatError(f"unknown architecture id {arch_code}")
    arch = Arch.from_code(arch_code)
    names = ["input_bank"] + (["hidden_bank", "output_bank"] if arch is Arch.GRNN else [])
    names += ["readout_weight", "readout_bias"]
    if n_tensors != len(names):
        raise FormatError(f"{arch.value} checkpoint must hold {len(names)} tensors, found {n_tensors}")
    offset = 4 + head.size
    tensors = {}
    try:
        for name in names:
            (ndim,) = struct.unpack_from("<I", body, offset)
            shape = struct.unpack_from(f"<{ndim}I", body, offset + 4)
            offset += 4 + 4 * ndim
            count = int(np.prod(shape))
            data = np.frombuffer(body, dtype=_F64, count=count, offset=offset)
            tensors[name] = data.reshape(shape).astype(np.float64)
            offset += 8 * count
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated checkpoint: {exc}") from exc
    if offset != len(body):
        raise FormatError("checkpoint has trailing bytes")
    try:
        params = ControllerParams.from_tensors(arch, tensors)
    except ValueError as exc:
        raise FormatError(f"inconsistent checkpoint tensors: {exc}") from exc
    if (params.n_taps, params.n_outputs, params.n_hidden) != (K, G, H):
        raise FormatError("checkpoint header disagrees with its tensors")
    return params


def read_checkpoint(path: str | Path) -> ControllerParams:
    return parse_checkpoint(Path(path).read_bytes())


# --- JSON run configuration -------------------------------------------------

CONFIG_VERSION = 1


def _strict(cls, section: str, values: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise FormatError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
    return values


def load_run_config(path: str | Path) -> dict:
    """Parse a JSON run config into ``{"flocking": {...}, "training": {...}, ...}`` overrides.

    Sections are checked against the dataclasses they feed; paths are resolved
    relative to the config file.
    """
    from .experiments import ExperimentSpec
    from .training import TrainConfig

    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object")
    if doc.get("version") != CONFIG_VERSION:
        raise FormatError(f"{path}: expected \"version\": {CONFIG_VERSION}")
    sections = {"flocking": FlockingConfig, "training": TrainConfig, "experiment": ExperimentSpec}
    unknown = sorted(set(doc) - set(sections) - {"version", "paths"})
    if unknown:
        raise FormatError(f"{path}: unknown top-level key(s): {', '.join(unknown)}")
    out = {}
    for name, cls in sections.items():
        section = doc.get(name, {})
        if not isinstance(section, dict):
            raise FormatError(f"{path}: '{name}' must be an object")
        out[name] = _strict(cls, name, section)
    paths = doc.get("paths", {})
    if not isinstance(paths, dict):
        raise FormatError(f"{path}: 'paths' must be an object")
    out["paths"] = {k: (path.parent / v).resolve() for k, v in paths.items()}
    return out
