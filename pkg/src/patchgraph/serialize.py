"""Binary containers and text dumps.

Single tensor file: magic ``PGT1``, rank (uint32 LE), extents (uint64
LE each), then the row-major float64 LE payload.

Archive file: magic ``PGA1``, format version (uint32 LE), a UTF-8 meta
text block (uint64 length prefix, key/value lines), the entry count
(uint64), a manifest of (name, rank, extents) records, then the
payloads in manifest order. Checkpoints store every parameter and BN
running buffer with the model config as meta; datasets store the
feature maps, labels, masks, and split with the generator spec as meta.

All writes are byte-deterministic given identical inputs.
"""

from __future__ import annotations

import struct

import numpy as np

from .config import dataclass_from_kv, dataclass_to_kv, format_kv, parse_kv_text
from .data import SyntheticDataset, SyntheticSpec
from .model import ModelConfig, ModelParams, init_model, named_buffers, named_parameters

TENSOR_MAGIC = b"PGT1"
ARCHIVE_MAGIC = b"PGA1"
ARCHIVE_VERSION = 1


class FormatError(ValueError):
    """File is not a valid patchgraph container."""


# ---------------------------------------------------------------------------
# single tensor


def save_tensor(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f8").tobytes())


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: not a patchgraph tensor file")
    (rank,) = struct.unpack_from("<I", blob, 4)
    shape = struct.unpack_from(f"<{rank}Q", blob, 8)
    offset = 8 + 8 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = offset + 8 * count
    if len(blob) != expected:
        raise FormatError(f"{path}: payload size mismatch ({len(blob)} vs {expected})")
    data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
    return data.reshape(shape).astype(np.float64)


def dump_csv(path, arr: np.ndarray) -> None:
    """Human-readable dump of a 1-D or 2-D array, full float64 precision."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise FormatError(f"CSV dump supports 1-D/2-D tensors, got shape {arr.shape}")
    with open(path, "w", encoding="utf-8") as fh:
        for row in arr:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# named-tensor archive


def save_archive(path, meta_text: str, entries: list[tuple[str, np.ndarray]]) -> None:
    meta = meta_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<I", ARCHIVE_VERSION))
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<Q", len(entries)))
        for name, arr in entries:
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            fh.write(struct.pack("<Q", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        for _, arr in entries:
            fh.write(np.ascontiguousarray(arr, dtype=np.float64).astype("<f8").tobytes())


def load_archive(path) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != ARCHIVE_MAGIC:
        raise FormatError(f"{path}: not a patchgraph archive")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != ARCHIVE_VERSION:
        raise FormatError(f"{path}: unsupported archive version {version}")
    pos = 8
    (meta_len,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    meta_text = blob[pos : pos + meta_len].decode("utf-8")
    pos += meta_len
    (count,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    manifest = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        manifest.append((name, shape))
    entries = {}
    for name, shape in manifest:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        entries[name] = (
            np.frombuffer(blob, dtype="<f8", count=n, offset=pos)
            .reshape(shape)
            .astype(np.float64)
        )
        pos += 8 * n
    if pos != len(blob):
        raise FormatError(f"{path}: trailing bytes after payloads")
    return meta_text, entries


def archive_manifest(path) -> list[tuple[str, tuple]]:
    """Name -> shape listing without materializing payloads."""
    meta, entries = load_archive(path)
    return [(name, arr.shape) for name, arr in entries.items()]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    meta = format_kv(dataclass_to_kv(config, "model."))
    entries = [(name, t.data) for name, t in named_parameters(params)]
    entries += [(name, arr) for name, arr in named_buffers(params)]
    save_archive(path, meta, entries)


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    meta, entries = load_archive(path)
    config = dataclass_from_kv(ModelConfig, parse_kv_text(meta), "model.")
    params = init_model(config)
    expected = [name for name, _ in named_parameters(params)]
    expected += [name for name, _ in named_buffers(params)]
    if set(expected) != set(entries):
        missing = set(expected) - set(entries)
        extra = set(entries) - set(expected)
        raise FormatError(
            f"{path}: checkpoint entries do not match model "
            f"(missing {sorted(missing)}, unexpected {sorted(extra)})"
        )
    for name, t in named_parameters(params):
        if t.data.shape != entries[name].shape:
            raise FormatError(
                f"{path}: {name} shape {entries[name].shape} != {t.data.shape}"
            )
        t.data = np.ascontiguousarray(entries[name])
    params.bn.running_mean = entries["bn.running_mean"].copy()
    params.bn.running_var = entries["bn.running_var"].copy()
    return params, config


# ---------------------------------------------------------------------------
# datasets


def save_dataset(path, dataset: SyntheticDataset) -> None:
    meta = format_kv(dataclass_to_kv(dataset.spec, "data."))
    entries = [
        ("features", dataset.features),
        ("labels", dataset.labels.astype(np.float64)),
        ("is_query", dataset.is_query.astype(np.float64)),
        ("noise_mask", dataset.noise_mask.astype(np.float64)),
        ("signal_mask", dataset.signal_mask.astype(np.float64)),
    ]
    save_archive(path, meta, entries)


def load_dataset(path) -> SyntheticDataset:
    meta, entries = load_archive(path)
    spec = dataclass_from_kv(SyntheticSpec, parse_kv_text(meta), "data.")
    required = {"features", "labels", "is_query", "noise_mask", "signal_mask"}
    if not required <= set(entries):
        raise FormatError(f"{path}: dataset archive missing {sorted(required - set(entries))}")
    return SyntheticDataset(
        features=entries["features"],
        labels=entries["labels"].astype(np.int64),
        is_query=entries["is_query"].astype(bool),
        noise_mask=entries["noise_mask"].astype(bool),
        signal_mask=entries["signal_mask"].astype(bool),
        spec=spec,
    )
