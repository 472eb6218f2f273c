"""Noise-bank files and report emission.

Noise-bank binary layout (all integers little-endian)::

    b"UNLB"            magic
    u32                format version (1)
    u64                sample count N
    u32                rank r of one sample
    u32 * r            sample dimensions
    f64                protective radius
    f64 * N*prod(dims) payload, row-major
    u32                CRC-32 of the payload bytes

Fields the layout has no room for (dataset hash, method, seed, PGD schedule)
go in a JSON sidecar at ``<path>.json``.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from . import nn
from .errors import CorruptionError, InputContractError, ParseError, VersionError
from .generator import NoiseBank
from .harness import ReportTable
from .perturb import PerturbationBudget

MAGIC = b"UNLB"
VERSION = 1


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def encode_noise_bank(bank: NoiseBank) -> bytes:
    payload = np.ascontiguousarray(bank.deltas, dtype="<f8").tobytes()
    dims = bank.sample_shape
    header = MAGIC + struct.pack(f"<IQI{len(dims)}Id", VERSION, len(bank), len(dims), *dims,
                                 bank.radius)
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def bank_metadata(bank: NoiseBank) -> dict:
    b = bank.budget
    return {"dataset_hash": bank.dataset_hash, "method": bank.method, "seed": bank.seed,
            "radius": b.radius, "step_size": b.step_size, "steps": b.steps, "init": b.init,
            "count": len(bank), "sample_shape": list(bank.sample_shape)}


def save_noise_bank(bank: NoiseBank, path) -> None:
    path = Path(path)
    path.write_bytes(encode_noise_bank(bank))
    sidecar_path(path).write_text(json.dumps(bank_metadata(bank), sort_keys=True, indent=1) + "\n")


def decode_noise_bank(raw: bytes, meta: dict, name="<bytes>") -> NoiseBank:
    def need(end, what):
        if len(raw) < end:
            raise ParseError(f"{name}: truncated {what} at byte {len(raw)}", len(raw))

    need(4, "magic")
    if raw[:4] != MAGIC:
        raise ParseError(f"{name}: bad magic {raw[:4]!r} at byte 0", 0)
    need(20, "header")
    version, count, rank = struct.unpack_from("<IQI", raw, 4)
    if version != VERSION:
        raise VersionError(f"{name}: unsupported noise-bank version {version} (byte 4)")
    pos = 20
    need(pos + 4 * rank + 8, "header")
    dims = struct.unpack_from(f"<{rank}I", raw, pos)
    pos += 4 * rank
    (radius,) = struct.unpack_from("<d", raw, pos)
    pos += 8
    n_values = count * int(np.prod(dims, dtype=np.int64))
    end = pos + 8 * n_values
    need(end + 4, "payload")
    if len(raw) != end + 4:
        raise ParseError(f"{name}: {len(raw) - end - 4} trailing bytes at byte {end + 4}", end + 4)
    payload = raw[pos:end]
    (crc,) = struct.unpack_from("<I", raw, end)
    if zlib.crc32(payload) != crc:
        raise CorruptionError(f"{name}: payload CRC mismatch (stored {crc:#010x})")
    deltas = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape((count, *dims))
    # the CRC covers only the payload; the sidecar vouches for the header fields
    for field, value in (("radius", radius), ("count", count), ("sample_shape", list(dims))):
        if field in meta and meta[field] != value:
            raise CorruptionError(f"{name}: header {field} {value!r} disagrees with sidecar "
                                  f"{meta[field]!r}")
    try:
        budget = PerturbationBudget(radius, meta["step_size"], meta["steps"], meta["init"])
        return NoiseBank(int(meta["dataset_hash"]), deltas, budget, str(meta["method"]),
                         int(meta["seed"]))
    except KeyError as exc:
        raise ParseError(f"{name}: sidecar metadata lacks {exc}") from None


def load_noise_bank(path) -> NoiseBank:
    """Read a bank; magic, version and CRC are checked before anything is returned."""
    path = Path(path)
    meta_file = sidecar_path(path)
    if not meta_file.exists():
        raise InputContractError(f"{path}: metadata sidecar {meta_file} is missing")
    try:
        meta = json.loads(meta_file.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{meta_file}: {exc}", exc.pos) from None
    return decode_noise_bank(path.read_bytes(), meta, str(path))


def write_report(table: ReportTable, path, format: str = "csv") -> None:
    if format == "csv":
        text = table.to_csv()
    elif format == "text":
        text = table.to_text()
    else:
        raise InputContractError(f"unknown report format {format!r}")
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise InputContractError(f"cannot write report {path}: {exc.strerror}") from None


def save_model(model, path) -> None:
    """JSON with ``repr`` floats, so parameters survive the round trip exactly."""
    doc = {"arch": str(model.arch), "seed": model.seed,
           "params": [p.tolist() for p in model.params]}
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
        arch = nn.Architecture.parse(doc["arch"])
        params = tuple(np.array(p, dtype=np.float64) for p in doc["params"])
    except OSError as exc:
        raise InputContractError(f"cannot read model {path}: {exc.strerror}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed model file ({exc})") from None
    return nn.ModelState(arch, params, doc.get("seed"))
