"""Binary checkpoint format for policy parameters (and optional extras).

Layout: 8-byte magic, little-endian u32 format version, u32 header length,
canonical-JSON header, then the raw little-endian float64 tensor payload in
manifest order. The header embeds the architecture descriptor, the tensor
manifest (name, shape), any extra arrays (optimizer state, ...), and a free
metadata dict. Canonical JSON plus fixed payload order makes save->load->save
byte-identical.
"""

import json

import numpy as np

from .errors import ArchitectureMismatchError, CheckpointError
from .policy import PolicyArch, PolicyParams, _param_specs

MAGIC = b"GAPFLOWC"
VERSION = 1


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, params, extras=None, meta=None):
    """Write params (+ extra arrays such as optimizer state) to path."""
    extras = extras or {}
    names = params.names()
    missing = [n for n in names if n not in params.tensors]
    if missing:
        raise CheckpointError(f"params missing tensors: {missing}")
    header = {
        "arch": params.arch.to_dict(),
        "tensors": [[n, list(params.tensors[n].shape)] for n in names],
        "extras": [[n, list(np.asarray(extras[n]).shape)] for n in sorted(extras)],
        "meta": meta or {},
    }
    blob = _canonical_json(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(VERSION).tobytes())
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params.tensors[n], dtype="<f8").tobytes())
        for n in sorted(extras):
            fh.write(np.ascontiguousarray(extras[n], dtype="<f8").tobytes())


def load_checkpoint(path, expected_arch=None):
    """Read a checkpoint; returns (PolicyParams, extras dict, meta dict).

    Raises CheckpointError on corrupt/truncated files and
    ArchitectureMismatchError when expected_arch differs from the stored one.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a gapflow checkpoint (bad magic)")
    version = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    hlen = int(np.frombuffer(raw[12:16], dtype="<u4")[0])
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
        arch = PolicyArch.from_dict(header["arch"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if expected_arch is not None and arch != expected_arch:
        raise ArchitectureMismatchError(
            f"{path}: checkpoint architecture {arch} does not match expected {expected_arch}")
    stored = {n: tuple(s) for n, s in header["tensors"]}
    wanted = {n: s for n, s in _param_specs(arch)}
    if stored != wanted:
        raise CheckpointError(f"{path}: tensor manifest does not match the architecture")

    offset = 16 + hlen
    tensors = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload at tensor {name!r}")
        tensors[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    extras = {}
    for name, shape in header["extras"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated payload at extra {name!r}")
        extras[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return PolicyParams(arch=arch, tensors=tensors), extras, header.get("meta", {})
