"""Bit-exact binary file formats and the dataset manifest.

All integers and floats are little-endian. Point data is stored as float32
on disk while the library computes in float64; a write/read round trip is
exact at float32 precision.

PCSEQ (one point cloud sequence per record, records concatenate freely)::

    magic    4s   = b"PCSQ"
    version  u16  = 1
    T        u16  number of frames
    dims     u8   = 3 coordinate dimensions
    channels u16  feature channels per point
    frames   T times:
        count  u32
        coords count * 3 float32
        feats  count * channels float32

PCFL (one backward flow field)::

    magic    4s   = b"PCFL"
    version  u16  = 1
    source_t u16  frame the flow leaves from (toward source_t - 1)
    count    u32
    vectors  count * 3 float32

Checkpoint (MTRW)::

    magic    4s   = b"MTRW"
    version  u16  = 1
    arch     u16 length + utf-8 architecture name
    config   u32 length + utf-8 JSON configuration blob
    count    u32 parameters
    entries  count times:
        name   u16 length + utf-8
        ndim   u8, then ndim * u32 dims
        values float64 raw data

The manifest is a tab-separated text file with header
``id  split  label  file  offset`` locating each PCSEQ record.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Frame, Sequence
from .grouping import FlowField
from .util import FormatError, InputError

PCSEQ_MAGIC = b"PCSQ"
PCFL_MAGIC = b"PCFL"
CHECKPOINT_MAGIC = b"MTRW"
FORMAT_VERSION = 1


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"unexpected end of file (wanted {count} bytes, got {len(data)})")
    return data


def _read_struct(fh, fmt: str):
    return struct.unpack(fmt, _read_exact(fh, struct.calcsize(fmt)))


def write_pcseq(fh, seq: Sequence) -> int:
    """Append one sequence record; returns the number of bytes written."""
    channels = seq.num_channels
    for fr in seq:
        if fr.num_channels != channels:
            raise InputError("all frames must share one feature channel count")
    payload = [struct.pack("<4sHHBH", PCSEQ_MAGIC, FORMAT_VERSION, len(seq), 3, channels)]
    for fr in seq:
        payload.append(struct.pack("<I", fr.num_points))
        payload.append(fr.coords.astype("<f4").tobytes())
        payload.append(fr.features.astype("<f4").tobytes())
    blob = b"".join(payload)
    fh.write(blob)
    return len(blob)


def read_pcseq(fh) -> Sequence:
    """Read one sequence record from the current position."""
    magic, version, frames, dims, channels = _read_struct(fh, "<4sHHBH")
    if magic != PCSEQ_MAGIC:
        raise FormatError(f"bad PCSEQ magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported PCSEQ version {version}")
    if dims != 3:
        raise FormatError(f"unsupported coordinate dimensionality {dims}")
    out = []
    for t in range(1, frames + 1):
        (count,) = _read_struct(fh, "<I")
        coords = np.frombuffer(_read_exact(fh, count * 3 * 4), dtype="<f4")
        feats = np.frombuffer(_read_exact(fh, count * channels * 4), dtype="<f4")
        out.append(Frame(
            coords.reshape(count, 3).astype(np.float64),
            feats.reshape(count, channels).astype(np.float64),
            timestamp=t,
        ))
    return Sequence(tuple(out))


def write_pcseq_file(path, seqs) -> list:
    """Write sequences to one file; returns each record's byte offset."""
    offsets = []
    position = 0
    with open(path, "wb") as fh:
        for seq in seqs:
            offsets.append(position)
            position += write_pcseq(fh, seq)
    return offsets


def read_pcseq_file(path) -> list:
    """Read every record in a PCSEQ file."""
    seqs = []
    size = Path(path).stat().st_size
    with open(path, "rb") as fh:
        while fh.tell() < size:
            seqs.append(read_pcseq(fh))
    return seqs


def read_pcseq_at(path, offset: int) -> Sequence:
    with open(path, "rb") as fh:
        fh.seek(offset)
        return read_pcseq(fh)


def write_pcfl(path, flow: FlowField):
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHHI", PCFL_MAGIC, FORMAT_VERSION,
                             flow.source_t, flow.vectors.shape[0]))
        fh.write(flow.vectors.astype("<f4").tobytes())


def read_pcfl(path) -> FlowField:
    with open(path, "rb") as fh:
        magic, version, source_t, count = _read_struct(fh, "<4sHHI")
        if magic != PCFL_MAGIC:
            raise FormatError(f"bad PCFL magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported PCFL version {version}")
        vectors = np.frombuffer(_read_exact(fh, count * 3 * 4), dtype="<f4")
        trailing = fh.read(1)
        if trailing:
            raise FormatError("trailing bytes after PCFL payload")
    return FlowField(source_t=source_t, vectors=vectors.reshape(count, 3).astype(np.float64))


def save_checkpoint(path, arch: str, config: dict, params: dict):
    """Persist named parameters with an architecture tag and a config blob."""
    arch_bytes = arch.encode("utf-8")
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sH", CHECKPOINT_MAGIC, FORMAT_VERSION))
        fh.write(struct.pack("<H", len(arch_bytes)) + arch_bytes)
        fh.write(struct.pack("<I", len(config_bytes)) + config_bytes)
        fh.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            values = value.values if hasattr(value, "values") else np.asarray(value)
            values = values.astype(np.float64)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)) + name_bytes)
            fh.write(struct.pack("<B", values.ndim))
            fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
            fh.write(values.astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns ``(arch, config, {name: float64 array})``."""
    with open(path, "rb") as fh:
        magic, version = _read_struct(fh, "<4sH")
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (arch_len,) = _read_struct(fh, "<H")
        arch = _read_exact(fh, arch_len).decode("utf-8")
        (config_len,) = _read_struct(fh, "<I")
        try:
            config = json.loads(_read_exact(fh, config_len).decode("utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"corrupt checkpoint config blob: {exc}")
        (count,) = _read_struct(fh, "<I")
        params = {}
        for _ in range(count):
            (name_len,) = _read_struct(fh, "<H")
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = _read_struct(fh, "<B")
            shape = _read_struct(fh, f"<{ndim}I") if ndim else ()
            size = int(np.prod(shape, dtype=np.int64)) if shape else 1
            values = np.frombuffer(_read_exact(fh, size * 8), dtype="<f8")
            params[name] = values.reshape(shape).astype(np.float64)
        trailing = fh.read(1)
        if trailing:
            raise FormatError("trailing bytes after checkpoint payload")
    return arch, config, params


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    split: str
    label: int
    file: str
    offset: int


MANIFEST_HEADER = ("id", "split", "label", "file", "offset")


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(MANIFEST_HEADER) + "\n")
        for e in entries:
            fh.write(f"{e.sample_id}\t{e.split}\t{e.label}\t{e.file}\t{e.offset}\n")


def read_manifest(path) -> list:
    entries = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != MANIFEST_HEADER:
            raise FormatError(f"bad manifest header {header}")
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(MANIFEST_HEADER):
                raise FormatError(f"manifest line {line_no} has {len(parts)} fields")
            sample_id, split, label, file, offset = parts
            try:
                entries.append(ManifestEntry(sample_id, split, int(label), file, int(offset)))
            except ValueError as exc:
                raise FormatError(f"manifest line {line_no}: {exc}")
    return entries
