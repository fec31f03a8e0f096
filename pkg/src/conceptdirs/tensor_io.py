"""File formats: latent matrices, pair manifests, probability/effect tables.

Latent file layout (all integers little-endian)::

    b"CDLC" | u16 version=1 | u64 N | u64 d | N*d f32 row-major |
    u64 id_count | id_count * (u32 byte_len | utf-8 bytes)

Everything else is UTF-8 text: tab-separated, ``#`` starts a comment line.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadMagic,
    ClassEqualsTarget,
    DimMismatch,
    DuplicateId,
    DuplicatePair,
    FormatError,
    IoFailure,
    NonFiniteValue,
    ShapeMismatch,
    UnresolvedId,
    UnsupportedVersion,
)

MAGIC = b"CDLC"
VERSION = 1
_HEADER = struct.Struct("<4sHQQ")
HEADER_SIZE = _HEADER.size  # 22 bytes
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")


@dataclass(frozen=True, eq=False)
class LatentMatrix:
    """N x d float32 matrix with one string id per row."""

    ids: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        data = np.array(self.data, dtype=np.float32, order="C", copy=True)
        if data.ndim != 2:
            raise ShapeMismatch(f"latent data must be 2-D, got shape {data.shape}")
        if data.shape[1] < 1:
            raise ShapeMismatch("latent dimension d must be >= 1")
        if len(ids) != data.shape[0]:
            raise ShapeMismatch(
                f"{len(ids)} ids for {data.shape[0]} rows",
                expected=data.shape[0],
                actual=len(ids),
            )
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DuplicateId(f"duplicate sample id {dup!r}")
        data.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @cached_property
    def index(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.ids)}

    def row(self, sample_id: str) -> np.ndarray:
        try:
            return self.data[self.index[sample_id]]
        except KeyError:
            raise UnresolvedId(sample_id) from None

    def __eq__(self, other):
        if not isinstance(other, LatentMatrix):
            return NotImplemented
        return (
            self.ids == other.ids
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )

    __hash__ = None

    def __repr__(self):
        return f"LatentMatrix(n={self.n}, d={self.d})"


# --- low-level helpers --------------------------------------------------------

def _atomic_write(path, payload: bytes):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(path, exc) from exc


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(path, exc) from exc


def _read_lines(path) -> list[str]:
    raw = _read_bytes(path)
    try:
        return raw.decode("utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not valid UTF-8 ({exc})") from exc


def write_text(path, text: str):
    _atomic_write(path, text.encode("utf-8"))


def write_json(path, obj):
    write_text(path, dumps_json(obj))


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def read_json(path):
    try:
        return json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def file_sha256(path) -> str:
    return hashlib.sha256(_read_bytes(path)).hexdigest()


# --- latent matrices ----------------------------------------------------------

def encode_latent_matrix(m: LatentMatrix) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, m.n, m.d), m.data.astype("<f4").tobytes(order="C")]
    parts.append(_U64.pack(len(m.ids)))
    for sid in m.ids:
        raw = sid.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
    return b"".join(parts)


def decode_latent_matrix(buf: bytes, source="<bytes>") -> LatentMatrix:
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{source}: not a latent file (bad magic {buf[:4]!r})")
    if len(buf) < HEADER_SIZE:
        raise ShapeMismatch(
            f"{source}: header truncated, expected {HEADER_SIZE} bytes, got {len(buf)}",
            expected=HEADER_SIZE,
            actual=len(buf),
        )
    _, version, n, d = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"{source}: latent format version {version}, expected {VERSION}")
    if d < 1:
        raise ShapeMismatch(f"{source}: header declares d={d}, must be >= 1")
    expected = n * d * 4
    available = len(buf) - HEADER_SIZE
    if available < expected:
        raise ShapeMismatch(
            f"{source}: payload for N={n}, d={d} needs {expected} bytes, found {available}",
            expected=expected,
            actual=available,
        )
    data = np.frombuffer(buf, dtype="<f4", count=n * d, offset=HEADER_SIZE).reshape(n, d)
    finite = np.isfinite(data).all(axis=1)
    if not finite.all():
        row = int(np.argmin(finite))
        raise NonFiniteValue(f"{source}: non-finite value in row {row}", row=row)

    pos = HEADER_SIZE + expected

    def take(size, what):
        nonlocal pos
        if pos + size > len(buf):
            raise ShapeMismatch(
                f"{source}: id table truncated while reading {what}",
                expected=pos + size,
                actual=len(buf),
            )
        chunk = buf[pos : pos + size]
        pos += size
        return chunk

    (count,) = _U64.unpack(take(8, "id count"))
    if count != n:
        raise ShapeMismatch(f"{source}: id table has {count} entries for N={n}", expected=n, actual=count)
    ids = []
    for i in range(count):
        (length,) = _U32.unpack(take(4, f"length of id {i}"))
        try:
            ids.append(take(length, f"id {i}").decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"{source}: id {i} is not valid UTF-8") from exc
    if pos != len(buf):
        raise ShapeMismatch(
            f"{source}: {len(buf) - pos} trailing bytes after id table",
            expected=pos,
            actual=len(buf),
        )
    return LatentMatrix(ids, data.astype(np.float32))


def read_latent_matrix(path) -> LatentMatrix:
    return decode_latent_matrix(_read_bytes(path), source=str(path))


def write_latent_matrix(m: LatentMatrix, path):
    _atomic_write(path, encode_latent_matrix(m))


def latent_file_size(n: int, d: int, ids: Iterable[str]) -> int:
    """Exact byte size of a latent file with the given shape and ids."""
    return HEADER_SIZE + n * d * 4 + 8 + sum(4 + len(s.encode("utf-8")) for s in ids)


def read_latent_text(path) -> LatentMatrix:
    """Import a small hand-written fixture: ``id v1 v2 ...`` per line."""
    ids, rows = [], []
    for lineno, line in enumerate(_read_lines(path), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        try:
            values = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise FormatError(str(exc), line=lineno) from exc
        if not values:
            raise FormatError("row has an id but no values", line=lineno)
        if rows and len(values) != len(rows[0]):
            raise FormatError(f"expected {len(rows[0])} values, got {len(values)}", line=lineno)
        if not all(np.isfinite(values)):
            raise NonFiniteValue(f"{path}: non-finite value at line {lineno}", row=len(rows))
        ids.append(fields[0])
        rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no rows; use the binary format for empty matrices")
    return LatentMatrix(ids, np.array(rows))


def load_latents(path) -> LatentMatrix:
    """Read a binary latent file, or a text fixture when the magic is absent and the suffix is .txt/.tsv."""
    if Path(path).suffix in {".txt", ".tsv"}:
        return read_latent_text(path)
    return read_latent_matrix(path)


# --- pair manifests -----------------------------------------------------------

@dataclass(frozen=True)
class PairEntry:
    factual_id: str
    counterfactual_id: str
    predicted_class: str
    target_class: str
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class PairManifest:
    entries: tuple[PairEntry, ...]
    path: str | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = {}
        for e in self.entries:
            if e.predicted_class == e.target_class:
                raise ClassEqualsTarget(
                    f"predicted class {e.predicted_class!r} equals target class", line=e.line
                )
            key = (e.factual_id, e.counterfactual_id)
            if key in seen:
                raise DuplicatePair(
                    f"pair {key[0]!r} -> {key[1]!r} already listed at line {seen[key]}", line=e.line
                )
            seen[key] = e.line

    def __len__(self):
        return len(self.entries)

    def targets(self) -> list[str]:
        return list(dict.fromkeys(e.target_class for e in self.entries))

    def for_target(self, target: str) -> "PairManifest":
        return PairManifest(tuple(e for e in self.entries if e.target_class == target), self.path)

    def validate_against(self, factual: LatentMatrix, counterfactual: LatentMatrix):
        for e in self.entries:
            if e.factual_id not in factual.index:
                raise UnresolvedId(e.factual_id, "factual matrix")
            if e.counterfactual_id not in counterfactual.index:
                raise UnresolvedId(e.counterfactual_id, "counterfactual matrix")


def parse_pair_manifest(lines: Sequence[str], source=None) -> PairManifest:
    entries = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in line.rstrip("\r\n").split("\t")]
        if len(fields) != 4 or not all(fields):
            raise FormatError(f"expected 4 non-empty tab-separated fields, got {len(fields)}", line=lineno)
        entries.append(PairEntry(*fields, line=lineno))
    return PairManifest(tuple(entries), source)


def load_pair_manifest(path, factual: LatentMatrix | None = None, counterfactual: LatentMatrix | None = None) -> PairManifest:
    manifest = parse_pair_manifest(_read_lines(path), source=str(path))
    if factual is not None and counterfactual is not None:
        manifest.validate_against(factual, counterfactual)
    return manifest


def write_pair_manifest(manifest: PairManifest, path):
    lines = ["# factual_id\tcounterfactual_id\tpredicted_class\ttarget_class"]
    lines += [
        f"{e.factual_id}\t{e.counterfactual_id}\t{e.predicted_class}\t{e.target_class}"
        for e in manifest.entries
    ]
    write_text(path, "\n".join(lines) + "\n")


# --- probability and effect tables -----------------------------------------

def _format_row(sample_id, values) -> str:
    return "\t".join([sample_id] + [repr(float(v)) for v in values])


def write_prob_table(table, path):
    lines = ["\t".join(table.classes)]
    lines += [_format_row(sid, row) for sid, row in zip(table.ids, table.probs)]
    write_text(path, "\n".join(lines) + "\n")


def _parse_numeric_table(path):
    lines = [(i, l) for i, l in enumerate(_read_lines(path), start=1) if l.strip() and not l.startswith("#")]
    if not lines:
        raise FormatError(f"{path}: missing header line")
    header = lines[0][1].rstrip("\r\n").split("\t")
    ids, rows = [], []
    for lineno, line in lines[1:]:
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) != len(header) + 1:
            raise FormatError(f"expected id + {len(header)} values, got {len(fields)} fields", line=lineno)
        try:
            rows.append([float(v) for v in fields[1:]])
        except ValueError as exc:
            raise FormatError(str(exc), line=lineno) from exc
        ids.append(fields[0])
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return header, ids, data


def read_prob_table(path):
    from .traversal import ProbTable

    classes, ids, probs = _parse_numeric_table(path)
    return ProbTable(ids, classes, probs)


def write_effect_table(table, path):
    lines = ["\t".join(f"c{k}" for k in range(table.k))]
    lines += [_format_row(sid, row) for sid, row in zip(table.ids, table.effects)]
    write_text(path, "\n".join(lines) + "\n")


def read_effect_table(path):
    from .concept_metrics import EffectTable

    _, ids, effects = _parse_numeric_table(path)
    return EffectTable(ids, effects)


# --- direction sets -----------------------------------------------------------

def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_direction_set(ds, path):
    ids = [f"c{k}" for k in range(ds.k)]
    write_latent_matrix(LatentMatrix(ids, ds.directions), path)
    write_json(_sidecar(path), ds.metadata())


def read_direction_set(path):
    from .sphere_cluster import DirectionSet

    m = read_latent_matrix(path)
    meta = read_json(_sidecar(path))
    if meta.get("k") != m.n:
        raise ShapeMismatch(f"{path}: sidecar declares k={meta.get('k')} but file has {m.n} rows")
    return DirectionSet.from_metadata(m.data.astype(np.float64), meta)


def check_same_dim(a: LatentMatrix, b: LatentMatrix, what="matrices"):
    if a.d != b.d:
        raise DimMismatch(f"{what} have different dimensions: {a.d} vs {b.d}")
