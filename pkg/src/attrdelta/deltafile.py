"""Binary persistence for attribute deltas, and the directory registry.

File layout (little-endian):

    bytes 0-3   magic "ADLT"
    bytes 4-5   format version (u16)
    bytes 6-9   header length in bytes (u32)
    then        UTF-8 JSON header
    then        float32 vector payload, header["embedding_dim"] values

The header carries attribute_name, encoder_id, method, embedding_dim,
training_nouns, config_digest, created_at. Round-trips preserve the vector
bit for bit.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, DimMismatchOnLoad, UnsupportedVersion
from .extraction import AttributeDelta

MAGIC = b"ADLT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sHI")
FILE_SUFFIX = ".adlt"


def delta_to_bytes(delta: AttributeDelta) -> bytes:
    header = {
        "attribute_name": delta.attribute_name,
        "encoder_id": delta.encoder_id,
        "method": delta.method,
        "embedding_dim": int(delta.dim),
        "training_nouns": list(delta.training_nouns),
        "config_digest": delta.config_digest,
        "created_at": delta.created_at,
    }
    header_blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(delta.vector, dtype="<f4").tobytes()
    return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_blob)) + header_blob + payload


def delta_from_bytes(blob: bytes) -> AttributeDelta:
    if len(blob) < _PREAMBLE.size:
        raise BadMagic("file too short for a delta header")
    magic, version, header_len = _PREAMBLE.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"format version {version} not supported")
    header_end = _PREAMBLE.size + header_len
    if len(blob) < header_end:
        raise BadMagic("truncated header")
    try:
        header = json.loads(blob[_PREAMBLE.size : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadMagic(f"unreadable header: {exc}") from exc
    dim = int(header["embedding_dim"])
    payload = blob[header_end:]
    if len(payload) != 4 * dim:
        raise DimMismatchOnLoad(
            f"payload holds {len(payload)} bytes, expected {4 * dim} "
            f"for dim {dim}"
        )
    vector = np.frombuffer(payload, dtype="<f4").copy()
    return AttributeDelta(
        attribute_name=header["attribute_name"],
        vector=vector,
        encoder_id=header["encoder_id"],
        method=header["method"],
        training_nouns=tuple(header.get("training_nouns", ())),
        config_digest=header.get("config_digest", ""),
        created_at=header.get("created_at", ""),
    )


def save_delta(delta: AttributeDelta, path: str | Path) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(delta_to_bytes(delta))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_delta(path: str | Path) -> AttributeDelta:
    return delta_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Registry


@dataclass(frozen=True)
class RegistryEntry:
    name: str
    encoder_id: str
    method: str
    embedding_dim: int
    training_nouns: tuple[str, ...]
    config_digest: str
    created_at: str
    path: Path

    @property
    def key(self) -> str:
        return f"{self.name}@{self.encoder_id}"


class DeltaRegistry:
    """Directory of persisted deltas, keyed by "name@encoder_id".

    Files live flat under the root as <name>@<encoder_id>.adlt. Corrupt
    files are skipped and reported, never fatal.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, delta: AttributeDelta) -> Path:
        return self.root / f"{delta.attribute_name}@{delta.encoder_id}{FILE_SUFFIX}"

    def save(self, delta: AttributeDelta) -> Path:
        return save_delta(delta, self.path_for(delta))

    def scan(self) -> tuple[list[RegistryEntry], list[str]]:
        """All readable entries (sorted by key) plus warnings for bad files."""
        entries: list[RegistryEntry] = []
        problems: list[str] = []
        for path in sorted(self.root.glob(f"*{FILE_SUFFIX}")):
            try:
                delta = load_delta(path)
            except Exception as exc:
                problems.append(f"{path.name}: {exc}")
                continue
            entries.append(
                RegistryEntry(
                    name=delta.attribute_name,
                    encoder_id=delta.encoder_id,
                    method=delta.method,
                    embedding_dim=delta.dim,
                    training_nouns=delta.training_nouns,
                    config_digest=delta.config_digest,
                    created_at=delta.created_at,
                    path=path,
                )
            )
        entries.sort(key=lambda e: e.key)
        return entries, problems

    def load(self, key: str) -> AttributeDelta:
        """Load by "name@encoder" key or bare name if unambiguous."""
        entries, _ = self.scan()
        matches = [e for e in entries if e.key == key or e.name == key]
        if not matches:
            raise KeyError(f"no delta named {key!r} in {self.root}")
        if len(matches) > 1 and not any(e.key == key for e in matches):
            raise KeyError(
                f"{key!r} is ambiguous; use one of "
                f"{[e.key for e in matches]}"
            )
        exact = [e for e in matches if e.key == key]
        return load_delta((exact or matches)[0].path)
