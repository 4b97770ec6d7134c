"""Text conditioning vectors: a deterministic stub encoder plus a loader
for embeddings computed offline by a real text model.

Both paths produce 512-dimensional vectors so a precomputed file (e.g.
from a frozen CLIP-ViT-B/32) can replace the stub without touching the
rest of the pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

EMBED_DIM = 512

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 1 << 64


@dataclass
class TextEmbedding:
    vector: np.ndarray
    source: str = "stub"  # "stub" or "precomputed"

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (EMBED_DIM,):
            raise FormatError(
                f"embedding must have {EMBED_DIM} entries, got shape {self.vector.shape}"
            )
        if not np.all(np.isfinite(self.vector)):
            raise FormatError("embedding contains non-finite entries")


def _fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) % _U64
    return h


def stub_encode(prompt: str) -> TextEmbedding:
    """Hash a prompt into a unit-norm bag-of-buckets vector.

    Tokenization is lowercasing plus whitespace splitting; each token's
    UTF-8 bytes go through 64-bit FNV-1a and land in bucket hash % 512.
    The bucket-count vector is L2-normalized, so token multiplicity only
    reinforces direction.  An empty prompt maps to the zero vector.
    """
    counts = np.zeros(EMBED_DIM, dtype=np.float64)
    for token in prompt.lower().split():
        counts[_fnv1a_64(token.encode("utf-8")) % EMBED_DIM] += 1.0
    norm = np.linalg.norm(counts)
    if norm > 0:
        counts /= norm
    return TextEmbedding(vector=counts, source="stub")


def load_embeddings(path) -> dict[str, TextEmbedding]:
    """Read a JSON-lines embedding file into an id-keyed map.

    Each line holds {"id": str, "prompt": str, "embedding": [512 floats]}.
    """
    table: dict[str, TextEmbedding] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            for key in ("id", "prompt", "embedding"):
                if key not in record:
                    raise FormatError(f"{path}:{lineno}: missing field {key!r}")
            rid = record["id"]
            if rid in table:
                raise FormatError(f"{path}:{lineno}: duplicate id {rid!r}")
            vec = np.asarray(record["embedding"], dtype=np.float64)
            if vec.shape != (EMBED_DIM,):
                raise FormatError(
                    f"{path}:{lineno}: embedding has {vec.size} entries, expected {EMBED_DIM}"
                )
            table[rid] = TextEmbedding(vector=vec, source="precomputed")
    return table


def save_embeddings(path, records: dict[str, tuple[str, np.ndarray]]) -> None:
    """Write an embedding map as JSON lines; inverse of load_embeddings.

    ``records`` maps id -> (prompt, vector).
    """
    with open(path, "w", encoding="utf-8") as fh:
        for rid, (prompt, vec) in records.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (EMBED_DIM,):
                raise FormatError(
                    f"embedding for id {rid!r} has {vec.size} entries, expected {EMBED_DIM}"
                )
            fh.write(
                json.dumps(
                    {"id": rid, "prompt": prompt, "embedding": vec.tolist()}
                )
            )
            fh.write("\n")
