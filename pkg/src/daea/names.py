"""Initial name embeddings: precomputed vector files or a deterministic hash fallback."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional

import numpy as np


@dataclass(eq=False)
class NameEmbeddingTable:
    vectors: Dict[int, np.ndarray]
    dimension: int

    def __post_init__(self):
        for key, vec in self.vectors.items():
            if vec.shape != (self.dimension,):
                raise ValueError(f"vector for id {key} has dimension {vec.shape[-1]}, expected {self.dimension}")
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"vector for id {key} has non-finite values")

    def __contains__(self, key: int) -> bool:
        return key in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def matrix(self, n: int, labels: Optional[Mapping[int, str]] = None, salt: int = 0) -> np.ndarray:
        """Dense (n, dimension) matrix; ids absent from the table use the hash fallback."""
        out = np.empty((n, self.dimension), dtype=np.float64)
        for i in range(n):
            vec = self.vectors.get(i)
            if vec is None:
                label = labels.get(i, "") if labels else ""
                vec = hash_fallback_embedding(label, self.dimension, salt, entity_id=i)
            out[i] = vec
        return out


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ValueError("cannot normalize a zero vector")
    return vec / norm


def load_pretrained_vectors(path, expected_dim: int) -> NameEmbeddingTable:
    """Read ``id<TAB>v1 v2 ... vD`` lines; vectors come back L2-normalized."""
    vectors: Dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                key, values = line.split("\t")
                ident = int(key)
                vec = np.array([float(v) for v in values.split()], dtype=np.float64)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed vector line ({exc})") from None
            if vec.shape != (expected_dim,):
                raise ValueError(
                    f"{path}:{lineno}: vector for id {ident} has dimension {len(vec)}, expected {expected_dim}"
                )
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{path}:{lineno}: vector for id {ident} has non-finite values")
            vectors[ident] = _unit(vec)
    return NameEmbeddingTable(vectors, expected_dim)


def write_vectors(path, vectors: np.ndarray, ids: Optional[Iterable[int]] = None) -> None:
    ids = range(len(vectors)) if ids is None else ids
    with open(path, "w", encoding="utf-8") as fh:
        for i, vec in zip(ids, vectors):
            fh.write(f"{i}\t" + " ".join(repr(float(v)) for v in vec) + "\n")


def hash_fallback_embedding(label: str, dim: int, rng_salt: int = 0, entity_id: Optional[int] = None) -> np.ndarray:
    """Unit Gaussian direction seeded by a stable hash of ``(label, salt)``.

    Equal labels give equal vectors in both graphs. An empty label is
    keyed on ``entity_id`` instead.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    key = f"label:{label}" if label else f"id:{entity_id}"
    digest = hashlib.blake2b(f"{key}\x00{rng_salt}".encode("utf-8"), digest_size=16).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    vec = rng.standard_normal(dim)
    while not math.isfinite(norm := float(np.linalg.norm(vec))) or norm == 0.0:
        vec = rng.standard_normal(dim)
    return vec / norm


def table_from_labels(labels: Mapping[int, str], n: int, dim: int, rng_salt: int = 0) -> NameEmbeddingTable:
    return NameEmbeddingTable(
        {i: hash_fallback_embedding(labels.get(i, ""), dim, rng_salt, entity_id=i) for i in range(n)}, dim
    )


def table_from_matrix(matrix: np.ndarray) -> NameEmbeddingTable:
    matrix = np.asarray(matrix, dtype=np.float64)
    return NameEmbeddingTable({i: matrix[i].copy() for i in range(len(matrix))}, matrix.shape[1])
