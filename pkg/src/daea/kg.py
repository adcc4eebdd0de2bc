"""Knowledge graph containers and the three entity-centric adjacency views."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

TRAIN = "train"
TEST = "test"


def _as_int_array(rows, width: int) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, width), dtype=np.int64)
    return arr.reshape(-1, width)


@dataclass(eq=False)
class KnowledgeGraph:
    """G = (E, R, A) with dense integer ids.

    ``triples`` is an (T, 3) array of (head, relation, tail) and
    ``attributes`` an (A, 2) array of (entity, attribute). Both are
    deduplicated and sorted on construction.
    """

    n_entities: int
    n_relations: int
    n_attributes: int
    triples: np.ndarray
    attributes: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    labels: Optional[Dict[int, str]] = None

    def __post_init__(self):
        if min(self.n_entities, self.n_relations, self.n_attributes) < 1:
            raise ValueError("a knowledge graph needs at least one entity, relation and attribute")
        triples = _as_int_array(self.triples, 3)
        attrs = _as_int_array(self.attributes, 2)
        if len(triples):
            triples = np.unique(triples, axis=0)
            _check_range(triples[:, 0], self.n_entities, "head entity")
            _check_range(triples[:, 2], self.n_entities, "tail entity")
            _check_range(triples[:, 1], self.n_relations, "relation")
        if len(attrs):
            attrs = np.unique(attrs, axis=0)
            _check_range(attrs[:, 0], self.n_entities, "entity")
            _check_range(attrs[:, 1], self.n_attributes, "attribute")
        self.triples = triples
        self.attributes = attrs
        if self.labels is not None:
            bad = [k for k in self.labels if not 0 <= k < self.n_entities]
            if bad:
                raise ValueError(f"label for unknown entity id {bad[0]}")

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            (self.n_entities, self.n_relations, self.n_attributes)
            == (other.n_entities, other.n_relations, other.n_attributes)
            and np.array_equal(self.triples, other.triples)
            and np.array_equal(self.attributes, other.attributes)
            and (self.labels or {}) == (other.labels or {})
        )

    def neighbors(self) -> List[np.ndarray]:
        """Sorted undirected neighbor arrays (self excluded) per entity."""
        adj = _undirected_edges(self)
        adj = adj.tocsr()
        return [adj.indices[adj.indptr[i]:adj.indptr[i + 1]].copy() for i in range(self.n_entities)]

    def label(self, entity: int) -> str:
        if self.labels is None:
            return ""
        return self.labels.get(entity, "")


def _check_range(values: np.ndarray, bound: int, what: str) -> None:
    bad = values[(values < 0) | (values >= bound)]
    if len(bad):
        raise ValueError(f"{what} id {int(bad[0])} out of range [0, {bound})")


@dataclass(eq=False)
class AlignmentSeedSet:
    """Known aligned pairs; ``is_train`` tags each pair's partition."""

    pairs: np.ndarray
    is_train: Optional[np.ndarray] = None

    def __post_init__(self):
        self.pairs = _as_int_array(self.pairs, 2)
        if self.is_train is None:
            self.is_train = np.zeros(len(self.pairs), dtype=bool)
        self.is_train = np.asarray(self.is_train, dtype=bool)
        if self.is_train.shape != (len(self.pairs),):
            raise ValueError("partition tags must match the number of pairs")
        for col, side in ((0, "source"), (1, "target")):
            ids, counts = np.unique(self.pairs[:, col], return_counts=True)
            if np.any(counts > 1):
                raise ValueError(f"{side} entity {int(ids[counts > 1][0])} appears in more than one seed pair")

    def __len__(self):
        return len(self.pairs)

    def __eq__(self, other):
        if not isinstance(other, AlignmentSeedSet):
            return NotImplemented
        return np.array_equal(self.pairs, other.pairs) and np.array_equal(self.is_train, other.is_train)

    @property
    def train(self) -> np.ndarray:
        return self.pairs[self.is_train]

    @property
    def test(self) -> np.ndarray:
        return self.pairs[~self.is_train]

    def partition(self, index: int) -> str:
        return TRAIN if self.is_train[index] else TEST

    def reversed(self) -> "AlignmentSeedSet":
        return AlignmentSeedSet(self.pairs[:, ::-1].copy(), self.is_train.copy())


@dataclass(frozen=True, eq=False)
class AdjacencyView:
    kind: str
    matrix: sp.csr_matrix

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _undirected_edges(kg: KnowledgeGraph) -> sp.coo_matrix:
    n = kg.n_entities
    t = kg.triples
    heads, tails = t[:, 0], t[:, 2]
    keep = heads != tails
    rows = np.concatenate([heads[keep], tails[keep]])
    cols = np.concatenate([tails[keep], heads[keep]])
    a = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    a.data[:] = 1.0  # binary after duplicate (h, r1, t), (h, r2, t) merge
    return a.tocoo()


def build_entity_adjacency(kg: KnowledgeGraph) -> AdjacencyView:
    """Symmetric D^-1/2 (A + I) D^-1/2 over the undirected entity graph."""
    a = _undirected_edges(kg).tocsr() + sp.identity(kg.n_entities, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    norm = (inv_sqrt @ a @ inv_sqrt).tocsr()
    norm.sort_indices()
    return AdjacencyView("entity", norm)


def _row_normalize(m: sp.csr_matrix) -> sp.csr_matrix:
    sums = np.asarray(m.sum(axis=1)).ravel()
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
    out = (sp.diags(scale) @ m).tocsr()
    out.sort_indices()
    return out


def build_relation_adjacency(kg: KnowledgeGraph) -> AdjacencyView:
    """Incidence counts of (entity, relation) over heads and tails, row-normalized."""
    t = kg.triples
    rows = np.concatenate([t[:, 0], t[:, 2]])
    cols = np.concatenate([t[:, 1], t[:, 1]])
    counts = sp.coo_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(kg.n_entities, kg.n_relations)
    ).tocsr()
    return AdjacencyView("relation", _row_normalize(counts))


def build_attribute_adjacency(kg: KnowledgeGraph) -> AdjacencyView:
    a = kg.attributes
    presence = sp.coo_matrix(
        (np.ones(len(a)), (a[:, 0], a[:, 1])), shape=(kg.n_entities, kg.n_attributes)
    ).tocsr()
    presence.data[:] = 1.0
    return AdjacencyView("attribute", _row_normalize(presence))


def build_views(kg: KnowledgeGraph) -> Tuple[AdjacencyView, AdjacencyView, AdjacencyView]:
    return build_entity_adjacency(kg), build_relation_adjacency(kg), build_attribute_adjacency(kg)


def seeds_from_pairs(pairs: Sequence[Tuple[int, int]], train: Sequence[bool] = ()) -> AlignmentSeedSet:
    return AlignmentSeedSet(np.asarray(pairs, dtype=np.int64), np.asarray(train, dtype=bool) if len(train) else None)
