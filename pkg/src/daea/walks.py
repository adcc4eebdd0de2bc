"""Anchor-biased random walks and their masked source-side counterparts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .kg import KnowledgeGraph

PHI = -1  # empty identifier for masked source positions


@dataclass(frozen=True, eq=False)
class RandomWalk:
    nodes: np.ndarray
    graph_tag: str = "target"

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise ValueError("walks need length >= 2")

    def __len__(self):
        return len(self.nodes)


@dataclass(frozen=True, eq=False)
class MaskedWalkPair:
    target_walk: RandomWalk
    mask: np.ndarray
    source_walk: np.ndarray  # source ids, PHI where mask == 0

    def __len__(self):
        return len(self.mask)


class AnchorGraph:
    """Neighbor lists split by anchor membership, for fast biased stepping."""

    def __init__(self, kg: KnowledgeGraph, anchors: Iterable[int]):
        self.n = kg.n_entities
        self.is_anchor = np.zeros(self.n, dtype=bool)
        idx = np.fromiter(anchors, dtype=np.int64)
        self.is_anchor[idx] = True
        nbrs = kg.neighbors()
        self.anchor_nbrs = [nb[self.is_anchor[nb]] for nb in nbrs]
        self.other_nbrs = [nb[~self.is_anchor[nb]] for nb in nbrs]


def sample_walk(graph: AnchorGraph, start: int, length: int = 10, bias: float = 0.9,
                rng: Optional[np.random.Generator] = None, require_anchor_start: bool = True,
                graph_tag: str = "target") -> RandomWalk:
    """From a non-anchor, step to an adjacent anchor with probability ``bias``;
    from an anchor, step to an adjacent non-anchor with probability ``bias``.

    An empty preferred class falls back to the other class, and a node
    with no neighbors repeats itself.
    """
    if not 0 < bias < 1:
        raise ValueError("bias must be in (0, 1)")
    if length < 2:
        raise ValueError("walk length must be >= 2")
    if require_anchor_start and not graph.is_anchor[start]:
        raise ValueError(f"walk must start at an anchor; entity {start} is not one")
    rng = rng if rng is not None else np.random.default_rng()
    nodes = np.empty(length, dtype=np.int64)
    nodes[0] = cur = start
    draws = rng.random((length - 1, 2))
    for i in range(1, length):
        same, other = graph.anchor_nbrs[cur], graph.other_nbrs[cur]
        if graph.is_anchor[cur]:
            same, other = other, same
        # ``same`` is now the preferred class
        pick = same if draws[i - 1, 0] < bias else other
        if len(pick) == 0:
            pick = other if pick is same else same
        if len(pick):
            cur = int(pick[int(draws[i - 1, 1] * len(pick))])
        nodes[i] = cur
    return RandomWalk(nodes, graph_tag)


def build_masked_pair(walk: RandomWalk, counterpart: Mapping[int, int]) -> MaskedWalkPair:
    """``counterpart`` maps target anchors to their source seed entity."""
    mask = np.array([int(v) in counterpart for v in walk.nodes], dtype=bool)
    src = np.array([counterpart[int(v)] if m else PHI for v, m in zip(walk.nodes, mask)], dtype=np.int64)
    return MaskedWalkPair(walk, mask, src)


def walk_confidence(pair: MaskedWalkPair) -> int:
    return int(np.count_nonzero(pair.mask))


def sample_training_pairs(graph: AnchorGraph, counterpart: Mapping[int, int], walks_per_anchor: int,
                          length: int, bias: float, rng: np.random.Generator) -> List[MaskedWalkPair]:
    pairs = []
    for anchor in sorted(counterpart):
        for _ in range(walks_per_anchor):
            pairs.append(build_masked_pair(sample_walk(graph, anchor, length, bias, rng), counterpart))
    return pairs


def dump_walks(pairs: Sequence[MaskedWalkPair], path) -> None:
    """One walk per line followed by its mask line."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(" ".join(str(int(v)) for v in p.target_walk.nodes) + "\n")
            fh.write(" ".join("1" if m else "0" for m in p.mask) + "\n")
