"""DBP15K-style file IO, seed splitting and synthetic bilingual graph pairs."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .kg import AlignmentSeedSet, KnowledgeGraph
from .names import NameEmbeddingTable, load_pretrained_vectors, table_from_labels, write_vectors

FORWARD = "forward"
REVERSED = "reversed"
_DIRECTION_ALIASES = {"fwd": FORWARD, "forward": FORWARD, "rev": REVERSED, "reversed": REVERSED}


class ParseError(ValueError):
    pass


def normalize_direction(direction: str) -> str:
    try:
        return _DIRECTION_ALIASES[direction]
    except KeyError:
        raise ValueError(f"unknown direction {direction!r}; expected fwd or rev") from None


@dataclass(eq=False)
class DatasetPair:
    source: KnowledgeGraph
    target: KnowledgeGraph
    seeds: AlignmentSeedSet
    direction: str = FORWARD
    source_names: Optional[NameEmbeddingTable] = None
    target_names: Optional[NameEmbeddingTable] = None

    def __post_init__(self):
        self.direction = normalize_direction(self.direction)
        pairs = self.seeds.pairs
        if len(pairs):
            if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= self.source.n_entities:
                raise ValueError("seed pair references an unknown source entity")
            if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= self.target.n_entities:
                raise ValueError("seed pair references an unknown target entity")

    def reversed(self) -> "DatasetPair":
        """Swap graph roles; everything else is unchanged."""
        return DatasetPair(
            source=self.target,
            target=self.source,
            seeds=self.seeds.reversed(),
            direction=REVERSED if self.direction == FORWARD else FORWARD,
            source_names=self.target_names,
            target_names=self.source_names,
        )

    def oriented(self, direction: str) -> "DatasetPair":
        return self if normalize_direction(direction) == self.direction else self.reversed()


@dataclass(frozen=True)
class SyntheticSpec:
    n_entities: int = 500
    n_relations: int = 10
    n_attributes: int = 20
    edge_probability: float = 0.02
    edge_drop_rate: float = 0.0
    seed_fraction: float = 0.3
    rng_seed: int = 0
    attribute_probability: float = 0.1
    name_dim: int = 64
    name_noise: float = 0.0

    def __post_init__(self):
        if not 0 <= self.edge_drop_rate < 1:
            raise ValueError("edge_drop_rate must be in [0, 1)")
        if not 0 < self.seed_fraction < 1:
            raise ValueError("seed_fraction must be in (0, 1)")
        if self.n_entities < 4:
            raise ValueError("synthetic graphs need at least 4 entities")
        if self.n_relations < 1 or self.n_attributes < 1:
            raise ValueError("need at least one relation and one attribute")
        if not 0 <= self.edge_probability <= 1:
            raise ValueError("edge_probability must be in [0, 1]")
        if self.name_noise < 0:
            raise ValueError("name_noise must be non-negative")


# -- file format -----------------------------------------------------------

def _read_rows(path: Path, width: int) -> List[List[str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != width:
                raise ParseError(f"{path.name}:{lineno}: expected {width} tab-separated fields, got {len(parts)}")
            rows.append(parts)
    return rows


def _ints(rows: List[List[str]], path: Path, cols: Tuple[int, ...]) -> np.ndarray:
    out = np.empty((len(rows), len(cols)), dtype=np.int64)
    for i, row in enumerate(rows):
        try:
            out[i] = [int(row[c]) for c in cols]
        except ValueError:
            raise ParseError(f"{path.name}:{i + 1}: non-integer id in {row!r}") from None
    return out


def _densify(raw: np.ndarray) -> Dict[int, int]:
    return {int(r): i for i, r in enumerate(np.unique(raw))}


def _load_graph(root: Path, side: int):
    tpath = root / f"triples_{side}"
    triples_raw = _ints(_read_rows(tpath, 3), tpath, (0, 1, 2))
    lpath = root / f"ent_labels_{side}"
    label_rows = _read_rows(lpath, 2) if lpath.exists() else []
    label_ids = _ints(label_rows, lpath, (0,))[:, 0] if label_rows else np.zeros(0, np.int64)
    apath = root / f"attrs_{side}"
    attrs_raw = _ints(_read_rows(apath, 2), apath, (0, 1)) if apath.exists() else np.zeros((0, 2), np.int64)

    ent_map = _densify(np.concatenate([triples_raw[:, 0], triples_raw[:, 2], label_ids, attrs_raw[:, 0]]))
    rel_map = _densify(triples_raw[:, 1])
    attr_map = _densify(attrs_raw[:, 1])
    ent = np.vectorize(ent_map.__getitem__, otypes=[np.int64])
    triples = np.stack(
        [ent(triples_raw[:, 0]), np.vectorize(rel_map.__getitem__, otypes=[np.int64])(triples_raw[:, 1]),
         ent(triples_raw[:, 2])], axis=1) if len(triples_raw) else np.zeros((0, 3), np.int64)
    attrs = np.stack(
        [ent(attrs_raw[:, 0]), np.vectorize(attr_map.__getitem__, otypes=[np.int64])(attrs_raw[:, 1])],
        axis=1) if len(attrs_raw) else np.zeros((0, 2), np.int64)
    labels = {ent_map[int(row[0])]: row[1] for row in label_rows}
    kg = KnowledgeGraph(
        n_entities=max(1, len(ent_map)),
        n_relations=max(1, len(rel_map)),
        n_attributes=max(1, len(attr_map)),
        triples=triples,
        attributes=attrs,
        labels=labels or None,
    )
    return kg, ent_map


def _map_links(path: Path, src_map: Dict[int, int], tgt_map: Dict[int, int]) -> np.ndarray:
    raw = _ints(_read_rows(path, 2), path, (0, 1))
    out = np.empty_like(raw)
    for i, (s, t) in enumerate(raw):
        if int(s) not in src_map:
            raise ParseError(f"{path.name}:{i + 1}: dangling source id {int(s)}")
        if int(t) not in tgt_map:
            raise ParseError(f"{path.name}:{i + 1}: dangling target id {int(t)}")
        out[i] = (src_map[int(s)], tgt_map[int(t)])
    return out


def _load_names(path: Path, ent_map: Dict[int, int]) -> Optional[NameEmbeddingTable]:
    if not path.exists():
        return None
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    dim = len(first.split("\t")[1].split()) if "\t" in first else 0
    raw = load_pretrained_vectors(path, dim)
    return NameEmbeddingTable({ent_map[k]: v for k, v in raw.vectors.items() if k in ent_map}, dim)


def parse_dataset(root_path, direction: str = FORWARD) -> DatasetPair:
    """Load a DBP15K-layout directory; ids are re-densified per graph.

    Optional extras beyond the core five files: ``attrs_{1,2}``,
    ``vectors_{1,2}`` (name vectors keyed by raw entity id) and
    ``train_links`` (pairs pre-tagged as training seeds).
    """
    root = Path(root_path)
    for name in ("triples_1", "triples_2", "ent_links"):
        if not (root / name).exists():
            raise ParseError(f"{root}: missing required file {name}")
    source, src_map = _load_graph(root, 1)
    target, tgt_map = _load_graph(root, 2)
    pairs = _map_links(root / "ent_links", src_map, tgt_map)
    is_train = np.zeros(len(pairs), dtype=bool)
    train_path = root / "train_links"
    if train_path.exists():
        train = {tuple(p) for p in _map_links(train_path, src_map, tgt_map).tolist()}
        is_train = np.array([tuple(p) in train for p in pairs.tolist()], dtype=bool)
    pair = DatasetPair(
        source=source,
        target=target,
        seeds=AlignmentSeedSet(pairs, is_train),
        direction=FORWARD,
        source_names=_load_names(root / "vectors_1", src_map),
        target_names=_load_names(root / "vectors_2", tgt_map),
    )
    return pair.oriented(direction)


def write_dataset(pair: DatasetPair, root_path) -> Path:
    """Serialize in forward orientation so that ``parse_dataset`` round-trips."""
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)
    fwd = pair.oriented(FORWARD)
    for side, kg, names in ((1, fwd.source, fwd.source_names), (2, fwd.target, fwd.target_names)):
        with open(root / f"triples_{side}", "w", encoding="utf-8") as fh:
            fh.writelines(f"{h}\t{r}\t{t}\n" for h, r, t in kg.triples.tolist())
        with open(root / f"attrs_{side}", "w", encoding="utf-8") as fh:
            fh.writelines(f"{e}\t{a}\n" for e, a in kg.attributes.tolist())
        with open(root / f"ent_labels_{side}", "w", encoding="utf-8") as fh:
            labels = kg.labels or {}
            fh.writelines(f"{i}\t{labels.get(i, f'entity_{i}')}\n" for i in range(kg.n_entities))
        if names is not None:
            ids = sorted(names.vectors)
            write_vectors(root / f"vectors_{side}", np.array([names.vectors[i] for i in ids]), ids)
    with open(root / "ent_links", "w", encoding="utf-8") as fh:
        fh.writelines(f"{s}\t{t}\n" for s, t in fwd.seeds.pairs.tolist())
    train = fwd.seeds.train
    if len(train):
        with open(root / "train_links", "w", encoding="utf-8") as fh:
            fh.writelines(f"{s}\t{t}\n" for s, t in train.tolist())
    return root


# -- seeds -----------------------------------------------------------------

def split_seeds(seeds: AlignmentSeedSet, train_fraction: float, rng_seed: int) -> AlignmentSeedSet:
    """Uniform shuffle; the first floor(k * fraction) pairs become training seeds."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    k = len(seeds)
    if k == 0:
        raise ValueError("cannot split an empty seed set")
    order = np.random.default_rng(rng_seed).permutation(k)
    n_train = int(math.floor(k * train_fraction + 1e-9))
    is_train = np.zeros(k, dtype=bool)
    is_train[order[:n_train]] = True
    return AlignmentSeedSet(seeds.pairs.copy(), is_train)


# -- synthetic pairs -------------------------------------------------------

def _noisy_names(base: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return base.copy()
    noisy = base + rng.normal(0.0, sigma, size=base.shape)
    return noisy / np.linalg.norm(noisy, axis=1, keepdims=True)


def generate_synthetic_pair(spec: SyntheticSpec) -> DatasetPair:
    """Erdos-Renyi source graph and a permuted, edge-thinned clone as target.

    Aligned entities share a label, so hash-fallback name vectors agree
    exactly across sides unless ``name_noise`` perturbs them (independent
    Gaussian noise per side, per component, added to unit vectors and
    renormalized).
    """
    rng = np.random.default_rng(spec.rng_seed)
    n = spec.n_entities
    iu, ju = np.triu_indices(n, k=1)
    chosen = rng.random(len(iu)) < spec.edge_probability
    heads, tails = iu[chosen], ju[chosen]
    flip = rng.random(len(heads)) < 0.5
    heads, tails = np.where(flip, tails, heads), np.where(flip, heads, tails)
    rels = rng.integers(0, spec.n_relations, size=len(heads))
    src_triples = np.stack([heads, rels, tails], axis=1)
    attr_mask = rng.random((n, spec.n_attributes)) < spec.attribute_probability
    src_attrs = np.argwhere(attr_mask)

    perm = rng.permutation(n)  # source i -> target perm[i]
    n_drop = int(round(spec.edge_drop_rate * len(src_triples)))
    keep = np.ones(len(src_triples), dtype=bool)
    keep[rng.choice(len(src_triples), size=n_drop, replace=False)] = False
    kept = src_triples[keep]
    tgt_triples = np.stack([perm[kept[:, 0]], kept[:, 1], perm[kept[:, 2]]], axis=1)
    tgt_attrs = np.stack([perm[src_attrs[:, 0]], src_attrs[:, 1]], axis=1)

    src_labels = {i: f"entity_{i}" for i in range(n)}
    tgt_labels = {int(perm[i]): f"entity_{i}" for i in range(n)}
    source = KnowledgeGraph(n, spec.n_relations, spec.n_attributes, src_triples, src_attrs, src_labels)
    target = KnowledgeGraph(n, spec.n_relations, spec.n_attributes, tgt_triples, tgt_attrs, tgt_labels)

    salt = 0
    src_base = table_from_labels(src_labels, n, spec.name_dim, salt).matrix(n)
    tgt_base = table_from_labels(tgt_labels, n, spec.name_dim, salt).matrix(n)
    noise_rng = np.random.default_rng([spec.rng_seed, 1])
    src_names = _noisy_names(src_base, spec.name_noise, noise_rng)
    tgt_names = _noisy_names(tgt_base, spec.name_noise, noise_rng)

    seeds = AlignmentSeedSet(np.stack([np.arange(n), perm], axis=1))
    seeds = split_seeds(seeds, spec.seed_fraction, spec.rng_seed)
    return DatasetPair(
        source=source,
        target=target,
        seeds=seeds,
        direction=FORWARD,
        source_names=NameEmbeddingTable({i: src_names[i] for i in range(n)}, spec.name_dim),
        target_names=NameEmbeddingTable({i: tgt_names[i] for i in range(n)}, spec.name_dim),
    )
