"""Walk-based translation of test entities, consolidation, ranking and metrics."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
from scipy.spatial.distance import cdist

from .walks import AnchorGraph, sample_walk

STRATEGIES = ("highest_confidence", "simple_average", "softmax_weighted_average")
DEFAULT_STRATEGY = "softmax_weighted_average"

Record = Tuple[np.ndarray, int]


def sample_inference_walks(graph: AnchorGraph, entities: Sequence[int], walks_per_entity: int, length: int,
                           bias: float, rng: np.random.Generator) -> np.ndarray:
    """(W, L) source-graph walks starting at each entity to be aligned."""
    walks = [
        sample_walk(graph, int(e), length, bias, rng, require_anchor_start=False, graph_tag="source").nodes
        for e in entities
        for _ in range(walks_per_entity)
    ]
    return np.stack(walks) if walks else np.zeros((0, length), dtype=np.int64)


def translate_walks(walks: np.ndarray, translator, hs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Translator outputs (W, L, D) for source walks fed with their source embeddings."""
    if len(walks) == 0:
        return np.zeros((0, walks.shape[1], hs.shape[1]))
    param = next(translator.parameters())
    h = torch.as_tensor(hs, dtype=param.dtype)
    out = []
    with torch.no_grad():
        for start in range(0, len(walks), batch_size):
            idx = torch.as_tensor(walks[start:start + batch_size], dtype=torch.long)
            out.append(translator(h[idx]).double().numpy())
    return np.concatenate(out)


def collect_translations(entity: int, walks: np.ndarray, translated: np.ndarray,
                         confidences: np.ndarray) -> List[Record]:
    """Every occurrence of ``entity`` across the walks, with its walk's confidence."""
    rows, cols = np.nonzero(walks == entity)
    return [(translated[r, c], int(confidences[r])) for r, c in zip(rows, cols)]


def group_translations(walks: np.ndarray, translated: np.ndarray, confidences: np.ndarray,
                       entities: Sequence[int]) -> Dict[int, List[Record]]:
    wanted = set(int(e) for e in entities)
    out: Dict[int, List[Record]] = defaultdict(list)
    for r, c in zip(*np.nonzero(np.isin(walks, list(wanted)))):
        out[int(walks[r, c])].append((translated[r, c], int(confidences[r])))
    return out


def consolidate(records: Sequence[Record], strategy: str, fallback: np.ndarray) -> np.ndarray:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown consolidation strategy {strategy!r}")
    if not records:
        return np.asarray(fallback, dtype=np.float64)
    vecs = np.stack([np.asarray(v, dtype=np.float64) for v, _ in records])
    conf = np.array([c for _, c in records], dtype=np.float64)
    if strategy == "highest_confidence":
        return vecs[int(np.argmax(conf))]  # first maximum
    if strategy == "simple_average":
        return vecs.mean(axis=0)
    w = np.exp(conf - conf.max())
    w /= w.sum()
    return w @ vecs


def rank_candidates(query: np.ndarray, ht: np.ndarray, candidates: Sequence[int]) -> np.ndarray:
    """Candidate ids by ascending squared distance, smaller id first on ties."""
    cand = np.asarray(sorted(candidates), dtype=np.int64)
    if len(cand) == 0:
        raise ValueError("no candidates to rank")
    d = cdist(np.asarray(query, dtype=np.float64)[None, :], ht[cand], "sqeuclidean")[0]
    return cand[np.lexsort((cand, d))]


def hits_at_k(ranks: Sequence[int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = np.asarray(ranks)
    if len(ranks) == 0:
        raise ValueError("no ranks given")
    return float(np.count_nonzero(ranks <= k)) / len(ranks)


def mean_reciprocal_rank(ranks: Sequence[int]) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if len(ranks) == 0:
        raise ValueError("no ranks given")
    if np.any(ranks < 1):
        raise ValueError("ranks start at 1")
    return float(np.mean(1.0 / ranks))


@dataclass
class AlignmentReport:
    entities: np.ndarray
    gold: np.ndarray
    ranks: np.ndarray
    top: np.ndarray  # (n, <=10) best candidates
    direction: str = "forward"
    metrics: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.metrics and len(self.ranks):
            self.metrics = {
                "hits@1": hits_at_k(self.ranks, 1),
                "hits@10": hits_at_k(self.ranks, 10),
                "mrr": mean_reciprocal_rank(self.ranks),
            }

    def __len__(self):
        return len(self.entities)


def evaluate_queries(queries: np.ndarray, test_pairs: np.ndarray, ht: np.ndarray, candidates: Sequence[int],
                     direction: str = "forward", top_n: int = 10) -> AlignmentReport:
    """Rank every candidate for each query row; gold ranks follow ``rank_candidates`` ordering."""
    cand = np.asarray(sorted(candidates), dtype=np.int64)
    d = cdist(np.asarray(queries, dtype=np.float64), ht[cand], "sqeuclidean")
    ranks = np.empty(len(test_pairs), dtype=np.int64)
    top = np.empty((len(test_pairs), min(top_n, len(cand))), dtype=np.int64)
    for i, gold in enumerate(test_pairs[:, 1]):
        order = np.lexsort((cand, d[i]))
        ranked = cand[order]
        ranks[i] = int(np.nonzero(ranked == gold)[0][0]) + 1
        top[i] = ranked[: top.shape[1]]
    return AlignmentReport(test_pairs[:, 0].copy(), test_pairs[:, 1].copy(), ranks, top, direction)


def write_report(report: AlignmentReport, path, summary_path=None) -> None:
    width = report.top.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["entity", "gold", "rank"] + [f"top{i + 1}" for i in range(width)])
        for e, g, r, t in zip(report.entities, report.gold, report.ranks, report.top):
            w.writerow([int(e), int(g), int(r)] + [int(x) for x in t])
    if summary_path is not None:
        write_summary(report.metrics, summary_path)


def write_summary(metrics: Dict[str, float], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("hits@1,hits@10,mrr\n")
        fh.write(f"{metrics['hits@1']:.6f},{metrics['hits@10']:.6f},{metrics['mrr']:.6f}\n")


def read_report(path) -> AlignmentReport:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    body = [list(map(int, r)) for r in rows[1:] if r]
    arr = np.array(body, dtype=np.int64).reshape(len(body), -1)
    return AlignmentReport(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3:])
