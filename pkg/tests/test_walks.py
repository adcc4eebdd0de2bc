import numpy as np
import pytest

from daea.kg import KnowledgeGraph
from daea.walks import (PHI, AnchorGraph, RandomWalk, build_masked_pair, dump_walks, sample_training_pairs,
                        sample_walk, walk_confidence)


def complete_graph(n):
    return KnowledgeGraph(n, 1, 1, [(i, 0, j) for i in range(n) for j in range(i + 1, n)])


def switch_frequency(bias, steps=10_000, seed=0):
    # K6 with anchors {0, 1, 2}: every node always has both neighbor classes
    graph = AnchorGraph(complete_graph(6), [0, 1, 2])
    walk = sample_walk(graph, 0, steps + 1, bias, np.random.default_rng(seed)).nodes
    cls = graph.is_anchor[walk]
    return np.mean(cls[1:] != cls[:-1])


def test_bias_frequency():
    assert 0.88 <= switch_frequency(0.9) <= 0.92


def test_half_bias_is_fair():
    sigma = np.sqrt(0.25 / 10_000)
    assert abs(switch_frequency(0.5, seed=3) - 0.5) < 3 * sigma


def test_steps_follow_edges():
    kg = KnowledgeGraph(30, 1, 1, [(i, 0, (i * 7 + 3) % 30) for i in range(30)] + [(i, 0, i + 1) for i in range(29)])
    graph = AnchorGraph(kg, range(0, 30, 3))
    adj = {i: set(nb.tolist()) for i, nb in enumerate(kg.neighbors())}
    rng = np.random.default_rng(4)
    for start in range(0, 30, 3):
        nodes = sample_walk(graph, start, 25, 0.9, rng).nodes
        assert all(b in adj[a] for a, b in zip(nodes, nodes[1:]))


def test_star_of_anchors_falls_back():
    kg = KnowledgeGraph(5, 1, 1, [(0, 0, i) for i in range(1, 5)])
    graph = AnchorGraph(kg, range(5))
    nodes = sample_walk(graph, 0, 9, 0.99, np.random.default_rng(0)).nodes
    assert nodes[0::2].tolist() == [0] * 5
    assert all(v in range(1, 5) for v in nodes[1::2])


def test_isolated_start_repeats():
    kg = KnowledgeGraph(4, 1, 1, [(1, 0, 2)])
    nodes = sample_walk(AnchorGraph(kg, [0]), 0, 10, 0.9, np.random.default_rng(0)).nodes
    assert nodes.tolist() == [0] * 10


def test_walk_errors():
    graph = AnchorGraph(complete_graph(4), [0])
    with pytest.raises(ValueError, match="anchor"):
        sample_walk(graph, 1, 5)
    with pytest.raises(ValueError):
        sample_walk(graph, 0, 5, bias=1.0)
    with pytest.raises(ValueError):
        sample_walk(graph, 0, 1)
    with pytest.raises(ValueError):
        RandomWalk(np.array([0]))


def test_deterministic_under_seed():
    graph = AnchorGraph(complete_graph(8), [0, 4])
    a = sample_walk(graph, 4, 20, 0.9, np.random.default_rng(11)).nodes
    b = sample_walk(graph, 4, 20, 0.9, np.random.default_rng(11)).nodes
    assert np.array_equal(a, b)


def test_masked_pair_definition():
    a1, n1, a2, s1, s2 = 3, 5, 8, 30, 80
    pair = build_masked_pair(RandomWalk(np.array([a1, n1, a2])), {a1: s1, a2: s2})
    assert pair.mask.tolist() == [True, False, True]
    assert pair.source_walk.tolist() == [s1, PHI, s2]
    full = build_masked_pair(RandomWalk(np.array([a1, a2])), {a1: s1, a2: s2})
    assert full.mask.all() and full.source_walk.tolist() == [s1, s2]
    empty = build_masked_pair(RandomWalk(np.array([n1, n1])), {a1: s1})
    assert not empty.mask.any() and empty.source_walk.tolist() == [PHI, PHI]


def test_confidence():
    assert walk_confidence(build_masked_pair(RandomWalk(np.array([1, 0, 1, 0])), {1: 9})) == 2
    assert walk_confidence(build_masked_pair(RandomWalk(np.zeros(10, dtype=int)), {1: 9})) == 0
    assert walk_confidence(build_masked_pair(RandomWalk(np.ones(10, dtype=int)), {1: 9})) == 10


def check_mask_invariants(pairs, counterpart):
    for p in pairs:
        for node, m, s in zip(p.target_walk.nodes.tolist(), p.mask.tolist(), p.source_walk.tolist()):
            assert m == (node in counterpart)
            assert (s == counterpart[node]) if m else (s == PHI)


def test_mask_invariants_on_sampled_pairs():
    rng = np.random.default_rng(0)
    kg = KnowledgeGraph(60, 1, 1, [(i, 0, j) for i in range(60) for j in range(i + 1, 60) if rng.random() < 0.08])
    counterpart = {int(t): int(t) + 100 for t in rng.choice(60, 20, replace=False)}
    pairs = sample_training_pairs(AnchorGraph(kg, counterpart), counterpart, 50, 10, 0.9, rng)
    assert len(pairs) == 1000
    check_mask_invariants(pairs, counterpart)
    assert all(p.mask[0] for p in pairs)


def test_dump_format(tmp_path):
    pair = build_masked_pair(RandomWalk(np.array([3, 5, 8])), {3: 0, 8: 1})
    dump_walks([pair], tmp_path / "walks.txt")
    assert (tmp_path / "walks.txt").read_text().splitlines() == ["3 5 8", "1 0 1"]
