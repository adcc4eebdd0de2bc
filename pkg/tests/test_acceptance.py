"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line.

The lines are repeated in an "acceptance criteria" section at the end of
the pytest run; ``-s`` also shows them inline.
"""
import time

import numpy as np
import pytest
import torch
from torch import nn

from conftest import ACCEPTANCE_LINES, analytic_gradient, central_difference, relative_error
from daea import pipeline as pl
from daea.inference import hits_at_k, mean_reciprocal_rank, read_report
from daea.kg import KnowledgeGraph
from daea.matching import (Critic, MatchingConfig, MatchingState, empirical_mmd, pair_distance,
                           random_feature_mmd, sample_negatives, train_matching_step, triplet_loss)
from daea.translation import KTBatch, SequenceModels, generator_loss, top1_pseudo_labels
from daea.walks import PHI, AnchorGraph, sample_training_pairs, sample_walk

BENCH = dict(n_entities=500, train_fraction=0.3)
NOISY = dict(BENCH, edge_drop_rate=0.2, name_noise=0.5)


def verdict(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def t64(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


@pytest.fixture(scope="module")
def clean_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("clean")
    start = time.perf_counter()
    report = pl.run_pipeline(pl.PipelineConfig(**BENCH, ablation="daea", out=str(out / "fwd")))
    return report, time.perf_counter() - start, out


def test_criterion_01_metric_oracles():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(100):
        ranks = rng.integers(1, 60, size=int(rng.integers(1, 40))).tolist()
        for k in (1, 10):
            if hits_at_k(ranks, k) != sum(1 for r in ranks if r <= k) / len(ranks):
                mismatches += 1
        if mean_reciprocal_rank(ranks) != float(np.mean([1.0 / r for r in ranks])):
            mismatches += 1
    elapsed = time.perf_counter() - start
    verdict(1, "metric oracles", mismatches == 0 and elapsed < 1.0,
            f"{mismatches} mismatches over 100 rank lists, {elapsed:.3f}s")


def test_criterion_02_mmd_properties():
    rng = np.random.default_rng(1)
    x = t64(rng.normal(size=(50, 6)))
    self_mmd = empirical_mmd(x, x, Critic(6, 32, 16, seed=0).double()).item()
    ident = nn.Identity()
    two = empirical_mmd(t64([[1, 0]]), t64([[0, 1]]), ident).item()
    c = t64([0.5, -2.0, 1.5])
    y = t64(rng.normal(size=(25, 3)))
    shifted = empirical_mmd(y, y + c, ident).item()
    errors = [abs(self_mmd), abs(two - 2.0), abs(shifted - (c @ c).item())]
    verdict(2, "MMD properties", max(errors) <= 1e-9,
            f"MMD(X,X)={self_mmd:.1e}, hand cases {two:.12f} and {shifted:.12f} vs {(c @ c).item()}")


class ShiftGenerator(nn.Module):
    """Trainable affine map on the source cloud, the target cloud is fixed."""

    def __init__(self, xs, xt):
        super().__init__()
        self.lin = nn.Linear(2, 2)
        with torch.no_grad():
            self.lin.weight.copy_(torch.eye(2))
            self.lin.bias.zero_()
        self.xs, self.xt = xs, xt

    def forward(self):
        return self.lin(self.xs), self.xt


def test_criterion_03_distribution_matching():
    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    shift = np.array([3.0, 0.0])
    xs, xt = rng.normal(size=(200, 2)), rng.normal(size=(200, 2)) + shift
    held_s, held_t = rng.normal(size=(200, 2)), rng.normal(size=(200, 2)) + shift
    gen = ShiftGenerator(torch.tensor(xs, dtype=torch.float32), torch.tensor(xt, dtype=torch.float32))
    cfg = MatchingConfig(encoder_lr=0.02, critic_lr=1e-3, critic_steps=1, mmd_weight=1.0)
    state = MatchingState(gen, Critic(2, 128, 128, seed=0), cfg, np.random.default_rng(0))
    before = random_feature_mmd(held_s, held_t, seed=123)
    start = time.perf_counter()
    for _ in range(500):
        train_matching_step(state, None)
    elapsed = time.perf_counter() - start
    with torch.no_grad():
        mapped = gen.lin(torch.tensor(held_s, dtype=torch.float32)).double().numpy()
    after = random_feature_mmd(mapped, held_t, seed=123)
    reduction = 1 - after / before
    verdict(3, "distribution matching", reduction >= 0.8 and elapsed < 60,
            f"held-out MMD {before:.4f} -> {after:.5f}, reduction {reduction:.1%} in 500 steps, {elapsed:.1f}s")


def test_criterion_04_gradient_checks():
    rng = np.random.default_rng(4)
    worst = {"triplet": 0.0, "mmd": 0.0, "generator": 0.0}
    checked = {k: 0 for k in worst}
    for point in range(20):
        dim = int(rng.integers(2, 9))
        hs0, ht = t64(rng.normal(size=(6, dim))), t64(rng.normal(size=(6, dim)))
        pos = np.array([[0, 1], [2, 3], [4, 5]])
        neg = sample_negatives(pos, 6, 6, 2, np.random.default_rng(point))
        margins = (pair_distance(hs0, ht, pos)[:, None] - pair_distance(hs0, ht, neg) + 1.0).abs()
        if margins.min() > 1e-3:  # hinge kinks are not differentiable
            fn = lambda hs: triplet_loss(pos, neg, hs, ht, 1.0)
            worst["triplet"] = max(worst["triplet"], relative_error(analytic_gradient(fn, hs0),
                                                                    central_difference(fn, hs0)))
            checked["triplet"] += 1

        critic = Critic(dim, 8, 4, seed=point).double()
        fn = lambda hs: empirical_mmd(hs, ht + 0.5, critic)
        worst["mmd"] = max(worst["mmd"], relative_error(analytic_gradient(fn, hs0), central_difference(fn, hs0)))
        checked["mmd"] += 1

        models = SequenceModels(dim, 5, seed=point).double()
        with torch.no_grad():
            for p in models.translator.head.parameters():
                p.normal_(0, 0.1)
        tgt = torch.as_tensor(rng.integers(0, 6, size=(2, 4)))
        mask = torch.as_tensor(rng.random((2, 4)) < 0.5)
        src = torch.where(mask, torch.as_tensor(rng.integers(0, 6, size=(2, 4))), torch.tensor(PHI))
        batch = KTBatch(tgt, src, mask)
        pseudo = top1_pseudo_labels(range(6), hs0, ht)
        fn = lambda hs: generator_loss(batch, models, hs, ht, pseudo, adv_weight=1.0).total
        worst["generator"] = max(worst["generator"], relative_error(analytic_gradient(fn, hs0),
                                                                    central_difference(fn, hs0)))
        checked["generator"] += 1
    ok = max(worst.values()) < 1e-3 and checked["triplet"] >= 10
    detail = ", ".join(f"{k} max rel err {v:.1e} over {checked[k]} points" for k, v in worst.items())
    verdict(4, "gradient checks", ok, detail)


def test_criterion_05_walk_bias():
    graph = AnchorGraph(KnowledgeGraph(6, 1, 1, [(i, 0, j) for i in range(6) for j in range(i + 1, 6)]), [0, 1, 2])
    walk = sample_walk(graph, 0, 10_001, 0.9, np.random.default_rng(5)).nodes
    cls = graph.is_anchor[walk]
    freq = float(np.mean(cls[1:] != cls[:-1]))
    verdict(5, "walk sampler bias", 0.88 <= freq <= 0.92, f"preferred-class frequency {freq:.4f} over 10000 steps")


def test_criterion_06_mask_invariants():
    rng = np.random.default_rng(6)
    n = 80
    kg = KnowledgeGraph(n, 1, 1, [(i, 0, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.06])
    counterpart = {int(t): int(s) for t, s in zip(rng.choice(n, 25, replace=False), rng.permutation(n)[:25])}
    pairs = sample_training_pairs(AnchorGraph(kg, counterpart), counterpart, 40, 10, 0.9, rng)
    bad = 0
    for p in pairs:
        for node, m, s in zip(p.target_walk.nodes.tolist(), p.mask.tolist(), p.source_walk.tolist()):
            if m != (node in counterpart) or (m and s != counterpart[node]) or (not m and s != PHI):
                bad += 1
    verdict(6, "mask invariants", len(pairs) == 1000 and bad == 0, f"{len(pairs)} pairs, {bad} violations")


def test_criterion_07_end_to_end(clean_run):
    report, elapsed, _ = clean_run
    h1 = report.metrics["hits@1"]
    verdict(7, "end-to-end synthetic benchmark", h1 >= 0.90 and elapsed < 600,
            f"DAEA hits@1={h1:.4f}, {elapsed:.0f}s")


def test_criterion_08_ablation_ordering(tmp_path):
    scores = {level: [] for level in ("name", "ma", "ke", "daea")}
    for seed in range(3):
        cfg = pl.PipelineConfig(**NOISY, seed=seed)
        prep = pl.prepare(cfg)
        scores["name"].append(pl.infer(cfg, prep, prep.names_source, prep.names_target).metrics["hits@1"])
        hs, ht = pl.embed(prep, pl.train_alignment(cfg, prep, "ma").generator.encoder)
        scores["ma"].append(pl.infer(cfg, prep, hs, ht).metrics["hits@1"])
        hs, ht = pl.embed(prep, pl.train_alignment(cfg, prep, "daea").generator.encoder)
        scores["ke"].append(pl.infer(cfg, prep, hs, ht).metrics["hits@1"])  # diagnostic only
        translator = pl.train_translation(cfg, prep, hs, ht).models.translator
        scores["daea"].append(pl.infer(cfg, prep, hs, ht, translator).metrics["hits@1"])
    mean = {k: float(np.mean(v)) for k, v in scores.items()}
    per_seed = "; ".join(f"{k}=" + "/".join(f"{x:.3f}" for x in v) for k, v in scores.items())
    verdict(8, "ablation ordering under noise", mean["daea"] >= mean["ma"] >= mean["name"],
            f"mean hits@1 daea={mean['daea']:.4f} ma={mean['ma']:.4f} name={mean['name']:.4f}; {per_seed}")


def test_criterion_09_determinism(clean_run, tmp_path):
    _, _, out = clean_run
    pl.run_pipeline(pl.PipelineConfig(**BENCH, ablation="daea", out=str(tmp_path / "again")))
    a = (out / "fwd" / "report.csv").read_bytes()
    b = (tmp_path / "again" / "report.csv").read_bytes()
    verdict(9, "determinism", a == b, f"report files {'identical' if a == b else 'differ'}, {len(a)} bytes")


def test_criterion_10_reversed_direction(clean_run):
    forward, _, out = clean_run
    rev = pl.run_pipeline(pl.PipelineConfig(**BENCH, ablation="daea", direction="rev", out=str(out / "rev")))
    written = read_report(out / "rev" / "report.csv")
    ok = len(rev) == len(forward) == len(written) and rev.direction == "reversed"
    verdict(10, "reversed direction", ok,
            f"forward {len(forward)} test pairs, reversed {len(written)}, reversed hits@1={rev.metrics['hits@1']:.4f}")
