"""Adversarial kernel embedding: a bounded critic maximizes the empirical MMD
between source and target embeddings while the encoder minimizes it together
with a seed-supervised triplet loss."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import torch
from torch import nn


class TrainingDivergedError(RuntimeError):
    pass


class Critic(nn.Module):
    """Two-layer feed-forward map with a tanh-bounded output."""

    def __init__(self, in_dim: int, width: int = 128, out_dim: int = 128, seed: int = 0):
        super().__init__()
        if out_dim < 1:
            raise ValueError("critic output dimension must be >= 1")
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        self.net = nn.Sequential(nn.Linear(in_dim, width), nn.ReLU(), nn.Linear(width, out_dim), nn.Tanh())
        torch.random.set_rng_state(gen_state)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h)


@dataclass
class MatchingConfig:
    margin: float = 1.0
    negatives_per_seed: int = 5
    critic_steps: int = 1
    encoder_lr: float = 0.005
    critic_lr: float = 1e-4
    mmd_weight: float = 1.0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.negatives_per_seed < 1:
            raise ValueError("negatives_per_seed must be >= 1")
        if self.critic_steps < 0:
            raise ValueError("critic_steps must be >= 0")


def empirical_mmd(hs: torch.Tensor, ht: torch.Tensor, critic: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
    """Squared distance between the critic-mapped column means of ``hs`` and ``ht``."""
    if hs.shape[0] == 0 or ht.shape[0] == 0:
        raise ValueError("empirical_mmd needs non-empty embedding matrices")
    if hs.shape[1] != ht.shape[1]:
        raise ValueError(f"embedding widths differ: {hs.shape[1]} vs {ht.shape[1]}")
    diff = critic(hs).mean(dim=0) - critic(ht).mean(dim=0)
    return (diff * diff).sum()


def sample_negatives(positives: np.ndarray, n_source: int, n_target: int, k: int,
                     rng: np.random.Generator) -> np.ndarray:
    """(P, 2k, 2) corrupted pairs: k with the target replaced, k with the source replaced.

    Replacements are uniform over all entities of the corrupted side,
    excluding the true counterpart.
    """
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    if len(positives) < 2:
        raise ValueError("negative sampling needs at least two training seeds")
    p = len(positives)

    def corrupt(true_ids, n):
        draw = rng.integers(0, n - 1, size=(p, k))
        return draw + (draw >= true_ids[:, None])  # skip the true id

    t_neg = corrupt(positives[:, 1], n_target)
    s_neg = corrupt(positives[:, 0], n_source)
    out = np.empty((p, 2 * k, 2), dtype=np.int64)
    out[:, :k, 0] = positives[:, :1]
    out[:, :k, 1] = t_neg
    out[:, k:, 0] = s_neg
    out[:, k:, 1] = positives[:, 1:]
    return out


def pair_distance(hs: torch.Tensor, ht: torch.Tensor, pairs) -> torch.Tensor:
    pairs = torch.as_tensor(pairs, dtype=torch.long)
    d = hs[pairs[..., 0]] - ht[pairs[..., 1]]
    return (d * d).sum(-1)


def triplet_loss(positives, negatives, hs: torch.Tensor, ht: torch.Tensor, margin: float) -> torch.Tensor:
    """Mean hinge ``max(0, d(pos) - d(neg) + margin)`` with squared Euclidean d."""
    if len(positives) == 0:
        raise ValueError("triplet loss needs at least one positive pair")
    pos = pair_distance(hs, ht, positives)
    neg = pair_distance(hs, ht, negatives)
    return torch.relu(pos[:, None] - neg + margin).mean()


@dataclass
class MatchingRecord:
    step: int
    mmd: float
    triplet: float
    total: float


@dataclass
class MatchingState:
    """``generator()`` returns the current (Hs, Ht); encoder and critic train in alternation."""

    generator: nn.Module
    critic: nn.Module
    config: MatchingConfig
    rng: np.random.Generator
    gen_opt: torch.optim.Optimizer = None
    critic_opt: Optional[torch.optim.Optimizer] = None
    step: int = 0
    history: List[MatchingRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.gen_opt is None:
            self.gen_opt = torch.optim.Adam(self.generator.parameters(), lr=self.config.encoder_lr)
        if self.critic_opt is None and self.config.critic_steps > 0:
            self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=self.config.critic_lr)


def critic_phase(state: MatchingState, hs: torch.Tensor, ht: torch.Tensor, steps: int) -> List[float]:
    """Gradient ascent on the empirical MMD with the embeddings held fixed."""
    hs, ht = hs.detach(), ht.detach()
    values = []
    for _ in range(steps):
        state.critic_opt.zero_grad()
        mmd = empirical_mmd(hs, ht, state.critic)
        (-mmd).backward()
        state.critic_opt.step()
        values.append(mmd.item())
    return values


def _check_finite(value: torch.Tensor, what: str) -> None:
    if not torch.isfinite(value):
        raise TrainingDivergedError(f"{what} became non-finite; lower the learning rate")


def train_matching_step(state: MatchingState, train_seeds: Optional[np.ndarray]) -> MatchingRecord:
    """One round of the minimax game.

    The critic ascends the MMD for ``critic_steps`` updates on frozen
    embeddings, then the encoder descends triplet + mmd_weight * MMD with
    the critic frozen. With ``mmd_weight == 0`` the MMD is only reported.
    """
    cfg = state.config
    if cfg.critic_steps > 0 and cfg.mmd_weight > 0:
        with torch.no_grad():
            hs, ht = state.generator()
        critic_phase(state, hs, ht, cfg.critic_steps)

    state.gen_opt.zero_grad()
    hs, ht = state.generator()
    total = hs.new_zeros(())
    triplet = hs.new_zeros(())
    if train_seeds is not None and len(train_seeds):
        negs = sample_negatives(train_seeds, hs.shape[0], ht.shape[0], cfg.negatives_per_seed, state.rng)
        triplet = triplet_loss(train_seeds, negs, hs, ht, cfg.margin)
        total = total + triplet
    if cfg.mmd_weight > 0:
        for p in state.critic.parameters():
            p.requires_grad_(False)
        mmd = empirical_mmd(hs, ht, state.critic)
        for p in state.critic.parameters():
            p.requires_grad_(True)
        total = total + cfg.mmd_weight * mmd
    else:
        with torch.no_grad():
            mmd = empirical_mmd(hs, ht, state.critic)
    _check_finite(total, "matching loss")
    if total.requires_grad:
        total.backward()
        state.gen_opt.step()
    state.step += 1
    rec = MatchingRecord(state.step, mmd.item(), triplet.item(), total.item())
    state.history.append(rec)
    return rec


def write_matching_log(records: List[MatchingRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mmd", "triplet", "total"])
        for r in records:
            w.writerow([r.step, f"{r.mmd:.10g}", f"{r.triplet:.10g}", f"{r.total:.10g}"])


def random_feature_mmd(x: np.ndarray, y: np.ndarray, n_features: int = 256, bandwidth: float = 1.0,
                       seed: int = 0) -> float:
    """Squared MMD under a fixed random Fourier feature map of an RBF kernel."""
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1.0 / bandwidth, size=(x.shape[1], n_features))
    b = rng.uniform(0.0, 2 * math.pi, size=n_features)
    phi = lambda z: math.sqrt(2.0 / n_features) * np.cos(z @ w + b)
    diff = phi(x).mean(0) - phi(y).mean(0)
    return float(diff @ diff)
