"""Fill-and-translate GAN over masked walk pairs.

The filler imputes masked source positions, the translator maps the filled
source walk into target space, and the discriminator scores each position
as a real target node or a translated one. Embeddings from the matching
stage are frozen here.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .walks import AnchorGraph, MaskedWalkPair, sample_training_pairs

PROB_EPS = 1e-6
DIVERGENCE_LIMIT = 1e6


class Filler(nn.Module):
    """Bidirectional encoder over the masked walk, then a left-to-right decoder
    fed its previous output. Anchor positions pass through unchanged."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.encoder = nn.LSTM(dim + 1, hidden, batch_first=True, bidirectional=True)
        self.decoder = nn.LSTMCell(2 * hidden + dim, hidden)
        self.head = nn.Linear(hidden, dim)

    def forward(self, ws: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        m = mask.to(ws.dtype).unsqueeze(-1)
        context, _ = self.encoder(torch.cat([ws, m], dim=-1))
        b, length, dim = ws.shape
        h = ws.new_zeros(b, self.decoder.hidden_size)
        c = ws.new_zeros(b, self.decoder.hidden_size)
        prev = ws.new_zeros(b, dim)
        outputs = []
        for step in range(length):
            h, c = self.decoder(torch.cat([context[:, step], prev], dim=-1), (h, c))
            out = torch.where(mask[:, step].unsqueeze(-1), ws[:, step], self.head(h))
            outputs.append(out)
            prev = out
        return torch.stack(outputs, dim=1)


class Translator(nn.Module):
    """Bidirectional LSTM with a residual head; starts as the identity map.

    Each step also sees its mask bit, so imputed positions can be treated
    differently from observed ones. Without a mask every position counts
    as observed, which is the inference setting.
    """

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.rnn = nn.LSTM(dim + 1, hidden, batch_first=True, bidirectional=True)
        self.head = nn.Linear(2 * hidden, dim)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        m = x.new_ones(x.shape[:-1]) if mask is None else mask.to(x.dtype)
        h, _ = self.rnn(torch.cat([x, m.unsqueeze(-1)], dim=-1))
        return x + self.head(h)


class Discriminator(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.rnn = nn.LSTM(dim + 1, hidden, batch_first=True, bidirectional=True)
        self.head = nn.Linear(2 * hidden, 1)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        m = mask.to(x.dtype).unsqueeze(-1)
        h, _ = self.rnn(torch.cat([x, m], dim=-1))
        return torch.sigmoid(self.head(h)).squeeze(-1)


class SequenceModels(nn.Module):
    def __init__(self, dim: int, hidden: int = 128, seed: int = 0):
        super().__init__()
        self.config = dict(dim=dim, hidden=hidden, seed=seed)
        state = torch.random.get_rng_state()
        torch.manual_seed(seed)
        self.filler = Filler(dim, hidden)
        self.translator = Translator(dim, hidden)
        self.discriminator = Discriminator(dim, hidden)
        torch.random.set_rng_state(state)
        self.placeholder = nn.Parameter(torch.zeros(dim))

    def generator_parameters(self):
        return [*self.filler.parameters(), *self.translator.parameters(), self.placeholder]


@dataclass
class KTBatch:
    target_nodes: torch.Tensor  # (B, L) long
    source_nodes: torch.Tensor  # (B, L) long, PHI at masked positions
    mask: torch.Tensor  # (B, L) bool

    @classmethod
    def from_pairs(cls, pairs: Sequence[MaskedWalkPair]) -> "KTBatch":
        return cls(
            torch.as_tensor(np.stack([p.target_walk.nodes for p in pairs]), dtype=torch.long),
            torch.as_tensor(np.stack([p.source_walk for p in pairs]), dtype=torch.long),
            torch.as_tensor(np.stack([p.mask for p in pairs]), dtype=torch.bool),
        )

    def resolve(self, hs: torch.Tensor, ht: torch.Tensor, placeholder: torch.Tensor):
        """Embedding sequences (W_t, W_s) with the placeholder at masked positions."""
        wt = ht[self.target_nodes]
        ws = hs[self.source_nodes.clamp(min=0)]
        ws = torch.where(self.mask.unsqueeze(-1), ws, placeholder.expand_as(ws))
        return wt, ws


def filler_forward(ws: torch.Tensor, mask: torch.Tensor, models: SequenceModels) -> torch.Tensor:
    return models.filler(ws, mask)


def translator_forward(filled: torch.Tensor, models: SequenceModels, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    return models.translator(filled, mask)


def discriminator_forward(seq: torch.Tensor, mask: torch.Tensor, models: SequenceModels) -> torch.Tensor:
    """Per-position probability of being a real target node."""
    return models.discriminator(seq, mask)


def sequence_log_score(probs: torch.Tensor) -> torch.Tensor:
    """log of the walk score, the product of per-position probabilities."""
    return torch.log(probs.clamp(PROB_EPS, 1 - PROB_EPS)).sum(-1)


def adversarial_terms(real_probs: torch.Tensor, fake_probs: torch.Tensor):
    """(gen_term, disc_term) from per-position discriminator outputs.

    disc_term = -sum_l [log p_real + log(1 - p_fake)], gen_term =
    -sum_l log p_fake (non-saturating); both averaged over walks.
    """
    real = real_probs.clamp(PROB_EPS, 1 - PROB_EPS)
    fake = fake_probs.clamp(PROB_EPS, 1 - PROB_EPS)
    disc = -(torch.log(real) + torch.log1p(-fake)).sum(-1).mean()
    gen = -torch.log(fake).sum(-1).mean()
    if not (torch.isfinite(disc) and torch.isfinite(gen)):
        raise FloatingPointError("adversarial loss is non-finite")
    return gen, disc


def adversarial_loss(real: torch.Tensor, fake: torch.Tensor, mask: torch.Tensor, models: SequenceModels):
    return adversarial_terms(discriminator_forward(real, mask, models), discriminator_forward(fake, mask, models))


def top1_pseudo_labels(target_nodes, hs: torch.Tensor, ht: torch.Tensor, chunk: int = 1024) -> torch.Tensor:
    """Nearest source row (squared Euclidean) for each target node; ties go to the smaller id."""
    nodes = torch.as_tensor(target_nodes, dtype=torch.long).reshape(-1)
    out = torch.empty(len(nodes), dtype=torch.long)
    hs64 = hs.detach().double()
    for start in range(0, len(nodes), chunk):
        q = ht.detach().double()[nodes[start:start + chunk]]
        d = ((q[:, None, :] - hs64[None, :, :]) ** 2).sum(-1)
        out[start:start + chunk] = torch.argmin(d, dim=1)  # first minimum
    return out


def top1_pseudo_label(target_node: int, hs, ht) -> int:
    return int(top1_pseudo_labels([target_node], torch.as_tensor(hs), torch.as_tensor(ht))[0])


@dataclass
class GeneratorTerms:
    total: torch.Tensor
    gen: torch.Tensor
    reg_fill: torch.Tensor
    reg_trans: torch.Tensor


def generator_loss(batch: KTBatch, models: SequenceModels, hs: torch.Tensor, ht: torch.Tensor,
                   pseudo: torch.Tensor, adv_weight: float = 1.0) -> GeneratorTerms:
    """adv_weight * gen_term + mean squared distance of filled nodes to their
    references + mean squared distance of translated nodes to the real walk.

    The filler reference is the anchor's own embedding at masked-in
    positions and the pseudo-labelled source row elsewhere. ``pseudo``
    maps every target id to its top-1 source id.
    """
    wt, ws = batch.resolve(hs, ht, models.placeholder)
    filled = filler_forward(ws, batch.mask, models)
    translated = translator_forward(filled, models, batch.mask)
    ref = torch.where(batch.mask.unsqueeze(-1), ws, hs[pseudo[batch.target_nodes]])
    reg_fill = ((filled - ref) ** 2).sum(-1).mean()
    reg_trans = ((translated - wt) ** 2).sum(-1).mean()
    if adv_weight:
        gen = -sequence_log_score(discriminator_forward(translated, batch.mask, models)).mean()
    else:
        gen = wt.new_zeros(())
    return GeneratorTerms(adv_weight * gen + reg_fill + reg_trans, gen, reg_fill, reg_trans)


@dataclass
class KTConfig:
    walk_length: int = 10
    walk_bias: float = 0.9
    walks_per_anchor: int = 5
    epochs: int = 5
    batch_size: int = 32
    hidden: int = 128
    generator_lr: float = 1e-3
    discriminator_lr: float = 1e-3
    adv_weight: float = 0.1


@dataclass
class KTRecord:
    step: int
    disc: float
    gen: float
    reg_fill: float
    reg_trans: float


class KTDivergedError(RuntimeError):
    pass


@dataclass
class KTState:
    models: SequenceModels
    hs: torch.Tensor
    ht: torch.Tensor
    pseudo: torch.Tensor
    config: KTConfig
    gen_opt: Optional[torch.optim.Optimizer] = None
    disc_opt: Optional[torch.optim.Optimizer] = None
    step: int = 0
    history: List[KTRecord] = field(default_factory=list)

    def __post_init__(self):
        self.hs = self.hs.detach()
        self.ht = self.ht.detach()
        if self.gen_opt is None:
            self.gen_opt = torch.optim.Adam(self.models.generator_parameters(), lr=self.config.generator_lr)
        if self.disc_opt is None:
            self.disc_opt = torch.optim.Adam(self.models.discriminator.parameters(), lr=self.config.discriminator_lr)


def discriminator_step(state: KTState, batch: KTBatch) -> float:
    m = state.models
    with torch.no_grad():
        wt, ws = batch.resolve(state.hs, state.ht, m.placeholder)
        fake = translator_forward(filler_forward(ws, batch.mask, m), m, batch.mask)
    state.disc_opt.zero_grad()
    _, disc = adversarial_loss(wt, fake, batch.mask, m)
    disc.backward()
    state.disc_opt.step()
    return disc.item()


def train_kt_step(state: KTState, batch: KTBatch) -> KTRecord:
    """One discriminator update, then one joint filler + translator update."""
    disc = discriminator_step(state, batch)
    m = state.models
    for p in m.discriminator.parameters():
        p.requires_grad_(False)
    try:
        state.gen_opt.zero_grad()
        terms = generator_loss(batch, m, state.hs, state.ht, state.pseudo, state.config.adv_weight)
        total = terms.total.item()
        if not math.isfinite(total) or abs(total) > DIVERGENCE_LIMIT or disc > DIVERGENCE_LIMIT:
            raise KTDivergedError(f"knowledge translation diverged (loss {total:.3g}); lower the learning rate")
        terms.total.backward()
        state.gen_opt.step()
    finally:
        for p in m.discriminator.parameters():
            p.requires_grad_(True)
    state.step += 1
    rec = KTRecord(state.step, disc, terms.gen.item(), terms.reg_fill.item(), terms.reg_trans.item())
    state.history.append(rec)
    return rec


def train_knowledge_translation(hs: torch.Tensor, ht: torch.Tensor, target_graph: AnchorGraph,
                                counterpart: dict, config: KTConfig, seed: int) -> KTState:
    """Walks are resampled from every target anchor at each epoch."""
    models = SequenceModels(hs.shape[1], config.hidden, seed=seed).to(hs.dtype)
    pseudo = top1_pseudo_labels(torch.arange(ht.shape[0]), hs, ht)
    state = KTState(models, hs, ht, pseudo, config)
    rng = np.random.default_rng([seed, 3])
    for _ in range(config.epochs):
        pairs = sample_training_pairs(target_graph, counterpart, config.walks_per_anchor,
                                      config.walk_length, config.walk_bias, rng)
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), config.batch_size):
            batch = KTBatch.from_pairs([pairs[i] for i in order[start:start + config.batch_size]])
            train_kt_step(state, batch)
    return state


def write_kt_log(records: List[KTRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "disc", "gen", "reg_fill", "reg_trans"])
        for r in records:
            w.writerow([r.step, f"{r.disc:.10g}", f"{r.gen:.10g}", f"{r.reg_fill:.10g}", f"{r.reg_trans:.10g}"])


def save_sequence_models(models: SequenceModels, directory) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in ("filler", "translator", "discriminator"):
        state = getattr(models, name).state_dict()
        if name == "filler":
            state = {**state, "placeholder": models.placeholder.detach().clone()}
        path = directory / f"{name}.pt"
        torch.save({"config": models.config, "state": state}, path)
        paths.append(path)
    return paths


def load_sequence_models(directory) -> SequenceModels:
    directory = Path(directory)
    blobs = {n: torch.load(directory / f"{n}.pt", weights_only=True) for n in ("filler", "translator", "discriminator")}
    cfg = blobs["filler"]["config"]
    dtype = blobs["translator"]["state"]["head.weight"].dtype
    models = SequenceModels(**cfg).to(dtype)
    fill_state = dict(blobs["filler"]["state"])
    with torch.no_grad():
        models.placeholder.copy_(fill_state.pop("placeholder"))
    models.filler.load_state_dict(fill_state)
    models.translator.load_state_dict(blobs["translator"]["state"])
    models.discriminator.load_state_dict(blobs["discriminator"]["state"])
    return models
