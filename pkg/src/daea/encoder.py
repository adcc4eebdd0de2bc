"""Shared GCN encoders over the entity/relation/attribute views, fused with name vectors."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .kg import AdjacencyView, KnowledgeGraph, build_views

FUSIONS = ("mean", "sum", "concat")


def to_torch_sparse(view, dtype=torch.float32) -> torch.Tensor:
    m = view.matrix.tocoo() if isinstance(view, AdjacencyView) else view.tocoo()
    idx = torch.from_numpy(np.vstack([m.row, m.col]).astype(np.int64))
    vals = torch.from_numpy(m.data).to(dtype)
    return torch.sparse_coo_tensor(idx, vals, m.shape, check_invariants=False).coalesce()


def _matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.sparse.mm(a, b) if a.is_sparse else a @ b


def gcn_forward(
    adjacency: torch.Tensor,
    features: Optional[torch.Tensor],
    weights: Sequence[torch.Tensor],
    propagation: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Stacked ``act(A @ X @ W)`` layers, ReLU between layers, last layer linear.

    ``features=None`` means identity features, so the first layer is
    ``A @ W`` with ``W`` truncated to A's column count. The first layer
    propagates over ``adjacency``; later layers use ``propagation``
    (the entity view for rectangular relation/attribute views) and fall
    back to ``adjacency`` when it is square.
    """
    if propagation is None and adjacency.shape[0] == adjacency.shape[1]:
        propagation = adjacency
    h = None
    for depth, w in enumerate(weights):
        if depth == 0:
            if features is None:
                if adjacency.shape[1] > w.shape[0]:
                    raise ValueError(f"view has {adjacency.shape[1]} columns but weights expect {w.shape[0]}")
                h = _matmul(adjacency, w[: adjacency.shape[1]])
            else:
                if adjacency.shape[1] != features.shape[0] or features.shape[1] != w.shape[0]:
                    raise ValueError(
                        f"shape mismatch: view {tuple(adjacency.shape)}, features {tuple(features.shape)}, "
                        f"weights {tuple(w.shape)}"
                    )
                h = _matmul(adjacency, features @ w)
        else:
            if h.shape[1] != w.shape[0]:
                raise ValueError(f"layer {depth} expects input width {w.shape[0]}, got {h.shape[1]}")
            h = torch.relu(h)
            hw = h @ w
            h = _matmul(propagation, hw) if propagation is not None else hw
    return h


def fuse_representations(parts: Sequence[torch.Tensor], mode: str = "concat") -> torch.Tensor:
    if mode not in FUSIONS:
        raise ValueError(f"unknown fusion {mode!r}")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ValueError(f"parts disagree on row count: {sorted(rows)}")
    if mode == "concat":
        return torch.cat(list(parts), dim=1)
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ValueError(f"{mode} fusion needs equal widths, got {sorted(cols)}")
    stacked = torch.stack(list(parts))
    return stacked.mean(0) if mode == "mean" else stacked.sum(0)


@dataclass
class GraphInputs:
    entity: torch.Tensor
    relation: torch.Tensor
    attribute: torch.Tensor
    names: torch.Tensor

    @property
    def n_entities(self) -> int:
        return self.names.shape[0]


def prepare_graph(kg: KnowledgeGraph, names: np.ndarray, dtype=torch.float32, views=None) -> GraphInputs:
    ent, rel, attr = views if views is not None else build_views(kg)
    if names.shape[0] != kg.n_entities:
        raise ValueError(f"{names.shape[0]} name vectors for {kg.n_entities} entities")
    return GraphInputs(
        entity=to_torch_sparse(ent, dtype),
        relation=to_torch_sparse(rel, dtype),
        attribute=to_torch_sparse(attr, dtype),
        names=torch.as_tensor(names, dtype=dtype),
    )


def _glorot(fan_in: int, fan_out: int, gen: torch.Generator) -> torch.Tensor:
    bound = (6.0 / (fan_in + fan_out)) ** 0.5
    return (torch.rand(fan_in, fan_out, generator=gen) * 2 - 1) * bound


class Encoder(nn.Module):
    """Three GCN stacks shared by the source and target graphs.

    The entity GCN reads name vectors; relation and attribute GCNs read
    identity features sized to the larger vocabulary of the two graphs.
    The name part joins the fusion untransformed.
    """

    def __init__(self, name_dim: int, n_relations: int, n_attributes: int, hidden_dim: int = 128,
                 n_layers: int = 2, fusion: str = "concat", seed: int = 0, normalize: bool = True):
        super().__init__()
        if fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {fusion!r}")
        if n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        self.config = dict(name_dim=name_dim, n_relations=n_relations, n_attributes=n_attributes,
                           hidden_dim=hidden_dim, n_layers=n_layers, fusion=fusion, seed=seed,
                           normalize=normalize)
        self.fusion = fusion
        self.normalize = normalize
        gen = torch.Generator().manual_seed(seed)

        def stack(in_dim):
            dims = [in_dim] + [hidden_dim] * n_layers
            return nn.ParameterList(nn.Parameter(_glorot(a, b, gen)) for a, b in zip(dims, dims[1:]))

        self.entity_weights = stack(name_dim)
        self.relation_weights = stack(n_relations)
        self.attribute_weights = stack(n_attributes)

    @property
    def output_dim(self) -> int:
        c = self.config
        return c["name_dim"] + 3 * c["hidden_dim"] if self.fusion == "concat" else c["hidden_dim"]

    def parts(self, g: GraphInputs):
        ent = gcn_forward(g.entity, g.names, list(self.entity_weights))
        rel = gcn_forward(g.relation, None, list(self.relation_weights), propagation=g.entity)
        attr = gcn_forward(g.attribute, None, list(self.attribute_weights), propagation=g.entity)
        return g.names, ent, rel, attr

    def forward(self, g: GraphInputs) -> torch.Tensor:
        h = fuse_representations(self.parts(g), self.fusion)
        if self.normalize:
            h = h / h.norm(dim=1, keepdim=True).clamp_min(1e-12)
        return h


@dataclass
class EmbeddingMatrix:
    rows: np.ndarray
    graph_tag: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.rows)):
            raise ValueError(f"{self.graph_tag} embeddings contain non-finite values")


def encode_graph(graph: GraphInputs, encoder: Encoder, graph_tag: str = "source") -> EmbeddingMatrix:
    with torch.no_grad():
        out = encoder(graph)
    return EmbeddingMatrix(out.detach().cpu().numpy().astype(np.float64), graph_tag)


def save_encoder(encoder: Encoder, path) -> None:
    torch.save({"config": encoder.config, "state": encoder.state_dict()}, Path(path))


def load_encoder(path) -> Encoder:
    blob = torch.load(Path(path), weights_only=True)
    enc = Encoder(**blob["config"])
    enc.load_state_dict(blob["state"])
    return enc.to(next(iter(blob["state"].values())).dtype)
