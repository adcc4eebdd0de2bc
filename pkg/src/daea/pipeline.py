"""Three-stage alignment pipeline: multi-aspect encoding and kernel matching
(trained jointly), then knowledge translation on frozen embeddings, then
ranked inference."""
from __future__ import annotations

import dataclasses
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from torch import nn

from .data import (DatasetPair, SyntheticSpec, generate_synthetic_pair, normalize_direction, parse_dataset,
                   split_seeds)
from .encoder import Encoder, GraphInputs, encode_graph, load_encoder, prepare_graph, save_encoder
from .inference import (DEFAULT_STRATEGY, STRATEGIES, AlignmentReport, consolidate, evaluate_queries,
                        group_translations, sample_inference_walks, translate_walks, write_report)
from .matching import Critic, MatchingConfig, MatchingState, train_matching_step, write_matching_log
from .names import load_pretrained_vectors, table_from_labels
from .translation import (KTConfig, save_sequence_models, train_knowledge_translation,
                          write_kt_log)
from .walks import AnchorGraph

log = logging.getLogger(__name__)

LEVELS = ("name", "ma", "ke", "daea")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    # data
    dataset: str = ""
    direction: str = "fwd"
    name_vectors_1: str = ""
    name_vectors_2: str = ""
    train_fraction: float = 0.3
    n_entities: int = 500
    n_relations: int = 10
    n_attributes: int = 20
    edge_probability: float = 0.02
    edge_drop_rate: float = 0.0
    attribute_probability: float = 0.1
    name_dim: int = 64
    name_noise: float = 0.0
    # run
    ablation: str = "daea"
    seed: int = 0
    out: str = "runs/default"
    # encoder + kernel matching
    hidden_dim: int = 128
    n_layers: int = 2
    fusion: str = "concat"
    matching_steps: int = 300
    margin: float = 1.0
    negatives_per_seed: int = 5
    critic_steps: int = 1
    encoder_lr: float = 0.005
    critic_lr: float = 1e-4
    mmd_weight: float = 1.0
    critic_width: int = 128
    critic_dim: int = 128
    # knowledge translation
    walk_length: int = 10
    walk_bias: float = 0.9
    walks_per_anchor: int = 5
    kt_epochs: int = 5
    kt_batch_size: int = 32
    kt_hidden: int = 128
    kt_generator_lr: float = 0.001
    kt_discriminator_lr: float = 0.001
    adv_weight: float = 0.1
    # inference
    strategy: str = DEFAULT_STRATEGY
    inference_walks: int = 5

    def __post_init__(self):
        self.direction = {"forward": "fwd", "reversed": "rev"}.get(self.direction, self.direction)
        normalize_direction(self.direction)
        if self.ablation not in LEVELS:
            raise ValueError(f"unknown ablation level {self.ablation!r}; expected one of {LEVELS}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            n_entities=self.n_entities, n_relations=self.n_relations, n_attributes=self.n_attributes,
            edge_probability=self.edge_probability, edge_drop_rate=self.edge_drop_rate,
            seed_fraction=self.train_fraction, rng_seed=self.seed,
            attribute_probability=self.attribute_probability, name_dim=self.name_dim, name_noise=self.name_noise,
        )

    def matching_config(self, level: str) -> MatchingConfig:
        adversarial = level in ("ke", "daea")
        return MatchingConfig(
            margin=self.margin, negatives_per_seed=self.negatives_per_seed,
            critic_steps=self.critic_steps if adversarial else 0,
            encoder_lr=self.encoder_lr, critic_lr=self.critic_lr,
            mmd_weight=self.mmd_weight if adversarial else 0.0,
        )

    def kt_config(self) -> KTConfig:
        return KTConfig(
            walk_length=self.walk_length, walk_bias=self.walk_bias, walks_per_anchor=self.walks_per_anchor,
            epochs=self.kt_epochs, batch_size=self.kt_batch_size, hidden=self.kt_hidden,
            generator_lr=self.kt_generator_lr, discriminator_lr=self.kt_discriminator_lr,
            adv_weight=self.adv_weight,
        )

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


def _coerce(name: str, raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    try:
        return type(default)(raw)
    except ValueError:
        raise ValueError(f"config key {name!r}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config_text(text: str) -> Dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, **overrides) -> PipelineConfig:
    """Flat ``key = value`` file; keyword overrides win over file values."""
    defaults = PipelineConfig()
    known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(PipelineConfig)}
    values = {}
    if path:
        for key, raw in parse_config_text(Path(path).read_text(encoding="utf-8")).items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw, known[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


# -- data ----------------------------------------------------------------

@dataclass
class Prepared:
    pair: DatasetPair
    names_source: np.ndarray
    names_target: np.ndarray
    source: GraphInputs
    target: GraphInputs

    @property
    def train(self) -> np.ndarray:
        return self.pair.seeds.train

    @property
    def test(self) -> np.ndarray:
        return self.pair.seeds.test

    def candidates(self) -> np.ndarray:
        used = set(self.train[:, 1].tolist())
        return np.array([i for i in range(self.pair.target.n_entities) if i not in used], dtype=np.int64)


def load_pair(cfg: PipelineConfig) -> DatasetPair:
    if cfg.dataset:
        pair = parse_dataset(cfg.dataset, "fwd")
        if not pair.seeds.is_train.any():
            pair.seeds = split_seeds(pair.seeds, cfg.train_fraction, cfg.seed)
    else:
        pair = generate_synthetic_pair(cfg.synthetic_spec())
    return pair.oriented(cfg.direction)


def _names_for(kg, table, vector_path: str, dim: int) -> np.ndarray:
    if table is None and vector_path:
        table = load_pretrained_vectors(vector_path, dim)
    if table is None:
        table = table_from_labels(kg.labels or {}, kg.n_entities, dim)
    return table.matrix(kg.n_entities, kg.labels)


def prepare(cfg: PipelineConfig) -> Prepared:
    pair = load_pair(cfg)
    swap = normalize_direction(cfg.direction) == "reversed"
    path_s, path_t = (cfg.name_vectors_2, cfg.name_vectors_1) if swap else (cfg.name_vectors_1, cfg.name_vectors_2)
    ns = _names_for(pair.source, pair.source_names, path_s, cfg.name_dim)
    nt = _names_for(pair.target, pair.target_names, path_t, cfg.name_dim)
    return Prepared(pair, ns, nt, prepare_graph(pair.source, ns), prepare_graph(pair.target, nt))


# -- stages 1-2 ------------------------------------------------------------

class PairGenerator(nn.Module):
    """Runs the shared encoder over both graphs."""

    def __init__(self, encoder: Encoder, source: GraphInputs, target: GraphInputs):
        super().__init__()
        self.encoder = encoder
        self.source = source
        self.target = target

    def forward(self):
        return self.encoder(self.source), self.encoder(self.target)


def build_encoder(cfg: PipelineConfig, prep: Prepared) -> Encoder:
    return Encoder(
        name_dim=prep.names_source.shape[1],
        n_relations=max(prep.pair.source.n_relations, prep.pair.target.n_relations),
        n_attributes=max(prep.pair.source.n_attributes, prep.pair.target.n_attributes),
        hidden_dim=cfg.hidden_dim, n_layers=cfg.n_layers, fusion=cfg.fusion, seed=cfg.seed,
    )


def train_alignment(cfg: PipelineConfig, prep: Prepared, level: str) -> MatchingState:
    encoder = build_encoder(cfg, prep)
    critic = Critic(encoder.output_dim, cfg.critic_width, cfg.critic_dim, seed=cfg.seed + 1)
    state = MatchingState(PairGenerator(encoder, prep.source, prep.target), critic, cfg.matching_config(level),
                          np.random.default_rng([cfg.seed, 2]))
    for _ in range(cfg.matching_steps):
        train_matching_step(state, prep.train)
    return state


def embed(prep: Prepared, encoder: Encoder) -> Tuple[np.ndarray, np.ndarray]:
    return encode_graph(prep.source, encoder, "source").rows, encode_graph(prep.target, encoder, "target").rows


# -- stage 3 + inference ---------------------------------------------------

def train_translation(cfg: PipelineConfig, prep: Prepared, hs: np.ndarray, ht: np.ndarray):
    counterpart = {int(t): int(s) for s, t in prep.train}
    graph = AnchorGraph(prep.pair.target, counterpart)
    return train_knowledge_translation(
        torch.as_tensor(hs, dtype=torch.float32), torch.as_tensor(ht, dtype=torch.float32),
        graph, counterpart, cfg.kt_config(), seed=cfg.seed + 2,
    )


def translated_queries(cfg: PipelineConfig, prep: Prepared, hs: np.ndarray, translator) -> np.ndarray:
    test_src = prep.test[:, 0]
    graph = AnchorGraph(prep.pair.source, prep.train[:, 0].tolist())
    rng = np.random.default_rng([cfg.seed, 4])
    walks = sample_inference_walks(graph, test_src, cfg.inference_walks, cfg.walk_length, cfg.walk_bias, rng)
    translated = translate_walks(walks, translator, hs)
    confidence = graph.is_anchor[walks].sum(axis=1)
    groups = group_translations(walks, translated, confidence, test_src)
    return np.stack([consolidate(groups.get(int(e), []), cfg.strategy, hs[e]) for e in test_src])


def infer(cfg: PipelineConfig, prep: Prepared, hs: np.ndarray, ht: np.ndarray, translator=None) -> AlignmentReport:
    if translator is None:
        queries = hs[prep.test[:, 0]]
    else:
        queries = translated_queries(cfg, prep, hs, translator)
    return evaluate_queries(queries, prep.test, ht, prep.candidates(), normalize_direction(cfg.direction))


# -- orchestration ---------------------------------------------------------

def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:  # re-raised with the stage tag
                raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
        return inner
    return wrap


@_stage("load")
def stage_load(cfg):
    return prepare(cfg)


@_stage("train")
def stage_train(cfg, prep, out: Optional[Path], level=None):
    level = level or cfg.ablation
    state = train_alignment(cfg, prep, level)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_encoder(state.generator.encoder, out / "encoder.pt")
        torch.save({"config": dict(in_dim=state.generator.encoder.output_dim, width=cfg.critic_width,
                                   out_dim=cfg.critic_dim, seed=cfg.seed + 1),
                    "state": state.critic.state_dict()}, out / "critic.pt")
        write_matching_log(state.history, out / "matching_loss.csv")
    return state


@_stage("train-kt")
def stage_train_kt(cfg, prep, hs, ht, out: Optional[Path]):
    state = train_translation(cfg, prep, hs, ht)
    if out is not None:
        save_sequence_models(state.models, out / "kt")
        write_kt_log(state.history, out / "kt_loss.csv")
    return state


@_stage("infer")
def stage_infer(cfg, prep, hs, ht, translator, out: Optional[Path]):
    report = infer(cfg, prep, hs, ht, translator)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_report(report, out / "report.csv", out / "summary.csv")
    return report


def embeddings_for(cfg: PipelineConfig, prep: Prepared, level: str, out: Optional[Path] = None,
                   from_checkpoint: bool = False):
    if level == "name":
        return prep.names_source, prep.names_target
    if from_checkpoint:
        encoder = _load_stage(out / "encoder.pt", "train", load_encoder)
    else:
        encoder = stage_train(cfg, prep, out, level).generator.encoder
    return embed(prep, encoder)


def _load_stage(path: Path, stage: str, loader):
    if not path.exists():
        raise StageError(stage, f"missing checkpoint {path}; run `{stage}` first")
    return loader(path)


def run_pipeline(cfg: PipelineConfig, persist: bool = True) -> AlignmentReport:
    """Run every stage the ablation level calls for, writing artifacts to ``cfg.out``."""
    torch.set_num_threads(1)
    out = Path(cfg.out) if persist else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    prep = stage_load(cfg)
    hs, ht = embeddings_for(cfg, prep, cfg.ablation, out)
    translator = None
    if cfg.ablation == "daea":
        translator = stage_train_kt(cfg, prep, hs, ht, out).models.translator
    return stage_infer(cfg, prep, hs, ht, translator, out)


def run_ablation_suite(cfg: PipelineConfig, persist: bool = True) -> List[Tuple[str, Dict[str, float]]]:
    """All four levels on one split; the DAEA row reuses the KE encoder (same seed, same stages)."""
    torch.set_num_threads(1)
    base = Path(cfg.out)
    prep = stage_load(cfg)
    rows = []
    cached = {}
    for level in LEVELS:
        lcfg = cfg.replace(ablation=level, out=str(base / level))
        out = Path(lcfg.out) if persist else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.txt").write_text(lcfg.dumps(), encoding="utf-8")
        if level == "daea" and "ke" in cached:
            hs, ht = cached["ke"]
            if out is not None:
                for name in ("encoder.pt", "critic.pt", "matching_loss.csv"):
                    shutil.copyfile(base / "ke" / name, out / name)
        else:
            hs, ht = embeddings_for(lcfg, prep, level, out)
        cached[level] = (hs, ht)
        translator = stage_train_kt(lcfg, prep, hs, ht, out).models.translator if level == "daea" else None
        report = stage_infer(lcfg, prep, hs, ht, translator, out)
        rows.append((level, report.metrics))
    if persist:
        write_ablation_table(rows, base / "ablation.csv")
    return rows


def write_ablation_table(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("level,hits@1,hits@10,mrr\n")
        for level, m in rows:
            fh.write(f"{level},{m['hits@1']:.6f},{m['hits@10']:.6f},{m['mrr']:.6f}\n")
