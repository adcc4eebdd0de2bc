"""Command-line entry point: ``daea <subcommand> [--config FILE] [flags]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from . import pipeline as pl
from .data import generate_synthetic_pair, parse_dataset, write_dataset
from .inference import read_report, write_summary
from .translation import load_sequence_models

log = logging.getLogger("daea")


def _config(args) -> pl.PipelineConfig:
    return pl.load_config(
        args.config,
        direction=args.direction,
        ablation=args.ablation,
        seed=args.seed,
        out=args.out,
        dataset=getattr(args, "data", None),
    )


def cmd_ingest(cfg, args):
    if not cfg.dataset:
        raise pl.StageError("ingest", "no dataset given (use --data or dataset = ... in the config)")
    try:
        pair = parse_dataset(cfg.dataset, cfg.direction)
    except Exception as exc:
        raise pl.StageError("ingest", str(exc)) from exc
    root = write_dataset(pair, Path(cfg.out) / "dataset")
    print(f"source: {pair.source.n_entities} entities, {len(pair.source.triples)} triples")
    print(f"target: {pair.target.n_entities} entities, {len(pair.target.triples)} triples")
    print(f"seeds: {len(pair.seeds)} pairs -> {root}")


def cmd_synth(cfg, args):
    pair = generate_synthetic_pair(cfg.synthetic_spec())
    root = write_dataset(pair, Path(cfg.out) / "dataset")
    print(f"synthetic pair with {pair.source.n_entities} entities/side, "
          f"{len(pair.source.triples)}/{len(pair.target.triples)} triples -> {root}")


def cmd_train(cfg, args):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    level = cfg.ablation if cfg.ablation != "daea" else "ke"
    if level == "name":
        print("ablation 'name' has no trainable stage")
        return
    prep = pl.stage_load(cfg)
    state = pl.stage_train(cfg, prep, out, level)
    last = state.history[-1]
    print(f"trained {state.step} steps: mmd={last.mmd:.4g} triplet={last.triplet:.4g} -> {out}")


def cmd_train_kt(cfg, args):
    out = Path(cfg.out)
    prep = pl.stage_load(cfg)
    hs, ht = pl.embeddings_for(cfg, prep, "daea", out, from_checkpoint=True)
    state = pl.stage_train_kt(cfg, prep, hs, ht, out)
    last = state.history[-1]
    print(f"trained {state.step} steps: disc={last.disc:.4g} reg_trans={last.reg_trans:.4g} -> {out / 'kt'}")


def cmd_infer(cfg, args):
    out = Path(cfg.out)
    prep = pl.stage_load(cfg)
    hs, ht = pl.embeddings_for(cfg, prep, cfg.ablation, out, from_checkpoint=True)
    translator = None
    if cfg.ablation == "daea":
        if not (out / "kt" / "translator.pt").exists():
            raise pl.StageError("train-kt", f"missing checkpoint {out / 'kt'}; run `train-kt` first")
        translator = load_sequence_models(out / "kt").translator
    report = pl.stage_infer(cfg, prep, hs, ht, translator, out)
    _print_metrics(report.metrics)


def cmd_eval(cfg, args):
    path = Path(args.report) if args.report else Path(cfg.out) / "report.csv"
    if not path.exists():
        raise pl.StageError("eval", f"no report at {path}")
    report = read_report(path)
    write_summary(report.metrics, path.with_name("summary.csv"))
    _print_metrics(report.metrics)


def cmd_run(cfg, args):
    _print_metrics(pl.run_pipeline(cfg).metrics)


def cmd_ablate(cfg, args):
    rows = pl.run_ablation_suite(cfg)
    print(f"{'level':<6} {'hits@1':>8} {'hits@10':>8} {'mrr':>8}")
    for level, m in rows:
        print(f"{level:<6} {m['hits@1']:>8.4f} {m['hits@10']:>8.4f} {m['mrr']:>8.4f}")


def _print_metrics(m):
    print(f"hits@1={m['hits@1']:.4f} hits@10={m['hits@10']:.4f} mrr={m['mrr']:.4f}")


COMMANDS = {
    "ingest": (cmd_ingest, "parse a DBP15K-style directory and write a normalized copy"),
    "synth": (cmd_synth, "generate a synthetic bilingual graph pair"),
    "train": (cmd_train, "stages 1-2: encoder + adversarial kernel matching"),
    "train-kt": (cmd_train_kt, "stage 3: knowledge translation from saved encoder"),
    "infer": (cmd_infer, "rank test entities from saved checkpoints"),
    "eval": (cmd_eval, "recompute metrics from a report file"),
    "ablate": (cmd_ablate, "run NAME / MA / KE / DAEA on one split"),
    "run": (cmd_run, "all stages for the chosen ablation level"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="daea", description="Dual-adversarial cross-lingual entity alignment")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--direction", choices=["fwd", "rev"])
        p.add_argument("--ablation", choices=list(pl.LEVELS))
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--data", help="dataset directory (overrides `dataset` in the config)")
        if name == "eval":
            p.add_argument("--report", help="report CSV (default: <out>/report.csv)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    try:
        cfg = _config(args)
        COMMANDS[args.command][0](cfg, args)
    except pl.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
