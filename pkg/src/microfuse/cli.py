"""Command-line entry point: ``microfuse <subcommand> ...``.

Every subcommand writes ``report.jsonl`` and ``summary.txt`` into its
``--out`` directory and echoes the summary to stdout.  The exit status is 0
only when every requested cell succeeded, 1 when some cell failed and 2 for
bad arguments or configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint as ckpt_io
from .config import RunConfig, dump_config, load_config
from .data import (DEFAULT_FRACTIONS, SPLITS, DataError, GenePair, PairRules, build_pairs, read_genes,
                   scaffold_split, write_genes, write_pairs)
from .experiment import (ABLATIONS, MODEL_KINDS, PairDataset, dumps_jsonl, evaluate, retrieval_eval,
                         router_diagnostics, run_suite, train, variant, write_suite)
from .metrics import MAP_DEFINITION
from .nn import ConfigError
from .synthetic import split_sizes_fractions, synth_gene_records, synth_generate

log = logging.getLogger("microfuse")

SUITE_DEFAULT = MODEL_KINDS
ABLATE_DEFAULT = tuple("microfuse" if a == "full" else f"microfuse:{a}" for a in ABLATIONS)


def _write(out: Path, records: list[dict], summary: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.jsonl").write_text(dumps_jsonl(records))
    (out / "summary.txt").write_text(summary)
    sys.stdout.write(summary)


def _kv_table(title: str, rows: dict) -> str:
    width = max((len(str(k)) for k in rows), default=0)
    lines = [title] + [f"  {str(k):<{width}}  {v}" for k, v in rows.items()]
    return "\n".join(lines) + "\n"


def _dataset(cfg: RunConfig) -> PairDataset:
    return cfg.data.load()


def _seed(cfg: RunConfig, override: int | None) -> int:
    return cfg.experiment.seeds[0] if override is None else override


# ------------------------------------------------------------ subcommands

def cmd_build_data(args) -> int:
    genes = read_genes(args.genes)
    rules = PairRules(args.pos_max_igs, args.neg_min_igs, not args.keep_divergent_out)
    pairs = build_pairs(genes, rules, tuple(args.fractions), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pairs(pairs, out / "pairs.tsv")
    records = []
    rows = {}
    for split in SPLITS:
        sel = [p for p in pairs if p.split == split]
        n_pos = sum(p.label for p in sel)
        scaffolds = len({p.scaffold_id for p in sel})
        rate = n_pos / len(sel) if sel else float("nan")
        records.append({"type": "split", "split": split, "pairs": len(sel), "positives": n_pos,
                        "positive_rate": rate, "scaffolds": scaffolds})
        rows[split] = f"{len(sel)} pairs, {scaffolds} scaffolds, positive rate {rate:.3f}"
    _write(out, records, _kv_table(f"pairs written to {out / 'pairs.tsv'}", rows))
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    src = cfg.data
    if src.world is None:
        raise ConfigError("synth needs world.* settings in the config")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = src.n_train + src.n_val + src.n_test
    data = synth_generate(src.world, n)
    splits = scaffold_split(data.scaffold_ids, split_sizes_fractions(src.n_train, src.n_val, src.n_test),
                            src.split_seed)
    data.store.save(out / "embeddings.bin")
    # synthetic pairs have no coordinates, so the spacer column is 0
    pairs = [GenePair(data.scaffold_ids[i], "a", "b", 0, True, int(data.labels[i]), splits[i],
                      float(data.identities[i]), pair_id=data.store.pair_ids[i]) for i in range(n)]
    write_pairs(pairs, out / "pairs.tsv")
    if args.gene_scaffolds:
        write_genes(synth_gene_records(args.gene_scaffolds, src.world.seed), out / "genes.tsv")
    (out / "world.cfg").write_text(dump_config(cfg))
    records = [{"type": "synth", "pairs": n, "conflict_fraction": float(data.conflict.mean()),
                "positive_rate": float(data.labels.mean()), "world": src.world.to_dict()}]
    rows = {"pairs": n, "positive rate": f"{data.labels.mean():.4f}",
            "conflict fraction": f"{data.conflict.mean():.4f}",
            "files": "embeddings.bin, pairs.tsv" + (", genes.tsv" if args.gene_scaffolds else "")}
    _write(out, records, _kv_table(f"synthetic world written to {out}", rows))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    exp = cfg.experiment
    if args.model:
        exp = variant(exp, args.model)
    seed = _seed(cfg, args.seed)
    dataset = _dataset(cfg)
    result = train(exp, dataset, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_io.save(result.checkpoint, out / "model.ckpt")
    records = [{"type": "epoch", "model": exp.name, "seed": seed, **row} for row in result.log]
    records.append({"type": "train", "model": exp.name, "seed": seed, "best_epoch": result.best_epoch,
                    "epochs_run": result.epochs_run,
                    "best_val_auroc": result.checkpoint.meta["best_val_auroc"]})
    rows = {"model": exp.name, "seed": seed, "epochs run": result.epochs_run,
            "best epoch": result.best_epoch,
            "best val AUROC": f"{result.checkpoint.meta['best_val_auroc']:.4f}",
            "checkpoint": out / "model.ckpt"}
    _write(out, records, _kv_table("training finished", rows))
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    ck = ckpt_io.load(args.checkpoint)
    dataset = _dataset(cfg)
    indices = dataset.hard_indices() if args.split == "hard" else None
    split = "test" if args.split == "hard" else args.split
    ev = evaluate(ck, dataset, split, indices)
    records = []
    for policy, rep in (("default", ev.default), ("selected", ev.selected)):
        records.append({"type": "eval", "model": ck.kind, "seed": ck.seed, "split": args.split,
                        "policy": policy, **rep.to_dict(), "map_definition": MAP_DEFINITION})
    cols = ("threshold", "auroc", "auprc", "map", "macro_f1", "macro_recall", "accuracy", "brier")
    lines = [f"{ck.kind} seed {ck.seed} on {args.split}", f"{'policy':<10}" + "".join(f"{c:>13}" for c in cols)]
    for r in records:
        lines.append(f"{r['policy']:<10}" + "".join(f"{r[c]:>13.4f}" for c in cols))
    _write(Path(args.out), records, "\n".join(lines) + "\n")
    return 0


def _grid(args, default_variants) -> int:
    cfg = load_config(args.config)
    exp = cfg.experiment
    if args.seeds:
        exp = replace(exp, seeds=tuple(args.seeds))
    variants = tuple(args.variants) if args.variants else (cfg.variants or default_variants)
    dataset = _dataset(cfg)
    result = run_suite(exp, variants, dataset)
    out = Path(args.out)
    write_suite(result, out)
    summary = (out / "summary.txt").read_text()
    sys.stdout.write(summary)
    if result.failures:
        log.error("%d of %d cells failed", result.failures, len(variants) * len(exp.seeds))
        return 1
    return 0


def cmd_suite(args) -> int:
    return _grid(args, SUITE_DEFAULT)


def cmd_ablate(args) -> int:
    return _grid(args, ABLATE_DEFAULT)


def cmd_retrieve(args) -> int:
    cfg = load_config(args.config)
    ck = ckpt_io.load(args.checkpoint)
    rep = retrieval_eval(ck, _dataset(cfg), args.split, tuple(args.k))
    records = [{"type": "retrieval", "model": ck.kind, "seed": ck.seed, "split": args.split,
                "gallery_positive_rate": rep.base_rate, **row} for row in rep.rows()]
    lines = [f"retrieval on {args.split} (gallery positive rate {rep.base_rate:.4f}; "
             "enrichment = positive precision / gallery positive rate)",
             f"{'k':>4}{'pos prec':>12}{'neg prec':>12}{'balanced':>12}{'enrichment':>12}"]
    for row in rep.rows():
        lines.append(f"{row['k']:>4}{row['positive_precision']:>12.4f}{row['negative_precision']:>12.4f}"
                     f"{row['balanced_precision']:>12.4f}{row['enrichment']:>12.4f}")
    _write(Path(args.out), records, "\n".join(lines) + "\n")
    return 0


def cmd_router_stats(args) -> int:
    cfg = load_config(args.config)
    ck = ckpt_io.load(args.checkpoint)
    means = router_diagnostics(ck, _dataset(cfg), args.split)
    records = [{"type": "router", "model": ck.kind, "seed": ck.seed, "split": args.split, **means}]
    _write(Path(args.out), records,
           _kv_table(f"mean router weight per expert on {args.split}",
                     {k: f"{v:.4f}" for k, v in means.items()}))
    return 0


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="microfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-data", help="gene TSV -> balanced, scaffold-split pair manifest")
    p.add_argument("--genes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pos-max-igs", type=int, default=PairRules.pos_max_igs)
    p.add_argument("--neg-min-igs", type=int, default=PairRules.neg_min_igs)
    p.add_argument("--keep-divergent-out", action="store_true",
                   help="do not label divergent pairs as negatives")
    p.add_argument("--fractions", type=float, nargs=3, default=list(DEFAULT_FRACTIONS),
                   metavar=("TRAIN", "VAL", "TEST"))
    p.set_defaults(func=cmd_build_data)

    p = sub.add_parser("synth", help="world config -> embedding store + pair manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gene-scaffolds", type=int, default=0,
                   help="also write a synthetic gene TSV with this many scaffolds")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="config -> checkpoint + training log")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--model", help="override model, e.g. concat-mlp or microfuse:no_xmod")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="checkpoint + split -> metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=SPLITS + ("hard",))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    for name, func, default in (("suite", cmd_suite, SUITE_DEFAULT), ("ablate", cmd_ablate, ABLATE_DEFAULT)):
        p = sub.add_parser(name, help=f"train and evaluate every variant x seed (default: {','.join(default)})")
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--variants", nargs="+")
        p.add_argument("--seeds", type=int, nargs="+")
        p.set_defaults(func=func)

    p = sub.add_parser("retrieve", help="cross-scaffold nearest-neighbour retrieval on fused representations")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--k", type=int, nargs="+", default=[1, 3, 5, 10])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("router-stats", help="mean router weight per expert")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_router_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, DataError, ckpt_io.CheckpointError, FileNotFoundError) as exc:
        print(f"microfuse {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # a failed cell outside the suite runner
        log.debug("traceback", exc_info=True)
        print(f"microfuse {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
