#!/usr/bin/env python3
"""Train the desk matrix (configs/desk.cfg by default) and print the
qualitative pattern checks next to the summary table."""

import argparse
import logging
import sys
import time
from pathlib import Path

from microfuse.config import load_config
from microfuse.experiment import run_suite, summary_table, write_suite

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(ROOT / "configs" / "desk.cfg"))
    parser.add_argument("--out", default="runs/desk")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config)
    start = time.perf_counter()
    result = run_suite(cfg.experiment, cfg.variants, cfg.data.load())
    elapsed = time.perf_counter() - start
    write_suite(result, args.out)
    print(summary_table(result.records, "test"))
    print(summary_table(result.records, "hard"))

    m = lambda model, split="test": result.mean(model, "auroc", split)
    names = {r["model"] for r in result.aggregates()}
    if {"microfuse", "concat-mlp"} <= names:
        print(f"MicroFuse - Concat-MLP AUROC: test {m('microfuse') - m('concat-mlp'):+.4f}, "
              f"hard {m('microfuse', 'hard') - m('concat-mlp', 'hard'):+.4f}")
    for ablation in sorted(n for n in names if n.startswith("microfuse:")):
        print(f"{ablation:<32} AUROC drop {m('microfuse') - m(ablation):+.4f}")
    print(f"{len(result.checkpoints)} cells in {elapsed:.0f}s, {result.failures} failed; reports in {args.out}")
    return 1 if result.failures else 0


if __name__ == "__main__":
    sys.exit(main())
