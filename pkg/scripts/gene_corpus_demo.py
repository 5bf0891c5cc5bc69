#!/usr/bin/env python3
"""Generate an annotated synthetic gene table, build the labelled pair
manifest from it and print the corpus statistics."""

import argparse
from pathlib import Path

import numpy as np

from microfuse.data import build_pairs, hard_subset, write_genes, write_pairs
from microfuse.synthetic import synth_gene_records


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scaffolds", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/genes")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    genes = synth_gene_records(args.scaffolds, args.seed)
    write_genes(genes, out / "genes.tsv")
    pairs = build_pairs(genes, seed=args.seed)
    write_pairs(pairs, out / "pairs.tsv")

    print(f"{len(genes)} genes on {args.scaffolds} scaffolds -> {len(pairs)} balanced pairs")
    print(f"{'split':<7}{'pairs':>8}{'pos rate':>10}{'pos IGS':>10}{'neg IGS':>10}")
    for split in ("train", "val", "test"):
        sel = [p for p in pairs if p.split == split]
        pos = [p.igs for p in sel if p.label == 1]
        neg = [p.igs for p in sel if p.label == 0]
        print(f"{split:<7}{len(sel):>8}{len(pos) / len(sel):>10.3f}{np.mean(pos):>10.1f}{np.mean(neg):>10.1f}")
    test = [p for p in pairs if p.split == "test"]
    hard = hard_subset(np.array([p.identity for p in test]), np.array([p.label for p in test]),
                       [p.pair_id for p in test])
    print(f"hard subset: {hard.size} of {len(test)} test pairs ({hard.size / len(test):.1%})")


if __name__ == "__main__":
    main()
