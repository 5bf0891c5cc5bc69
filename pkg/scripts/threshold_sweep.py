#!/usr/bin/env python3
"""Print the validation macro-F1 / accuracy sweep over the 199-point
threshold grid for one trained checkpoint, as a numeric table."""

import argparse

from microfuse import checkpoint as ckpt_io
from microfuse.config import load_config
from microfuse.experiment import from_checkpoint, predict
from microfuse.metrics import select_threshold, thresholded_metrics, threshold_sweep


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", required=True)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--every", type=int, default=10, help="print every n-th grid point")
    args = parser.parse_args()

    dataset = load_config(args.config).data.load()
    model = from_checkpoint(ckpt_io.load(args.checkpoint))
    va, te = dataset.indices("val"), dataset.indices("test")
    val_prob = predict(model, dataset.x_p[va], dataset.x_b[va])["prob"]
    sweep = threshold_sweep(val_prob, dataset.labels[va])
    t_star = select_threshold(sweep)

    print(f"{'threshold':>10}{'val macro-F1':>14}{'val accuracy':>14}{'predicted +':>13}")
    for i, row in enumerate(sweep.rows()):
        if i % args.every == 0 or row["threshold"] == t_star:
            mark = "  <- selected" if row["threshold"] == t_star else ""
            print(f"{row['threshold']:>10.3f}{row['macro_f1']:>14.4f}{row['accuracy']:>14.4f}"
                  f"{row['positive_rate']:>13.3f}{mark}")
    test_prob = predict(model, dataset.x_p[te], dataset.x_b[te])["prob"]
    for name, t in (("default", 0.5), ("selected", t_star)):
        f1, rec, acc = thresholded_metrics(test_prob, dataset.labels[te], t)
        print(f"test at {name} threshold {t:.3f}: macro-F1 {f1:.4f}, macro-recall {rec:.4f}, accuracy {acc:.4f}")


if __name__ == "__main__":
    main()
