"""Training, ablations, evaluation, router diagnostics, retrieval and the
multi-seed suite.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .data import EmbeddingStore, GenePair, hard_subset, normalize
from .losses import LossConfig, bce_loss, disagreement_supcon, total_loss, xmod_infonce
from .metrics import (MAP_DEFINITION, MetricReport, auroc, metric_report, select_threshold,
                      threshold_sweep)
from .model import BASELINE_KINDS, EXPERTS, FusionConfig, FusionModel, build_model
from .nn import AdamW, ConfigError, substream
from .synthetic import SyntheticWorld, split_sizes_fractions, synth_generate

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_disagreement_weighting", "no_interaction_experts", "no_conflict_expert",
             "no_supcon", "ce_only", "no_xmod")
MODEL_KINDS = ("microfuse",) + BASELINE_KINDS
METRIC_FIELDS = ("auroc", "auprc", "map", "macro_f1", "macro_recall", "accuracy", "brier")
EVAL_BATCH = 4096


class TrainingError(RuntimeError):
    pass


class UnsupportedModelError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "microfuse"
    ablation: str = "full"
    fusion: FusionConfig = FusionConfig()
    loss: LossConfig = LossConfig()
    lr: float = 8e-4
    weight_decay: float = 1e-4
    batch_size: int = 4096
    max_epochs: int = 70
    patience: int = 14
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model!r}; expected one of {MODEL_KINDS}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if self.model != "microfuse" and self.ablation != "full":
            raise ConfigError("ablations apply to the microfuse model only")
        if not self.patience < self.max_epochs:
            raise ConfigError("patience must be smaller than max_epochs")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")

    @property
    def name(self) -> str:
        if self.model == "microfuse" and self.ablation != "full":
            return f"microfuse:{self.ablation}"
        return self.model


def apply_ablation(kind: str, fusion: FusionConfig, loss: LossConfig) -> tuple[FusionConfig, LossConfig]:
    """Map an ablation name to the single structural or loss change it stands for."""
    if kind == "full":
        return fusion, loss
    if kind == "no_disagreement_weighting":
        return fusion, replace(loss, disagreement_weighting=False)
    if kind == "no_interaction_experts":
        return replace(fusion, experts=("protein", "genome")), loss
    if kind == "no_conflict_expert":
        return replace(fusion, experts=("protein", "genome", "agreement")), loss
    if kind == "no_supcon":
        return fusion, replace(loss, lambda_sup=0.0)
    if kind == "no_xmod":
        return fusion, replace(loss, lambda_xmod=0.0)
    if kind == "ce_only":
        return fusion, replace(loss, lambda_xmod=0.0, lambda_sup=0.0)
    raise ConfigError(f"unknown ablation {kind!r}; expected one of {ABLATIONS}")


def variant(config: ExperimentConfig, name: str) -> ExperimentConfig:
    """``microfuse``, a baseline kind, or ``microfuse:<ablation>``."""
    if ":" in name:
        model, ablation = name.split(":", 1)
    else:
        model, ablation = name, "full"
    return replace(config, model=model, ablation=ablation)


# ---------------------------------------------------------------- datasets

@dataclass
class PairDataset:
    pair_ids: list[str]
    x_p: np.ndarray
    x_b: np.ndarray
    labels: np.ndarray
    splits: np.ndarray
    scaffold_ids: np.ndarray
    identities: np.ndarray | None = None
    conflict: np.ndarray | None = None
    source: dict = field(default_factory=dict)

    def indices(self, split: str) -> np.ndarray:
        idx = np.nonzero(self.splits == split)[0]
        if idx.size == 0:
            raise ValueError(f"split {split!r} is empty")
        return idx

    def hard_indices(self) -> np.ndarray:
        if self.identities is None:
            raise ValueError("hard subset needs per-pair sequence identities")
        test = self.indices("test")
        ids = [self.pair_ids[i] for i in test]
        return test[hard_subset(self.identities[test], self.labels[test], ids)]

    @classmethod
    def from_synthetic(cls, world: SyntheticWorld, n_train: int = 20000, n_val: int = 4000,
                       n_test: int = 5000, split_seed: int = 0) -> "PairDataset":
        from .data import scaffold_split
        data = synth_generate(world, n_train + n_val + n_test)
        splits = np.asarray(scaffold_split(data.scaffold_ids,
                                           split_sizes_fractions(n_train, n_val, n_test), split_seed))
        store = normalize(data.store, splits)
        source = {"type": "synthetic", "world": world.to_dict(), "n_train": n_train,
                  "n_val": n_val, "n_test": n_test, "split_seed": split_seed}
        return cls(list(store.pair_ids), store.protein, store.genome, data.labels, splits,
                   np.asarray(data.scaffold_ids), data.identities, data.conflict, source)

    @classmethod
    def from_files(cls, store: EmbeddingStore, pairs: Sequence[GenePair]) -> "PairDataset":
        rows = store.rows(p.pair_id for p in pairs)
        sub = EmbeddingStore([p.pair_id for p in pairs], store.protein[rows], store.genome[rows])
        splits = np.asarray([p.split for p in pairs])
        sub = normalize(sub, splits)
        ident = None
        if all(p.identity is not None for p in pairs):
            ident = np.asarray([p.identity for p in pairs], dtype=np.float64)
        return cls(list(sub.pair_ids), sub.protein, sub.genome,
                   np.asarray([p.label for p in pairs], dtype=np.int64), splits,
                   np.asarray([p.scaffold_id for p in pairs]), ident, None, {"type": "files"})


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    log: list[dict]
    best_epoch: int
    epochs_run: int


def make_model(config: ExperimentConfig, seed: int):
    fusion, _ = apply_ablation(config.ablation, config.fusion, config.loss)
    return build_model(config.model, fusion, seed)


def effective_loss(config: ExperimentConfig) -> LossConfig:
    return apply_ablation(config.ablation, config.fusion, config.loss)[1]


def predict(model, x_p: np.ndarray, x_b: np.ndarray, batch_size: int = EVAL_BATCH,
            keep: Sequence[str] = ()) -> dict[str, np.ndarray]:
    """Eval-mode forward pass in row chunks.  ``keep`` names extra trace
    fields (``h``, ``weights``, ``z_p``, ``z_b``) to collect."""
    out: dict[str, list] = {"prob": [], "logit": []}
    for name in keep:
        out[name] = []
    for start in range(0, x_p.shape[0], batch_size):
        t = model.forward(x_p[start:start + batch_size], x_b[start:start + batch_size], train=False)
        out["prob"].append(t.prob)
        out["logit"].append(t.logit)
        for name in keep:
            out[name].append(model.representation(t) if name == "h" else getattr(t, name))
    return {k: np.concatenate(v, axis=0) for k, v in out.items()}


def train_step(model, loss_cfg: LossConfig, x_p, x_b, y, rng) -> tuple[float, float, float, float]:
    model.zero_grad()
    trace = model.forward(x_p, x_b, train=True, rng=rng)
    bce, d_logit = bce_loss(trace.prob, y, logits=trace.logit)
    xmod = sup = 0.0
    d_h = d_zp = d_zb = None
    if isinstance(model, FusionModel):
        xmod, (gp, gb), _ = xmod_infonce(trace.z_p, trace.z_b, loss_cfg.tau_xmod)
        sup, (gh, sp, sb), _ = disagreement_supcon(trace.h, y, trace.z_p, trace.z_b, loss_cfg.tau_sup,
                                                   weighted=loss_cfg.disagreement_weighting)
        if loss_cfg.lambda_xmod > 0:
            d_zp = loss_cfg.lambda_xmod * gp
            d_zb = loss_cfg.lambda_xmod * gb
        if loss_cfg.lambda_sup > 0:
            d_h = loss_cfg.lambda_sup * gh
            d_zp = loss_cfg.lambda_sup * sp if d_zp is None else d_zp + loss_cfg.lambda_sup * sp
            d_zb = loss_cfg.lambda_sup * sb if d_zb is None else d_zb + loss_cfg.lambda_sup * sb
    model.backward(d_logit, d_h, d_zp, d_zb)
    report = total_loss(bce, xmod, sup, loss_cfg, len(y))
    return report.bce, report.xmod, report.supcon, report.total


def train(config: ExperimentConfig, dataset: PairDataset, seed: int) -> TrainResult:
    """Mini-batch AdamW with validation-AUROC checkpoint selection and early stopping."""
    tr = dataset.indices("train")
    va = dataset.indices("val")
    if len(np.unique(dataset.labels[va])) < 2:
        raise ValueError("validation split needs both classes")
    model = make_model(config, seed)
    loss_cfg = effective_loss(config)
    opt = AdamW(lr=config.lr, weight_decay=config.weight_decay)
    best_auc, best_epoch, best_params = -np.inf, -1, model.copy_parameters()
    history: list[dict] = []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = tr[substream(seed, "shuffle", epoch).permutation(tr.size)]
        sums = np.zeros(4)
        seen = 0
        for b, start in enumerate(range(0, order.size, config.batch_size)):
            idx = order[start:start + config.batch_size]
            if idx.size < 2:
                continue
            rng = substream(seed, "dropout", epoch, b)
            values = train_step(model, loss_cfg, dataset.x_p[idx], dataset.x_b[idx],
                                dataset.labels[idx], rng)
            if not np.all(np.isfinite(values)):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {values}")
            opt.step(model.named_parameters())
            sums += np.asarray(values) * idx.size
            seen += idx.size
        val_prob = predict(model, dataset.x_p[va], dataset.x_b[va])["prob"]
        val_auc = auroc(val_prob, dataset.labels[va])
        mean = sums / max(seen, 1)
        history.append({"epoch": epoch, "bce": mean[0], "xmod": mean[1], "supcon": mean[2],
                        "total": mean[3], "val_auroc": val_auc})
        log.debug("%s seed %d epoch %d total %.4f val_auroc %.4f", config.name, seed, epoch, mean[3], val_auc)
        if val_auc > best_auc:
            best_auc, best_epoch, best_params = val_auc, epoch, model.copy_parameters()
        elif epoch - best_epoch >= config.patience:
            break
    model.load_parameters(best_params)
    ck = to_checkpoint(model, config, seed, {"best_epoch": best_epoch, "best_val_auroc": best_auc,
                                             "epochs_run": epoch})
    return TrainResult(ck, history, best_epoch, epoch)


def to_checkpoint(model, config: ExperimentConfig, seed: int, meta: dict | None = None) -> ckpt_io.Checkpoint:
    fusion, loss = apply_ablation(config.ablation, config.fusion, config.loss)
    cfg = {"model": config.model, "ablation": config.ablation, "fusion": fusion.to_dict(),
           "loss": asdict(loss)}
    return ckpt_io.Checkpoint(model.kind, int(seed), cfg, model.copy_parameters(), dict(meta or {}))


def from_checkpoint(ck: ckpt_io.Checkpoint):
    fusion = FusionConfig.from_dict(ck.config["fusion"])
    model = build_model(ck.kind, fusion, ck.seed)
    model.load_parameters(ck.params)
    return model


# -------------------------------------------------------------- evaluation

@dataclass
class Evaluation:
    default: MetricReport
    selected: MetricReport
    selected_threshold: float


def evaluate(ck: ckpt_io.Checkpoint, dataset: PairDataset, split: str = "test",
             indices: np.ndarray | None = None) -> Evaluation:
    """Metrics at the 0.5 default and at the threshold maximising validation macro-F1."""
    model = from_checkpoint(ck)
    va = dataset.indices("val")
    val_prob = predict(model, dataset.x_p[va], dataset.x_b[va])["prob"]
    t_star = select_threshold(threshold_sweep(val_prob, dataset.labels[va]))
    idx = dataset.indices(split) if indices is None else indices
    prob = predict(model, dataset.x_p[idx], dataset.x_b[idx])["prob"]
    y = dataset.labels[idx]
    return Evaluation(metric_report(prob, y, 0.5), metric_report(prob, y, t_star), t_star)


def router_diagnostics(ck: ckpt_io.Checkpoint, dataset: PairDataset, split: str = "test") -> dict[str, float]:
    """Mean router weight per expert over a split."""
    if ck.kind != "microfuse":
        raise UnsupportedModelError(f"router diagnostics need a microfuse checkpoint, got {ck.kind!r}")
    model = from_checkpoint(ck)
    idx = dataset.indices(split)
    w = predict(model, dataset.x_p[idx], dataset.x_b[idx], keep=("weights",))["weights"]
    return dict(zip(model.experts, (float(v) for v in w.mean(axis=0))))


@dataclass
class RetrievalReport:
    ks: list[int]
    positive_precision: list[float]
    negative_precision: list[float]
    balanced_precision: list[float]
    enrichment: list[float]
    base_rate: float

    def rows(self):
        for i, k in enumerate(self.ks):
            yield {"k": k, "positive_precision": self.positive_precision[i],
                   "negative_precision": self.negative_precision[i],
                   "balanced_precision": self.balanced_precision[i], "enrichment": self.enrichment[i]}


def retrieval_from_representations(reps: np.ndarray, labels: np.ndarray, groups: Sequence,
                                   ks: Sequence[int] = (1, 3, 5, 10), chunk: int = 1024) -> RetrievalReport:
    """Cosine nearest neighbours of every row, excluding rows of its own group.

    Ties in similarity are resolved by row index so results are deterministic.
    """
    labels = np.asarray(labels).astype(np.int64)
    groups = np.asarray(groups)
    ks = sorted(int(k) for k in ks)
    kmax = ks[-1]
    n = labels.size
    _, group_codes = np.unique(groups, return_inverse=True)
    smallest_gallery = n - np.bincount(group_codes).max()
    if smallest_gallery < kmax:
        raise ValueError(f"gallery too small: some query has only {smallest_gallery} "
                         f"out-of-group candidates, need {kmax}")
    norms = np.linalg.norm(reps, axis=1, keepdims=True)
    unit = reps / np.where(norms > 0, norms, 1.0)
    hits = np.zeros((n, len(ks)))
    for start in range(0, n, chunk):
        q = slice(start, min(start + chunk, n))
        sim = unit[q] @ unit.T
        sim[group_codes[q][:, None] == group_codes[None, :]] = -np.inf
        # rank by similarity desc, then index asc
        top = np.argpartition(-sim, kmax - 1, axis=1)[:, :kmax]
        cand_sim = np.take_along_axis(sim, top, axis=1)
        threshold = cand_sim.min(axis=1, keepdims=True)
        for r in range(sim.shape[0]):
            # everything strictly above the k-th value plus index-ordered ties
            row = sim[r]
            above = np.nonzero(row > threshold[r, 0])[0]
            tied = np.nonzero(row == threshold[r, 0])[0]
            chosen = np.concatenate([above[np.argsort(-row[above], kind="stable")], tied])[:kmax]
            same = labels[chosen] == labels[start + r]
            csum = np.cumsum(same)
            hits[start + r] = [csum[k - 1] / k for k in ks]
    pos = labels == 1
    base = float(pos.mean())
    pp = [float(hits[pos, i].mean()) if pos.any() else 0.0 for i in range(len(ks))]
    npr = [float(hits[~pos, i].mean()) if (~pos).any() else 0.0 for i in range(len(ks))]
    bal = [(a + b) / 2.0 for a, b in zip(pp, npr)]
    enr = [a / base if base > 0 else 0.0 for a in pp]
    return RetrievalReport(ks, pp, npr, bal, enr, base)


def retrieval_eval(ck: ckpt_io.Checkpoint, dataset: PairDataset, split: str = "test",
                   ks: Sequence[int] = (1, 3, 5, 10)) -> RetrievalReport:
    model = from_checkpoint(ck)
    idx = dataset.indices(split)
    reps = predict(model, dataset.x_p[idx], dataset.x_b[idx], keep=("h",))["h"]
    return retrieval_from_representations(reps, dataset.labels[idx], dataset.scaffold_ids[idx], ks)


# ------------------------------------------------------------------- suite

def _cell_record(name: str, seed: int, split: str, policy: str, rep: MetricReport) -> dict:
    rec = {"type": "cell", "model": name, "seed": seed, "split": split, "policy": policy}
    rec.update(rep.to_dict())
    rec["map_definition"] = MAP_DEFINITION
    return rec


def aggregate(records: Sequence[dict]) -> list[dict]:
    """Mean and population standard deviation over seeds per (model, split, policy)."""
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        if r.get("type") == "cell":
            groups.setdefault((r["model"], r["split"], r["policy"]), []).append(r)
    out = []
    for (model, split, policy), rows in groups.items():
        rec = {"type": "aggregate", "model": model, "split": split, "policy": policy,
               "n_seeds": len(rows), "std": "population"}
        for f in METRIC_FIELDS + ("threshold",):
            vals = np.array([r[f] for r in rows], dtype=np.float64)
            rec[f + "_mean"] = float(vals.mean())
            rec[f + "_std"] = float(vals.std())
        out.append(rec)
    return out


@dataclass
class SuiteResult:
    records: list[dict]
    checkpoints: dict[tuple[str, int], ckpt_io.Checkpoint]
    logs: dict[tuple[str, int], list[dict]]
    failures: int

    def aggregates(self) -> list[dict]:
        return [r for r in self.records if r["type"] == "aggregate"]

    def mean(self, model: str, field_name: str = "auroc", split: str = "test",
             policy: str = "default") -> float:
        for r in self.aggregates():
            if (r["model"], r["split"], r["policy"]) == (model, split, policy):
                return r[field_name + "_mean"]
        raise KeyError((model, split, policy))


def run_suite(config: ExperimentConfig, variants: Sequence[str], dataset: PairDataset,
              with_router: bool = True) -> SuiteResult:
    """Train every (variant, seed) cell, evaluate on test and the hard subset."""
    records: list[dict] = []
    checkpoints: dict = {}
    logs: dict = {}
    failures = 0
    hard = dataset.hard_indices() if dataset.identities is not None else None
    for name in variants:
        for seed in config.seeds:
            try:
                cfg = variant(config, name)
                result = train(cfg, dataset, seed)
                ck = result.checkpoint
                checkpoints[(name, seed)] = ck
                logs[(name, seed)] = result.log
                ev = evaluate(ck, dataset, "test")
                records.append(_cell_record(name, seed, "test", "default", ev.default))
                records.append(_cell_record(name, seed, "test", "selected", ev.selected))
                if hard is not None:
                    hev = evaluate(ck, dataset, "test", indices=hard)
                    records.append(_cell_record(name, seed, "hard", "default", hev.default))
                    records.append(_cell_record(name, seed, "hard", "selected", hev.selected))
                if with_router and ck.kind == "microfuse":
                    rec = {"type": "router", "model": name, "seed": seed, "split": "test"}
                    rec.update(router_diagnostics(ck, dataset, "test"))
                    records.append(rec)
                log.info("%s seed %d: best epoch %d of %d, test AUROC %.4f", name, seed,
                         result.best_epoch, result.epochs_run, ev.default.auroc)
            except Exception as exc:  # recorded per cell; the suite carries on
                failures += 1
                log.exception("cell %s seed %d failed", name, seed)
                records.append({"type": "error", "model": name, "seed": seed,
                                "error": f"{type(exc).__name__}: {exc}"})
    records.extend(aggregate(records))
    return SuiteResult(records, checkpoints, logs, failures)


def dumps_jsonl(records: Sequence[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def summary_table(records: Sequence[dict], split: str = "test", policy: str = "default") -> str:
    rows = [r for r in records if r.get("type") == "aggregate" and r["split"] == split
            and r["policy"] == policy]
    cols = ("auroc", "auprc", "map", "macro_f1", "macro_recall", "accuracy", "brier")
    head = f"{'model':<36}" + "".join(f"{c:>18}" for c in cols)
    lines = [f"split={split} policy={policy} (mean +- population std over seeds; "
             f"mAP = {MAP_DEFINITION})", head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['model']:<36}" + "".join(
            f"{r[c + '_mean']:>11.4f}+-{r[c + '_std']:<5.3f}" for c in cols))
    return "\n".join(lines) + "\n"


def write_suite(result: SuiteResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.jsonl").write_text(dumps_jsonl(result.records))
    tables = [summary_table(result.records, s, p) for s in ("test", "hard")
              for p in ("default", "selected")]
    (out / "summary.txt").write_text("\n".join(tables))
    for (name, seed), ck in result.checkpoints.items():
        ckpt_io.save(ck, out / f"{name.replace(':', '__')}_seed{seed}.ckpt")
    with open(out / "training_log.jsonl", "w") as fh:
        for (name, seed), history in result.logs.items():
            for row in history:
                fh.write(json.dumps({"model": name, "seed": seed, **row}, sort_keys=True) + "\n")


__all__ = ["ABLATIONS", "EXPERTS", "ExperimentConfig", "PairDataset", "apply_ablation", "train",
           "evaluate", "router_diagnostics", "retrieval_eval", "run_suite", "variant"]
