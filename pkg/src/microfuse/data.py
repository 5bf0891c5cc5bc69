"""Gene-pair dataset construction, scaffold-level splits, embedding storage
and train-only normalisation, sequence identity and the hard conflict subset.

File formats (all versioned):

* gene table: TSV with header ``scaffold_id gene_id start end strand [sequence]``
* pair manifest: ``# microfuse-pairs v1`` line, then a TSV header
  ``pair_id scaffold_id gene_a gene_b igs label split [identity]``
* embedding store: binary, see :meth:`EmbeddingStore.save`, plus a
  ``<path>.idx.tsv`` sidecar mapping pair id to row
"""

from __future__ import annotations

import csv
import hashlib
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .nn import substream

SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.69, 0.14, 0.17)
IDENTITY_MAX_LEN = 300
PAIR_MANIFEST_VERSION = "# microfuse-pairs v1"
GENE_COLUMNS = ("scaffold_id", "gene_id", "start", "end", "strand")
PAIR_COLUMNS = ("pair_id", "scaffold_id", "gene_a", "gene_b", "igs", "label", "split")

EMBED_MAGIC = b"MFEM"
EMBED_VERSION = 1
_EMBED_HEADER = struct.Struct("<4sIQII")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class GeneRecord:
    scaffold_id: str
    gene_id: str
    start: int
    end: int
    strand: str
    sequence: str | None = None

    def __post_init__(self):
        if self.end < self.start:
            raise DataError(f"gene {self.gene_id}: end {self.end} < start {self.start}")
        if self.strand not in ("+", "-"):
            raise DataError(f"gene {self.gene_id}: strand must be '+' or '-', got {self.strand!r}")


@dataclass
class GenePair:
    scaffold_id: str
    gene_a: str
    gene_b: str
    igs: int
    same_strand: bool | None
    label: int
    split: str = ""
    identity: float | None = None
    pair_id: str = ""

    def __post_init__(self):
        if not self.pair_id:
            self.pair_id = f"{self.scaffold_id}:{self.gene_a}:{self.gene_b}"


@dataclass(frozen=True)
class PairRules:
    """Labelling rules for adjacent gene pairs.

    Same-strand pairs with spacer ``<= pos_max_igs`` are positive; any pair
    with spacer ``>= neg_min_igs`` is negative, as are divergently
    transcribed pairs (``<- ->``) when ``divergent_negative`` is set.
    Everything else is dropped as ambiguous.
    """

    pos_max_igs: int = 50
    neg_min_igs: int = 1000
    divergent_negative: bool = True

    def __post_init__(self):
        if self.pos_max_igs >= self.neg_min_igs:
            raise DataError("pos_max_igs must be below neg_min_igs")


def compute_igs(a: GeneRecord, b: GeneRecord) -> int:
    """Bases strictly between ``a`` and ``b``; negative when they overlap."""
    if a.scaffold_id != b.scaffold_id:
        raise DataError(f"genes {a.gene_id} and {b.gene_id} are on different scaffolds")
    if b.start < a.start:
        raise DataError(f"gene {a.gene_id} must precede {b.gene_id} by start coordinate")
    return b.start - a.end - 1


def label_pair(a: GeneRecord, b: GeneRecord, igs: int, rules: PairRules) -> int | None:
    same = a.strand == b.strand
    if same and igs <= rules.pos_max_igs:
        return 1
    if igs >= rules.neg_min_igs:
        return 0
    if rules.divergent_negative and a.strand == "-" and b.strand == "+":
        return 0
    return None


def group_by_scaffold(genes: Iterable[GeneRecord]) -> dict[str, list[GeneRecord]]:
    groups: dict[str, list[GeneRecord]] = defaultdict(list)
    for g in genes:
        groups[g.scaffold_id].append(g)
    return dict(groups)


def candidate_pairs(genes: Sequence[GeneRecord], rules: PairRules = PairRules()) -> list[GenePair]:
    """Label adjacent pairs on one or more scaffolds (input sorted by start per scaffold)."""
    pairs: list[GenePair] = []
    for scaffold, group in sorted(group_by_scaffold(genes).items()):
        seen = set()
        for g in group:
            if g.gene_id in seen:
                raise DataError(f"duplicate gene id {g.gene_id!r} on scaffold {scaffold!r}")
            seen.add(g.gene_id)
        for a, b in zip(group, group[1:]):
            if b.start < a.start:
                raise DataError(f"scaffold {scaffold!r} is not sorted by start at gene {b.gene_id!r}")
            igs = compute_igs(a, b)
            label = label_pair(a, b, igs, rules)
            if label is None:
                continue
            identity = None
            if a.sequence and b.sequence:
                identity = sequence_identity(a.sequence, b.sequence)
            pairs.append(GenePair(scaffold, a.gene_id, b.gene_id, igs, a.strand == b.strand,
                                  label, identity=identity))
    return pairs


def split_of(scaffold_id: str, seed: int, fractions: Sequence[float] = DEFAULT_FRACTIONS) -> str:
    """Deterministic split for a scaffold: a hash of ``(seed, scaffold_id)`` mapped
    onto the cumulative fractions."""
    digest = hashlib.blake2b(f"{seed}\x00{scaffold_id}".encode(), digest_size=8).digest()
    u = int.from_bytes(digest, "little") / 2.0 ** 64
    edges = np.cumsum(fractions)
    for name, edge in zip(SPLITS, edges):
        if u < edge:
            return name
    return SPLITS[-1]


def scaffold_split(scaffold_ids: Iterable[str], fractions: Sequence[float] = DEFAULT_FRACTIONS,
                   seed: int = 0) -> list[str]:
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    cache: dict[str, str] = {}
    out = []
    for sid in scaffold_ids:
        if sid not in cache:
            cache[sid] = split_of(sid, seed, fractions)
        out.append(cache[sid])
    return out


def balance_per_split(pairs: list[GenePair], seed: int = 0) -> list[GenePair]:
    """Downsample the majority class inside each split; input order is kept."""
    keep = set()
    for split in SPLITS:
        idx = [i for i, p in enumerate(pairs) if p.split == split]
        pos = [i for i in idx if pairs[i].label == 1]
        neg = [i for i in idx if pairs[i].label == 0]
        n = min(len(pos), len(neg))
        rng = substream(seed, "balance", split)
        for group in (pos, neg):
            chosen = rng.choice(len(group), size=n, replace=False) if len(group) > n else range(len(group))
            keep.update(group[i] for i in chosen)
    return [p for i, p in enumerate(pairs) if i in keep]


def build_pairs(genes: Sequence[GeneRecord], rules: PairRules = PairRules(),
                fractions: Sequence[float] = DEFAULT_FRACTIONS, seed: int = 0,
                balance: bool = True) -> list[GenePair]:
    """Candidate pairs -> scaffold split -> per-split class balancing."""
    pairs = candidate_pairs(genes, rules)
    for p, split in zip(pairs, scaffold_split([p.scaffold_id for p in pairs], fractions, seed)):
        p.split = split
    return balance_per_split(pairs, seed) if balance else pairs


def sequence_identity(seq_a: str, seq_b: str, max_len: int = IDENTITY_MAX_LEN) -> float:
    """Gap-free positional identity over the first ``max_len`` residues,
    normalised by the shorter truncated length."""
    if not seq_a or not seq_b:
        raise DataError("sequence identity needs two non-empty sequences")
    a, b = seq_a[:max_len], seq_b[:max_len]
    n = min(len(a), len(b))
    return sum(x == y for x, y in zip(a[:n], b[:n])) / n


def hard_subset(identities: np.ndarray, labels: np.ndarray, ids: Sequence | None = None) -> np.ndarray:
    """Indices of low-identity positives and high-identity negatives.

    Within each class the rows are ordered by identity (ties broken by
    ``ids``, else by position) and the extreme quarter is kept:
    ``round(n/4)`` lowest-identity positives and ``round(n/4)``
    highest-identity negatives.
    """
    identities = np.asarray(identities, dtype=np.float64)
    labels = np.asarray(labels)
    tie = np.arange(labels.size) if ids is None else np.argsort(np.argsort(np.asarray(ids), kind="stable"))
    keep = []
    for cls in (1, 0):
        idx = np.nonzero(labels == cls)[0]
        if idx.size < 4:
            raise DataError(f"hard subset needs at least 4 pairs of class {cls}, got {idx.size}")
        k = int(np.floor(idx.size / 4.0 + 0.5))
        key = identities[idx] if cls == 1 else -identities[idx]
        order = np.lexsort((tie[idx], key))
        keep.append(idx[order[:k]])
    return np.sort(np.concatenate(keep))


@dataclass
class EmbeddingStore:
    """Per-pair protein and genome-context vectors keyed by pair id."""

    pair_ids: list[str]
    protein: np.ndarray
    genome: np.ndarray
    mean_protein: np.ndarray | None = None
    std_protein: np.ndarray | None = None
    mean_genome: np.ndarray | None = None
    std_genome: np.ndarray | None = None
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.protein.shape[0] != len(self.pair_ids) or self.genome.shape[0] != len(self.pair_ids):
            raise DataError("row counts of the store do not match its pair ids")
        self._index = {pid: i for i, pid in enumerate(self.pair_ids)}
        if len(self._index) != len(self.pair_ids):
            raise DataError("pair ids in an embedding store must be unique")

    def __len__(self) -> int:
        return len(self.pair_ids)

    def rows(self, pair_ids: Iterable[str]) -> np.ndarray:
        try:
            return np.array([self._index[p] for p in pair_ids], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"pair id {exc.args[0]!r} not in embedding store") from None

    @property
    def normalized(self) -> bool:
        return self.mean_protein is not None

    def save(self, path: str | Path) -> None:
        """Header ``<magic, version, n, protein_dim, genome_dim>`` (little endian),
        then protein rows and genome rows as float32, row-major."""
        path = Path(path)
        n, p = self.protein.shape
        g = self.genome.shape[1]
        with open(path, "wb") as fh:
            fh.write(_EMBED_HEADER.pack(EMBED_MAGIC, EMBED_VERSION, n, p, g))
            fh.write(np.ascontiguousarray(self.protein, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(self.genome, dtype="<f4").tobytes())
        with open(index_path(path), "w", newline="") as fh:
            fh.write("pair_id\trow\n")
            for i, pid in enumerate(self.pair_ids):
                fh.write(f"{pid}\t{i}\n")

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingStore":
        path = Path(path)
        with open(path, "rb") as fh:
            head = fh.read(_EMBED_HEADER.size)
            if len(head) != _EMBED_HEADER.size:
                raise DataError(f"{path}: truncated embedding header")
            magic, version, n, p, g = _EMBED_HEADER.unpack(head)
            if magic != EMBED_MAGIC:
                raise DataError(f"{path}: not an embedding store (magic {magic!r})")
            if version != EMBED_VERSION:
                raise DataError(f"{path}: unsupported embedding store version {version}")
            body = fh.read()
        expected = 4 * n * (p + g)
        if len(body) != expected:
            raise DataError(f"{path}: expected {expected} payload bytes, found {len(body)}")
        flat = np.frombuffer(body, dtype="<f4").astype(np.float64)
        protein = flat[: n * p].reshape(n, p)
        genome = flat[n * p:].reshape(n, g)
        ids = [None] * n
        with open(index_path(path), newline="") as fh:
            reader = csv.reader(fh, delimiter="\t")
            next(reader)
            for pid, row in reader:
                ids[int(row)] = pid
        if any(i is None for i in ids):
            raise DataError(f"{index_path(path)}: index does not cover all {n} rows")
        return cls(ids, protein, genome)


def index_path(path: str | Path) -> Path:
    return Path(str(path) + ".idx.tsv")


def _stats(x: np.ndarray, floor: float):
    mu = x.mean(axis=0)
    sd = np.maximum(x.std(axis=0), floor)
    return mu, sd


def normalize(store: EmbeddingStore, splits: Sequence[str], floor: float = 1e-8) -> EmbeddingStore:
    """Standardise every row with per-dimension statistics of the train rows only."""
    splits = np.asarray(splits)
    if splits.shape[0] != len(store):
        raise DataError("split assignment length does not match the store")
    train = np.nonzero(splits == "train")[0]
    if train.size == 0:
        raise DataError("cannot normalise: the train split is empty")
    mp, sp = _stats(store.protein[train], floor)
    mg, sg = _stats(store.genome[train], floor)
    return EmbeddingStore(list(store.pair_ids), (store.protein - mp) / sp, (store.genome - mg) / sg,
                          mp, sp, mg, sg)


def read_genes(path: str | Path) -> list[GeneRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(header[:5]) != GENE_COLUMNS:
            raise DataError(f"{path}: gene table needs header {' '.join(GENE_COLUMNS)} [sequence]")
        genes = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                seq = row[5] if len(row) > 5 and row[5] else None
                genes.append(GeneRecord(row[0], row[1], int(row[2]), int(row[3]), row[4], seq))
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return genes


def write_genes(genes: Iterable[GeneRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(GENE_COLUMNS + ("sequence",)) + "\n")
        for g in genes:
            fh.write(f"{g.scaffold_id}\t{g.gene_id}\t{g.start}\t{g.end}\t{g.strand}\t{g.sequence or ''}\n")


def write_pairs(pairs: Iterable[GenePair], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(PAIR_MANIFEST_VERSION + "\n")
        fh.write("\t".join(PAIR_COLUMNS + ("identity",)) + "\n")
        for p in pairs:
            ident = "" if p.identity is None else repr(float(p.identity))
            fh.write(f"{p.pair_id}\t{p.scaffold_id}\t{p.gene_a}\t{p.gene_b}\t{p.igs}\t"
                     f"{p.label}\t{p.split}\t{ident}\n")


def read_pairs(path: str | Path) -> list[GenePair]:
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != PAIR_MANIFEST_VERSION:
            raise DataError(f"{path}: expected version line {PAIR_MANIFEST_VERSION!r}, got {first!r}")
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader)
        if tuple(header[:7]) != PAIR_COLUMNS:
            raise DataError(f"{path}: unexpected pair manifest header {header}")
        pairs = []
        for row in reader:
            if not row:
                continue
            ident = float(row[7]) if len(row) > 7 and row[7] != "" else None
            pairs.append(GenePair(row[1], row[2], row[3], int(row[4]), None, int(row[5]), row[6],
                                  ident, pair_id=row[0]))
    return pairs
