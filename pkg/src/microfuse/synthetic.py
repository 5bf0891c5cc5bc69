"""Synthetic stand-ins for frozen foundation-model embeddings and for
annotated scaffolds.

:class:`SyntheticWorld` draws pair embeddings from a small latent model.
Each pair has a shared content vector ``u`` seen by both modalities and a
label signal.  For a ``conflict_rate`` fraction of pairs the protein view is
replaced by an anti-correlated draw: its content is anti-correlated with the
genome view's and its label signal points the wrong way, scaled by
``conflict_signal`` (0 leaves the conflicted protein view with no label
information at all).  Sequence identity follows the reversed label either
way, so conflicted pairs dominate the hard subset.  Such pairs are
recognisable only by comparing the two views, which is what the
agreement/conflict machinery is meant to exploit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import EmbeddingStore, GeneRecord, scaffold_split
from .nn import substream

AMINO_ACIDS = np.array(list("ACDEFGHIKLMNPQRSTVWY"))


@dataclass(frozen=True)
class SyntheticWorld:
    protein_dim: int = 3072
    genome_dim: int = 960
    content_dim: int = 8
    # label signal amplitude per modality (latent noise is unit variance)
    protein_signal: float = 1.0
    genome_signal: float = 1.0
    conflict_rate: float = 0.3
    # correlation of a conflicted pair's protein content with -u
    conflict_anticorrelation: float = 0.8
    # amplitude of the reversed label signal in a conflicted protein view,
    # relative to protein_signal
    conflict_signal: float = 1.0
    content_noise: float = 0.3
    raw_noise: float = 0.5
    base_rate: float = 0.5
    pairs_per_scaffold: int = 10
    identity_center: float = 0.35
    identity_spread: float = 0.12
    identity_noise: float = 0.08
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.conflict_rate <= 1.0:
            raise ValueError(f"conflict_rate must lie in [0, 1], got {self.conflict_rate}")
        if not 0.0 < self.base_rate < 1.0:
            raise ValueError("base_rate must lie in (0, 1)")
        if not 0.0 <= self.conflict_anticorrelation <= 1.0:
            raise ValueError("conflict_anticorrelation must lie in [0, 1]")
        if min(self.protein_dim, self.genome_dim, self.content_dim, self.pairs_per_scaffold) <= 0:
            raise ValueError("dimensions must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    def loadings(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.content_dim + 1
        a = substream(self.seed, "world", "protein_loading").standard_normal((self.protein_dim, k))
        b = substream(self.seed, "world", "genome_loading").standard_normal((self.genome_dim, k))
        return a / np.sqrt(k), b / np.sqrt(k)


@dataclass
class SyntheticData:
    store: EmbeddingStore
    labels: np.ndarray
    scaffold_ids: list[str]
    identities: np.ndarray
    conflict: np.ndarray


def synth_generate(world: SyntheticWorld, n: int) -> SyntheticData:
    rng = substream(world.seed, "world", "draws", n)
    k = world.content_dim
    y = (rng.random(n) < world.base_rate).astype(np.int64)
    s = 2.0 * y - 1.0
    conflict = rng.random(n) < world.conflict_rate

    u = rng.standard_normal((n, k))
    genome_latent = np.empty((n, k + 1))
    genome_latent[:, :k] = u + world.content_noise * rng.standard_normal((n, k))
    genome_latent[:, k] = world.genome_signal * s + rng.standard_normal(n)

    rho = world.conflict_anticorrelation
    fresh = rng.standard_normal((n, k))
    protein_content = np.where(conflict[:, None], -rho * u + np.sqrt(1.0 - rho * rho) * fresh, u)
    apparent = np.where(conflict, -s, s)
    amplitude = np.where(conflict, world.conflict_signal, 1.0) * world.protein_signal
    protein_latent = np.empty((n, k + 1))
    protein_latent[:, :k] = protein_content + world.content_noise * rng.standard_normal((n, k))
    protein_latent[:, k] = amplitude * apparent + rng.standard_normal(n)

    load_p, load_b = world.loadings()
    x_p = protein_latent @ load_p.T + world.raw_noise * rng.standard_normal((n, world.protein_dim))
    x_b = genome_latent @ load_b.T + world.raw_noise * rng.standard_normal((n, world.genome_dim))

    # Sequence identity tracks what the protein view claims, not the label.
    identity = (world.identity_center + world.identity_spread * apparent
                + world.identity_noise * rng.standard_normal(n))
    identity = np.clip(identity, 0.0, 1.0)

    scaffolds = [f"syn{i // world.pairs_per_scaffold:06d}" for i in range(n)]
    ids = [f"{scaffolds[i]}:p{i:07d}" for i in range(n)]
    return SyntheticData(EmbeddingStore(ids, x_p, x_b), y, scaffolds, identity, conflict)


DESK_WORLD = dict(protein_dim=384, genome_dim=120, content_dim=32, conflict_anticorrelation=0.5,
                  conflict_signal=0.0, protein_signal=1.0, genome_signal=0.7)


def desk_world(conflict_rate: float = 0.3, seed: int = 0, **overrides) -> SyntheticWorld:
    """Reduced-width world used for laptop-scale experiments.

    The genome view is the weaker but trustworthy modality; the protein view
    is stronger on agreeing pairs and uninformative on conflicted ones.
    """
    params = dict(DESK_WORLD, conflict_rate=conflict_rate, seed=seed)
    params.update(overrides)
    return SyntheticWorld(**params)


def split_sizes_fractions(n_train: int, n_val: int, n_test: int) -> tuple[float, float, float]:
    total = n_train + n_val + n_test
    return n_train / total, n_val / total, n_test / total


def synth_splits(data: SyntheticData, fractions, seed: int = 0) -> list[str]:
    return scaffold_split(data.scaffold_ids, fractions, seed)


def _random_protein(rng: np.random.Generator, length: int) -> str:
    return "".join(AMINO_ACIDS[rng.integers(0, 20, size=length)])


def _mutate(rng: np.random.Generator, seq: str, rate: float, length: int) -> str:
    base = np.array(list(seq[:length].ljust(length, "A")))
    hits = rng.random(length) < rate
    base[hits] = AMINO_ACIDS[rng.integers(0, 20, size=int(hits.sum()))]
    return "".join(base)


def synth_gene_records(n_scaffolds: int, seed: int = 0, genes_per_scaffold: tuple[int, int] = (8, 30),
                       with_sequences: bool = True) -> list[GeneRecord]:
    """Scaffolds made of operon-like runs of co-directional genes.

    Spacers inside a run are short (mean about 20 bp, occasionally
    overlapping); spacers between runs are long-tailed, so some fall in the
    ambiguous band and many exceed a kilobase.  Genes inside a run are more
    often sequence-related, giving a spread of pairwise identities.
    """
    genes: list[GeneRecord] = []
    for s in range(n_scaffolds):
        rng = substream(seed, "genes", s)
        scaffold = f"scaf{s:06d}"
        n_genes = int(rng.integers(genes_per_scaffold[0], genes_per_scaffold[1] + 1))
        pos = int(rng.integers(1, 500))
        strand = "+" if rng.random() < 0.5 else "-"
        run_left = int(rng.integers(1, 6))
        prev_seq = None
        for g in range(n_genes):
            length_aa = int(rng.integers(80, 500))
            if prev_seq is not None and run_left > 0 and rng.random() < 0.5:
                seq = _mutate(rng, prev_seq, float(rng.uniform(0.2, 0.95)), length_aa)
            else:
                seq = _random_protein(rng, length_aa)
            end = pos + 3 * length_aa + 2
            genes.append(GeneRecord(scaffold, f"g{g:04d}", pos, end, strand,
                                    seq if with_sequences else None))
            prev_seq = seq
            run_left -= 1
            if run_left > 0:
                spacer = int(np.clip(rng.normal(20.0, 12.0), -20, 49))
            else:
                run_left = int(rng.integers(1, 6))
                if rng.random() < 0.5:
                    strand = "-" if strand == "+" else "+"
                spacer = int(rng.lognormal(np.log(3000.0), 1.1))
            pos = end + 1 + spacer
    return genes
