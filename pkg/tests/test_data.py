import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microfuse.data import (DataError, EmbeddingStore, GeneRecord, PairRules, build_pairs, candidate_pairs,
                            compute_igs, hard_subset, label_pair, normalize, read_genes, read_pairs,
                            scaffold_split, sequence_identity, write_genes, write_pairs)
from microfuse.synthetic import synth_gene_records


def gene(gid, start, end, strand="+", scaffold="s1", seq=None):
    return GeneRecord(scaffold, gid, start, end, strand, seq)


# ----------------------------------------------------------------- spacers

@pytest.mark.parametrize("b_start,expected", [(121, 20), (101, 0), (90, -11)])
def test_compute_igs_examples(b_start, expected):
    assert compute_igs(gene("a", 1, 100), gene("b", b_start, b_start + 50)) == expected


def test_compute_igs_errors():
    with pytest.raises(DataError):
        compute_igs(gene("a", 1, 100), gene("b", 200, 300, scaffold="s2"))
    with pytest.raises(DataError):
        compute_igs(gene("a", 50, 100), gene("b", 10, 300))


@pytest.mark.parametrize("igs,strands,expected", [
    (20, "++", 1), (8600, "++", 0), (300, "++", None), (-5, "--", 1),
    (20, "-+", 0), (20, "+-", None), (1000, "+-", 0), (50, "++", 1), (51, "++", None)])
def test_label_rules(igs, strands, expected):
    a, b = gene("a", 1, 10, strands[0]), gene("b", 20, 30, strands[1])
    assert label_pair(a, b, igs, PairRules()) == expected


def test_divergent_rule_can_be_disabled():
    a, b = gene("a", 1, 10, "-"), gene("b", 20, 30, "+")
    assert label_pair(a, b, 300, PairRules(divergent_negative=False)) is None


def test_rules_validation():
    with pytest.raises(DataError):
        PairRules(pos_max_igs=100, neg_min_igs=100)


def test_candidate_pairs_errors():
    with pytest.raises(DataError, match="not sorted"):
        candidate_pairs([gene("a", 100, 200), gene("b", 10, 50)])
    with pytest.raises(DataError, match="duplicate"):
        candidate_pairs([gene("a", 10, 50), gene("a", 100, 200)])


def test_candidate_pairs_identity_and_ids():
    pairs = candidate_pairs([gene("a", 1, 30, seq="MKV"), gene("b", 41, 70, seq="MKL")])
    assert len(pairs) == 1
    p = pairs[0]
    assert (p.igs, p.label, p.pair_id) == (10, 1, "s1:a:b")
    assert p.identity == pytest.approx(2 / 3)


# ------------------------------------------------------------------ splits

def test_scaffold_split_fractions_and_exclusivity():
    ids = [f"scaf{i}" for i in range(5000)]
    splits = scaffold_split(ids + ids[:100], seed=3)
    frac = {s: splits[:5000].count(s) / 5000 for s in ("train", "val", "test")}
    assert abs(frac["train"] - 0.69) < 0.03
    assert abs(frac["val"] - 0.14) < 0.03
    assert abs(frac["test"] - 0.17) < 0.03
    assert splits[5000:] == splits[:100]


def test_scaffold_split_rejects_bad_fractions():
    with pytest.raises(DataError):
        scaffold_split(["a"], (0.5, 0.5, 0.5))


def test_built_pairs_are_balanced_and_leak_free():
    genes = synth_gene_records(600, seed=1)
    pairs = build_pairs(genes, seed=1)
    by_split = {}
    for p in pairs:
        by_split.setdefault(p.split, []).append(p)
    scaffolds = {s: {p.scaffold_id for p in ps} for s, ps in by_split.items()}
    assert not scaffolds["train"] & scaffolds["val"]
    assert not scaffolds["train"] & scaffolds["test"]
    assert not scaffolds["val"] & scaffolds["test"]
    gene_split = {}
    for p in pairs:
        for g in ((p.scaffold_id, p.gene_a), (p.scaffold_id, p.gene_b)):
            assert gene_split.setdefault(g, p.split) == p.split
    for ps in by_split.values():
        assert abs(np.mean([p.label for p in ps]) - 0.5) <= 0.02


# ---------------------------------------------------------------- identity

def test_identity_examples():
    assert sequence_identity("MKVL", "MKVL") == 1.0
    assert sequence_identity("AAAA", "AAAT") == 0.75
    seq = "A" * 400
    assert sequence_identity(seq, seq[:350] + "W" + seq[351:]) == 1.0
    assert sequence_identity("AAAA", "AA") == 1.0
    with pytest.raises(DataError):
        sequence_identity("", "A")


@given(st.text("ACDEFG", min_size=1, max_size=40), st.text("ACDEFG", min_size=1, max_size=40))
def test_identity_is_symmetric_and_bounded(a, b):
    v = sequence_identity(a, b)
    assert v == sequence_identity(b, a)
    assert 0.0 <= v <= 1.0


# -------------------------------------------------------------- hard subset

def sort_and_cut(identities, labels, ids):
    keep = []
    for cls in (1, 0):
        rows = [i for i in range(len(labels)) if labels[i] == cls]
        rows.sort(key=lambda i: ((identities[i] if cls == 1 else -identities[i]), ids[i]))
        k = int(np.floor(len(rows) / 4 + 0.5))
        keep += rows[:k]
    return sorted(keep)


@settings(max_examples=200, deadline=None)
@given(st.integers(8, 200), st.integers(0, 10**6), st.booleans())
def test_hard_subset_matches_sort_and_cut(n, seed, coarse):
    rng = np.random.default_rng(seed)
    labels = np.r_[np.ones(4), np.zeros(4), rng.integers(0, 2, n - 8)].astype(int)
    identities = rng.random(n)
    if coarse:
        identities = np.round(identities, 1)
    ids = [f"p{rng.integers(0, 10**9):09d}_{i}" for i in range(n)]
    got = hard_subset(identities, labels, ids)
    assert list(got) == sort_and_cut(identities, labels, ids)
    for cls in (0, 1):
        n_cls = int((labels == cls).sum())
        assert abs(int((labels[got] == cls).sum()) - n_cls / 4) <= 1


def test_hard_subset_selects_the_contradicting_tails():
    identities = np.array([0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9])
    labels = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    assert list(hard_subset(identities, labels)) == [0, 7]


def test_hard_subset_needs_enough_rows():
    with pytest.raises(DataError):
        hard_subset(np.ones(5), np.array([1, 1, 1, 0, 0]))


# -------------------------------------------------------------- embeddings

def test_store_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    store = EmbeddingStore(["x", "y", "z"], rng.standard_normal((3, 4)), rng.standard_normal((3, 2)))
    store.save(tmp_path / "e.bin")
    back = EmbeddingStore.load(tmp_path / "e.bin")
    assert back.pair_ids == ["x", "y", "z"]
    np.testing.assert_array_equal(back.protein, store.protein.astype(np.float32))
    np.testing.assert_array_equal(back.genome, store.genome.astype(np.float32))
    assert list(back.rows(["z", "x"])) == [2, 0]
    with pytest.raises(DataError, match="'w'"):
        back.rows(["w"])


def test_store_rejects_corruption(tmp_path):
    store = EmbeddingStore(["x"], np.ones((1, 2)), np.ones((1, 2)))
    path = tmp_path / "e.bin"
    store.save(path)
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataError, match="magic"):
        EmbeddingStore.load(path)
    path.write_bytes(raw[:-3])
    with pytest.raises(DataError, match="payload"):
        EmbeddingStore.load(path)


def test_store_rejects_duplicate_ids():
    with pytest.raises(DataError):
        EmbeddingStore(["x", "x"], np.ones((2, 1)), np.ones((2, 1)))


def test_normalize_uses_train_rows_only():
    rng = np.random.default_rng(1)
    n = 300
    store = EmbeddingStore([str(i) for i in range(n)], rng.standard_normal((n, 5)) * 3 + 1,
                           np.c_[rng.standard_normal((n, 2)), np.full(n, 4.0)])
    splits = np.array(["train"] * 200 + ["val"] * 50 + ["test"] * 50)
    normed = normalize(store, splits)
    train = normed.protein[:200]
    assert np.abs(train.mean(axis=0)).max() < 1e-9
    assert np.abs(train.var(axis=0) - 1).max() < 1e-6
    assert np.all(normed.genome[:, 2] == 0.0)
    assert np.abs(normed.protein[200:].mean(axis=0)).max() > 1e-3
    kept = EmbeddingStore([str(i) for i in range(200)], store.protein[:200], store.genome[:200])
    only_train = normalize(kept, splits[:200])
    np.testing.assert_array_equal(only_train.mean_protein, normed.mean_protein)
    np.testing.assert_array_equal(only_train.std_genome, normed.std_genome)


# ---------------------------------------------------------------------- io

def test_gene_and_pair_files_roundtrip(tmp_path):
    genes = synth_gene_records(20, seed=2)
    write_genes(genes, tmp_path / "g.tsv")
    assert read_genes(tmp_path / "g.tsv") == genes
    pairs = build_pairs(genes, seed=2)
    write_pairs(pairs, tmp_path / "p.tsv")
    back = read_pairs(tmp_path / "p.tsv")
    assert [(p.pair_id, p.igs, p.label, p.split, p.identity) for p in back] == \
           [(p.pair_id, p.igs, p.label, p.split, p.identity) for p in pairs]


def test_gene_file_errors(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("scaffold_id\tgene_id\tstart\tend\tstrand\ns1\tg1\t10\tx\t+\n")
    with pytest.raises(DataError, match=":2:"):
        read_genes(bad)
    bad.write_text("a\tb\n")
    with pytest.raises(DataError, match="header"):
        read_genes(bad)


def test_synthetic_corpus_spacer_scale():
    pairs = build_pairs(synth_gene_records(400, seed=0), balance=False)
    pos = [p.igs for p in pairs if p.label == 1]
    neg = [p.igs for p in pairs if p.label == 0 and p.igs >= 1000]
    assert 10 < np.mean(pos) < 30
    assert np.mean(neg) > 2000
