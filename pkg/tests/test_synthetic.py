import numpy as np
import pytest

from microfuse.metrics import auroc
from microfuse.synthetic import SyntheticWorld, desk_world, synth_gene_records, synth_generate


def ridge_probe(x_train, y_train, x_test, alpha=10.0):
    x1 = np.c_[x_train, np.ones(len(x_train))]
    w = np.linalg.solve(x1.T @ x1 + alpha * np.eye(x1.shape[1]), x1.T @ (2.0 * y_train - 1.0))
    return np.c_[x_test, np.ones(len(x_test))] @ w


def test_same_seed_bit_identical():
    w = desk_world(seed=5)
    a, b = synth_generate(w, 500), synth_generate(w, 500)
    assert np.array_equal(a.store.protein, b.store.protein)
    assert np.array_equal(a.store.genome, b.store.genome)
    assert np.array_equal(a.labels, b.labels) and a.store.pair_ids == b.store.pair_ids
    c = synth_generate(desk_world(seed=6), 500)
    assert not np.array_equal(a.store.protein, c.store.protein)


@pytest.mark.parametrize("rate", [0.5, 0.3])
def test_base_rate(rate):
    data = synth_generate(desk_world(base_rate=rate), 12000)
    assert abs(data.labels.mean() - rate) <= 0.02


def test_conflict_fraction_and_scaffold_grouping():
    data = synth_generate(desk_world(conflict_rate=0.3), 10000)
    assert abs(data.conflict.mean() - 0.3) < 0.02
    assert len(set(data.scaffold_ids)) == 1000


def test_world_validation():
    with pytest.raises(ValueError):
        SyntheticWorld(conflict_rate=1.5)
    with pytest.raises(ValueError):
        SyntheticWorld(base_rate=0.0)


def test_no_conflict_world_is_linearly_separable_per_modality():
    # unit label signal in both views (the desk preset deliberately weakens the genome view)
    data = synth_generate(SyntheticWorld(protein_dim=384, genome_dim=120, conflict_rate=0.0, seed=1), 20000)
    tr, te = slice(0, 10000), slice(10000, None)
    y = data.labels
    for x in (data.store.protein, data.store.genome):
        score = ridge_probe(x[tr], y[tr], x[te])
        assert auroc(score, y[te]) > 0.9


def test_conflict_hurts_the_protein_probe_more():
    data = synth_generate(desk_world(conflict_rate=0.3, seed=2), 20000)
    tr, te = slice(0, 10000), slice(10000, None)
    y = data.labels
    conflicted = data.conflict[te]
    p = ridge_probe(data.store.protein[tr], y[tr], data.store.protein[te])
    g = ridge_probe(data.store.genome[tr], y[tr], data.store.genome[te])
    assert auroc(p[conflicted], y[te][conflicted]) < auroc(g[conflicted], y[te][conflicted])


def test_identity_contradicts_label_on_conflicts():
    data = synth_generate(desk_world(conflict_rate=0.3), 10000)
    c, y, ident = data.conflict, data.labels, data.identities
    assert ident[~c & (y == 1)].mean() > ident[~c & (y == 0)].mean()
    assert ident[c & (y == 1)].mean() < ident[c & (y == 0)].mean()
    assert ident.min() >= 0.0 and ident.max() <= 1.0


def test_gene_records_are_sorted_per_scaffold():
    genes = synth_gene_records(30, seed=4)
    by = {}
    for g in genes:
        by.setdefault(g.scaffold_id, []).append(g.start)
    assert len(by) == 30
    assert all(starts == sorted(starts) for starts in by.values())
