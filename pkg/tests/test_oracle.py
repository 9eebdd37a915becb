import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from vsezsl.datamodel import Dataset, generate_synthetic
from vsezsl.errors import ConfigError, FormatError
from vsezsl.mixture import fit_mixture
from vsezsl.oracle import (
    FLAT, OracleConfig, VisualOracle, build_oracle, dataset_pi, load_oracle, oracle_codebook, oracle_pi,
    save_oracle,
)
from vsezsl.potentials import predict_visual_batch

from conftest import ORACLE_CFG


@pytest.fixture(scope="module")
def clean():
    ds, planted = generate_synthetic(noise=0.0)
    return ds, planted, build_oracle(ds, OracleConfig(**ORACLE_CFG), seed=1)


def _parts_only(ds):
    return Dataset(ds.instance_ids, ds.labels, ds.classes, ds.split, codebook=ds.codebook, parts=ds.parts)


def test_parts_only_zero_epochs_is_plain_em(dataset):
    ds = _parts_only(dataset)
    oracle = build_oracle(ds, OracleConfig(K=8, epochs=0), seed=4)
    want, _ = fit_mixture(ds.parts[ds.train_idx], 8, seed=4)
    assert oracle.grouping is None and oracle.source == "parts"
    assert np.array_equal(oracle.mixture.means, want.means)


def test_same_seed_same_oracle(dataset, oracle):
    again = build_oracle(dataset, OracleConfig(**ORACLE_CFG), seed=101)
    assert np.array_equal(again.mixture.means, oracle.mixture.means)
    assert np.array_equal(again.grouping.weight, oracle.grouping.weight)


def test_signatures_separate_classes(oracle_book):
    T = oracle_book.matrix().reshape(len(oracle_book.classes), -1)
    d = ((T[:, None] - T[None]) ** 2).sum(-1)
    assert d[np.triu_indices(len(T), 1)].min() > 0


def test_outputs_are_stochastic(dataset, oracle):
    pi = oracle_pi(oracle, dataset.features[0])
    assert pi.shape == (4, 8) and np.allclose(pi.sum(-1), 1) and np.all(pi >= 0)
    flat = VisualOracle(oracle.mixture, oracle.grouping, oracle.permutation, FLAT)
    v = oracle_pi(flat, dataset.features[0])
    assert v.shape == (32,) and v.sum() == pytest.approx(1.0) and np.all(v >= 0)


def test_dim_mismatch(oracle):
    with pytest.raises(ValueError):
        oracle_pi(oracle, np.zeros((7, 7, 31)))


def test_zero_noise_types_consistent(clean):
    ds, planted, oracle = clean
    top = dataset_pi(oracle, ds).argmax(-1)
    used = set()
    for m in range(4):
        # some planted part whose types map one-to-one onto this oracle part's argmax
        hits = []
        for p in range(4):
            tab = np.zeros((8, 8), dtype=int)
            np.add.at(tab, (top[:, m], planted.assignments[:, p]), 1)
            if tab.max(axis=1).sum() == len(ds) and (tab > 0).sum() == 8:
                hits.append(p)
        assert len(hits) == 1
        used.add(hits[0])
    assert used == {0, 1, 2, 3}


def _align(oracle, ds, planted):
    """Permute oracle parts and types onto the planted ones via the argmax confusion."""
    top = dataset_pi(oracle, ds).argmax(-1)
    part_of, type_of = {}, {}
    score = np.zeros((4, 4))
    tabs = {}
    for m in range(4):
        for p in range(4):
            tab = np.zeros((8, 8))
            np.add.at(tab, (top[:, m], planted.assignments[:, p]), 1)
            r, c = linear_sum_assignment(-tab)
            score[m, p] = tab[r, c].sum()
            tabs[m, p] = c
    rows, cols = linear_sum_assignment(-score)
    for m, p in zip(rows, cols):
        part_of[m] = p
        type_of[m] = tabs[m, p]
    return part_of, type_of


def test_codebook_matches_type_table(dataset, planted, oracle, oracle_book):
    part_of, type_of = _align(oracle, dataset, planted)
    for c in oracle_book.classes:
        sig = oracle_book.entries[c]
        for m in range(4):
            want = planted.type_dist[c, part_of[m]][type_of[m]]
            assert np.abs(sig[m] - want).max() < 0.05


def test_other_seed_same_partition(clean):
    ds, _, a = clean
    b = build_oracle(ds, OracleConfig(**ORACLE_CFG), seed=2)
    assert not np.allclose(a.mixture.means, b.mixture.means)
    pa = predict_visual_batch(dataset_pi(a, ds), oracle_codebook(a, ds))
    pb = predict_visual_batch(dataset_pi(b, ds), oracle_codebook(b, ds))
    assert np.mean(pa == pb) >= 0.99


def test_single_instance_classes():
    ds, _ = generate_synthetic(per_class=1, n_classes=12, n_seen=8, train_frac=0.5)
    # every class has one instance; with train_frac 0.5 of 1 the train split is empty
    with pytest.raises(ConfigError):
        build_oracle(ds, OracleConfig(K=2, epochs=0), seed=0)


def test_codebook_rows_equal_embeddings_for_single_instances(dataset, oracle):
    pick = [int(np.flatnonzero(dataset.labels == c)[0]) for c in dataset.classes]
    sub = Dataset([dataset.instance_ids[i] for i in pick], dataset.labels[pick], dataset.classes,
                  type(dataset.split)(dataset.split.seen, dataset.split.unseen, [], []),
                  features=dataset.features[pick])
    cb = oracle_codebook(oracle, sub)
    pis = dataset_pi(oracle, sub)
    for i, c in enumerate(sub.labels):
        assert np.allclose(cb.entries[int(c)], pis[i])


def test_codebook_empty_class(dataset, oracle):
    with pytest.raises(ValueError):
        oracle_codebook(oracle, dataset, classes=[0, 99])


def test_codebook_deterministic(dataset, oracle, oracle_book):
    assert np.array_equal(oracle_codebook(oracle, dataset).matrix(), oracle_book.matrix())


def test_save_load_round_trip(tmp_path, dataset, oracle):
    save_oracle(oracle, tmp_path / "o.vseck", OracleConfig(**ORACLE_CFG))
    back = load_oracle(tmp_path / "o.vseck")
    assert np.array_equal(dataset_pi(back, dataset), dataset_pi(oracle, dataset))
    save_oracle(back, tmp_path / "o2.vseck", OracleConfig(**ORACLE_CFG))
    assert (tmp_path / "o.vseck").read_bytes() == (tmp_path / "o2.vseck").read_bytes()


def test_load_rejects_learner_file(tmp_path, visual_ckpt):
    from vsezsl.trainer import save_checkpoint
    save_checkpoint(visual_ckpt, tmp_path / "m.vseck")
    with pytest.raises(FormatError):
        load_oracle(tmp_path / "m.vseck")


def test_config_mismatch(dataset):
    with pytest.raises(ConfigError):
        build_oracle(_parts_only(dataset), OracleConfig(M=3, K=8, epochs=0))
