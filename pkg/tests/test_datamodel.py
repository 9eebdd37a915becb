import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from vsezsl.datamodel import (
    SEMANTIC, VISUAL, Codebook, Dataset, SplitSpec, SynthConfig, class_partition_counts, decode_tensor,
    encode_tensor, generate_synthetic, load_dataset, read_planted, read_semantic_codebook, read_split,
    read_tensor_file, read_visual_codebook, sample_part_features, tensor_file_size, write_dataset,
    write_planted, write_semantic_codebook, write_split, write_tensor_file, write_visual_codebook,
)
from vsezsl.errors import ConfigError, CoverageError, DatasetError, FormatError, TruncatedFileError


def test_tensor_round_trip_bits(tmp_path):
    a = np.arange(6, dtype=np.float32).reshape(2, 3) / 7
    write_tensor_file(a, tmp_path / "t.vsef")
    b = read_tensor_file(tmp_path / "t.vsef")
    assert b.dtype == np.float32 and b.tobytes() == a.tobytes()
    assert (tmp_path / "t.vsef").read_bytes() == encode_tensor(b)


@settings(max_examples=50)
@given(arrays(np.float32, array_shapes(min_dims=1, max_dims=4, max_side=5),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_tensor_round_trip_property(a):
    buf = encode_tensor(a)
    assert len(buf) == tensor_file_size(a.shape)
    assert decode_tensor(buf).tobytes() == a.tobytes()


def test_header_arithmetic():
    # magic + version + rank + dims + payload
    assert tensor_file_size((7, 7, 32)) == 4 + 1 + 4 + 12 + 6272
    assert len(encode_tensor(np.zeros((7, 7, 32)))) == 6293


def test_layout_little_endian():
    buf = encode_tensor(np.array([1.5], dtype=np.float32))
    assert buf[:4] == b"VSEF" and buf[4] == 1
    assert struct.unpack("<I", buf[5:9])[0] == 1
    assert struct.unpack("<I", buf[9:13])[0] == 1
    assert struct.unpack("<f", buf[13:17])[0] == 1.5


def test_bad_magic():
    buf = b"XXXX" + encode_tensor(np.zeros(2))[4:]
    with pytest.raises(FormatError):
        decode_tensor(buf)


def test_bad_version():
    buf = bytearray(encode_tensor(np.zeros(2)))
    buf[4] = 2
    with pytest.raises(FormatError):
        decode_tensor(bytes(buf))


@pytest.mark.parametrize("cut", [3, 10, 14, 20])
def test_truncated(cut):
    buf = encode_tensor(np.zeros((2, 3)))
    with pytest.raises(TruncatedFileError):
        decode_tensor(buf[:cut])


def test_trailing_bytes():
    with pytest.raises(FormatError):
        decode_tensor(encode_tensor(np.zeros(2)) + b"\0")


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        encode_tensor(np.array([np.nan]))


def _meta_dataset(n_classes, n_seen, n_images, d=None):
    """Metadata-only dataset: one train instance per seen class, the rest test."""
    classes = list(range(n_classes))
    labels = np.arange(n_images) % n_classes
    ids = [f"{i:06d}" for i in range(n_images)]
    train = [ids[c] for c in range(n_seen)]
    test = ids[n_seen:]
    split = SplitSpec(classes[:n_seen], classes[n_seen:], train, test)
    cb = None
    if d is not None:
        cb = Codebook(SEMANTIC, {c: np.full(d, c + 1.0) for c in classes})
    return Dataset(ids, labels, classes, split, codebook=cb)


def test_cub_shaped_metadata_accepted():
    ds = _meta_dataset(200, 150, 11788, d=312)
    assert class_partition_counts(ds) == (200, 150, 50, 11788)
    assert ds.codebook.matrix().shape == (200, 312)


@pytest.mark.parametrize("shape,expected", [
    ((32, 20, 15339), (32, 20, 12, 15339)),
    ((50, 40, 37322), (50, 40, 10, 37322)),
])
def test_table_counts(shape, expected):
    assert class_partition_counts(_meta_dataset(*shape)) == expected


def test_synthetic_default_counts(dataset):
    assert class_partition_counts(dataset) == (14, 10, 4, 420)


def test_train_instance_in_unseen_class_rejected():
    ids = ["a", "b", "c"]
    split = SplitSpec([0], [1], ["a", "c"], ["b"])
    with pytest.raises(DatasetError, match="unseen"):
        Dataset(ids, [0, 1, 1], [0, 1], split)


def test_split_overlap_rejected():
    with pytest.raises(DatasetError):
        SplitSpec([0, 1], [1], [], [])


def test_codebook_coverage_error():
    cb = Codebook(SEMANTIC, {0: [1.0], 2: [3.0]})
    with pytest.raises(CoverageError) as e:
        cb.matrix([0, 1, 2])
    assert e.value.missing == [1]


def test_visual_codebook_must_be_stochastic():
    with pytest.raises(DatasetError):
        Codebook(VISUAL, {0: [[0.5, 0.6]]})


def test_codebook_and_split_round_trips(tmp_path, dataset):
    write_semantic_codebook(dataset.codebook, tmp_path / "s.csv")
    back = read_semantic_codebook(tmp_path / "s.csv")
    assert np.array_equal(back.matrix(), dataset.codebook.matrix())
    write_visual_codebook(dataset.visual_codebook, tmp_path / "v.vsef")
    vis = read_visual_codebook(tmp_path / "v.vsef", dataset.classes)
    assert np.allclose(vis.matrix(), dataset.visual_codebook.matrix(), atol=1e-7)
    write_split(dataset.split, tmp_path / "split.json")
    assert read_split(tmp_path / "split.json") == dataset.split


def test_generate_deterministic():
    a, pa = generate_synthetic(seed=5, per_class=5)
    b, pb = generate_synthetic(seed=5, per_class=5)
    assert np.array_equal(a.features, b.features) and np.array_equal(pa.prototypes, pb.prototypes)
    c, _ = generate_synthetic(seed=6, per_class=5)
    assert not np.array_equal(a.features, c.features)


def test_zero_noise_parts_are_prototypes():
    ds, planted = generate_synthetic(noise=0.0, per_class=5)
    M = planted.prototypes.shape[0]
    want = planted.prototypes[np.arange(M)[None], planted.assignments]
    assert np.array_equal(ds.parts, want)


def test_planted_separation_and_type_rows(planted):
    assert np.all(planted.min_separation >= 10.0)
    assert np.allclose(planted.type_dist.sum(-1), 1.0)


def test_nearest_prototype_is_generator(planted):
    labels = np.repeat(np.arange(14), 200)
    assign, parts = sample_part_features(planted, labels, seed=3)
    d = ((parts[:, :, None, :] - planted.prototypes[None]) ** 2).sum(-1)
    assert np.mean(np.argmin(d, axis=-1) == assign) > 0.999


def test_synthetic_quadrants_carry_parts(dataset, planted):
    # each part's quadrant sums back to its part feature
    for m, (rs, cs) in enumerate(planted.regions):
        s = dataset.features[:, rs, cs, :].sum(axis=(1, 2))
        assert np.allclose(s, dataset.parts[:, m])


def test_infeasible_separation():
    with pytest.raises(ConfigError):
        generate_synthetic(C=4, K=8, separation=1e3, max_tries=3)


def test_dataset_dir_round_trip(tmp_path):
    cfg = SynthConfig(per_class=4)
    ds, planted = generate_synthetic(cfg)
    write_dataset(ds, tmp_path)
    write_planted(planted, ds, cfg, tmp_path)
    back = load_dataset(tmp_path)
    assert back.instance_ids == ds.instance_ids
    assert np.allclose(back.features, ds.features, atol=1e-4 * np.abs(ds.features).max())
    assert back.split == ds.split
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["separation"] == cfg.separation and manifest["noise"] == cfg.noise
    p = read_planted(tmp_path)
    assert np.array_equal(p.assignments, planted.assignments)


def test_load_missing_feature_file(tmp_path):
    ds, _ = generate_synthetic(per_class=2)
    write_dataset(ds, tmp_path)
    next((tmp_path / "features").iterdir()).unlink()
    with pytest.raises(DatasetError, match="missing feature"):
        load_dataset(tmp_path)


def test_load_missing_labels(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
