import logging
import struct

import numpy as np
import pytest

from esmer.errors import FormatError, RejectedInputError
from esmer.streams import (IdxSource, SampleSet, SyntheticSource, add_label_noise, allocate,
                           build_pool, derive_seed, epoch_batches, inject_symmetric_noise,
                           load_idx, make_class_il_stream, make_gaussian_source,
                           make_gcil_stream, write_idx, zipf_profile)


@pytest.fixture(scope="module")
def pool():
    return make_gaussian_source(SyntheticSource(10, 16, 4.0, 1.0, 60, 30), 0)


def test_gaussian_pool_shapes_and_ids(pool):
    assert pool.train.features.shape == (600, 16)
    assert pool.test.features.shape == (300, 16)
    assert np.bincount(pool.train.labels).tolist() == [60] * 10
    ids = np.concatenate([pool.train.ids, pool.test.ids])
    assert len(np.unique(ids)) == 900


def test_gaussian_source_linear_probe():
    # softmax regression by plain gradient descent, written out here
    p = make_gaussian_source(SyntheticSource(10, 16, 10.0, 0.1, 100, 100), 1)
    x, y = p.train.features, p.train.labels
    w, b = np.zeros((16, 10)), np.zeros(10)
    onehot = np.eye(10)[y]
    for _ in range(300):
        z = x @ w + b
        pr = np.exp(z - z.max(1, keepdims=True))
        pr /= pr.sum(1, keepdims=True)
        g = (pr - onehot) / len(y)
        w -= 0.1 * x.T @ g
        b -= 0.1 * g.sum(0)
    acc = np.mean((p.test.features @ w + b).argmax(1) == p.test.labels)
    assert acc > 0.99


def test_zero_std_collapses_to_means():
    p = make_gaussian_source(SyntheticSource(3, 4, 2.0, 0.0, 5, 2), 0)
    for c in range(3):
        rows = p.train.features[p.train.labels == c]
        np.testing.assert_array_equal(rows, np.broadcast_to(rows[0], rows.shape))
        assert np.linalg.norm(rows[0]) == pytest.approx(2.0)


def test_gaussian_source_deterministic():
    a = make_gaussian_source(SyntheticSource(4, 3), 5)
    b = make_gaussian_source(SyntheticSource(4, 3), 5)
    np.testing.assert_array_equal(a.train.features, b.train.features)


def test_idx_hand_built_fixture(tmp_path):
    img, lab = tmp_path / "img", tmp_path / "lab"
    img.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + bytes([0, 255, 51, 102, 10, 20, 30, 40]))
    lab.write_bytes(struct.pack(">II", 0x801, 2) + bytes([3, 1]))
    pool = load_idx(IdxSource(str(img), str(lab), str(img), str(lab)))
    np.testing.assert_allclose(pool.train.features[0], [0.0, 1.0, 0.2, 0.4])
    assert pool.train.labels.tolist() == [3, 1]
    assert pool.train.features.shape == (2, 4)


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (5, 3, 3), dtype=np.uint8)
    labs = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
    paths = [str(tmp_path / n) for n in ("a", "b")]
    write_idx(*paths, imgs, labs)
    pool = build_pool(IdxSource(*paths, *paths), 0)
    np.testing.assert_allclose(pool.train.features, imgs.reshape(5, 9) / 255.0)


@pytest.mark.parametrize("payload", [
    struct.pack(">IIII", 0x801, 1, 2, 2) + bytes(4),      # wrong magic
    struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(5),      # truncated
    b"\x00\x00",                                          # header cut
])
def test_idx_rejects_malformed(tmp_path, payload):
    img, lab = tmp_path / "img", tmp_path / "lab"
    img.write_bytes(payload)
    lab.write_bytes(struct.pack(">II", 0x801, 2) + bytes([0, 1]))
    with pytest.raises(FormatError):
        load_idx(IdxSource(str(img), str(lab), str(img), str(lab)))


def test_idx_count_mismatch(tmp_path):
    img, lab = tmp_path / "img", tmp_path / "lab"
    img.write_bytes(struct.pack(">IIII", 0x803, 2, 1, 1) + bytes(2))
    lab.write_bytes(struct.pack(">II", 0x801, 3) + bytes(3))
    with pytest.raises(FormatError):
        load_idx(IdxSource(str(img), str(lab), str(img), str(lab)))


def test_class_il_split(pool):
    s = make_class_il_stream(pool, 5, 0)
    assert s.class_map() == [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]
    for t in s:
        assert set(t.train.labels) == set(t.classes)
        assert set(t.test.labels) == set(t.classes)
        assert t.spec.size == len(t.train) == 120
    all_ids = np.concatenate([t.train.ids for t in s])
    assert len(np.unique(all_ids)) == 600
    with pytest.raises(RejectedInputError):
        make_class_il_stream(pool, 3, 0)


def test_single_task_split(pool):
    s = make_class_il_stream(pool, 1, 0)
    assert s.class_map() == [tuple(range(10))]


def test_uniform_allocation_and_pairing():
    big = make_gaussian_source(SyntheticSource(10, 2, 3.0, 1.0, 2000, 1), 0)
    uni = make_gcil_stream(big, 6, 4, 1000, "uniform", dataset_seed=11)
    lt = make_gcil_stream(big, 6, 4, 1000, "longtail", dataset_seed=11)
    assert [t.classes for t in uni] == [t.classes for t in lt]
    for t in uni:
        counts = list(t.spec.sample_count_per_class.values())
        if len(counts) == 4:
            assert counts == [250] * 4
    for t in lt:
        assert t.spec.size == 1000


def test_allocate_longtail_example():
    assert allocate(1000, zipf_profile(4)).tolist() == [480, 240, 160, 120]
    assert allocate(10, np.ones(3)).tolist() == [4, 3, 3]
    assert allocate(7, [1, 1]).sum() == 7


@pytest.mark.parametrize("weighting", ["uniform", "longtail"])
def test_gcil_stream(pool, weighting):
    s = make_gcil_stream(pool, 4, 5, 100, weighting, dataset_seed=3)
    used = []
    for t in s:
        assert 2 <= len(t.classes) <= 5
        assert len(set(t.classes)) == len(t.classes)
        assert set(t.train.labels) <= set(t.classes)
        assert len(t.train) == t.spec.size
        used.append(t.train.ids)
    ids = np.concatenate(used)
    assert len(np.unique(ids)) == len(ids)   # no sample reused across tasks
    again = make_gcil_stream(pool, 4, 5, 100, weighting, dataset_seed=3)
    assert [t.classes for t in again] == [t.classes for t in s]


def test_gcil_exhaustion_warns(pool, caplog):
    with caplog.at_level(logging.WARNING):
        s = make_gcil_stream(pool, 6, 2, 200, "uniform", dataset_seed=0)
    assert any("samples left" in r.message for r in caplog.records)
    assert all(len(t.train) <= 200 for t in s)


def test_noise_count_is_round_half_up():
    s = SampleSet(np.arange(10), np.zeros((10, 1)), np.zeros(10))
    for rate, k in ((0.25, 3), (0.35, 4), (0.0, 0), (1.0, 10)):   # 2.5 -> 3, 3.5 -> 4
        noisy = inject_symmetric_noise(s, (0, 1), rate, 0)
        assert noisy.is_noisy.sum() == k
    assert s.is_noisy.sum() == 0   # input untouched


def test_noise_forced_counts_and_full_flip_rate():
    s = SampleSet(np.arange(100), np.zeros((100, 1)), np.zeros(100))
    assert inject_symmetric_noise(s, (0, 1), 0.5, 3).is_noisy.sum() == 50
    assert inject_symmetric_noise(s, (0, 1), 0.0, 3).is_noisy.sum() == 0
    n = 10_000
    big = SampleSet(np.arange(n), np.zeros((n, 1)), np.arange(n) % 2)
    out = inject_symmetric_noise(big, (0, 1), 1.0, 5)
    assert abs(np.mean(out.labels != out.true_labels) - 0.5) < 0.02


def test_noise_labels_uniform_within_task():
    n = 20000
    s = SampleSet(np.arange(n), np.zeros((n, 1)), np.zeros(n, dtype=int))
    out = inject_symmetric_noise(s, (0, 1, 2, 3), 0.5, 7)
    flipped = out.labels[out.is_noisy]
    counts = np.bincount(flipped, minlength=4)
    # each label ~ Binomial(10000, 1/4); 5 sigma band
    assert np.all(np.abs(counts - 2500) < 5 * np.sqrt(10000 * 0.25 * 0.75))
    assert set(np.unique(out.labels)) <= {0, 1, 2, 3}
    np.testing.assert_array_equal(out.true_labels, 0)


def test_stream_noise_keeps_test_clean(pool):
    s = add_label_noise(make_class_il_stream(pool, 5, 0), 0.4, 1)
    for t in s:
        assert t.train.is_noisy.sum() == 48
        assert not t.test.is_noisy.any()
        np.testing.assert_array_equal(t.test.labels, t.test.true_labels)


def test_epoch_batches():
    s = SampleSet(np.arange(100), np.zeros((100, 1)), np.zeros(100))
    b = epoch_batches(s, 32, 1)
    assert [len(x) for x in b] == [32, 32, 32, 4]
    assert sorted(np.concatenate([x.ids for x in b]).tolist()) == list(range(100))
    assert [x.ids.tolist() for x in epoch_batches(s, 32, 1)] == [x.ids.tolist() for x in b]


def test_derive_seed_is_order_sensitive():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert 0 <= derive_seed(0) < 2 ** 63
