import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ltfusion.data import (
    AlignmentError,
    DatasetConfig,
    Sample,
    class_counts,
    class_prototypes,
    eval_clip,
    generate,
    merge_splits,
    read_dataset,
    sample_clip,
    write_dataset,
)
from ltfusion.numkernel import Rng
from ltfusion.textio import FormatError


def brute_counts(n_head, rho, k):
    return [max(1, int(math.floor(n_head * rho ** (-i / (k - 1)) + 0.5))) for i in range(k)]


class TestClassCounts:
    def test_balanced(self):
        assert class_counts(DatasetConfig(imbalance_ratio=1.0)) == [200] * 12

    def test_defaults(self):
        c = class_counts(DatasetConfig())
        assert c[0] == 200 and c[11] == 4
        assert c == brute_counts(200, 50, 12)

    @given(st.integers(1, 500), st.floats(1, 1000), st.integers(2, 40))
    def test_profile(self, n_head, rho, k):
        c = class_counts(DatasetConfig(k=k, n_head=n_head, imbalance_ratio=rho))
        assert c[0] == n_head
        assert all(b <= a for a, b in zip(c, c[1:]))
        assert min(c) >= 1
        assert c[-1] == max(1, math.floor(n_head / rho + 0.5))

    @pytest.mark.parametrize(
        "kwargs",
        [dict(imbalance_ratio=0.5), dict(len_min=0), dict(len_min=5, len_max=4),
         dict(confusion_rate=1.5), dict(k=1)],
    )
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            DatasetConfig(**kwargs)


@pytest.fixture(scope="module")
def small_cfg():
    return DatasetConfig(k=5, n_head=30, imbalance_ratio=10, d_a=3, d_b=4, len_min=2, len_max=20, seed=9)


class TestGenerate:
    def test_deterministic(self, small_cfg):
        a, b = generate(small_cfg), generate(small_cfg)
        for split in a:
            assert a[split] == b[split]

    def test_seed_matters(self, small_cfg):
        other = DatasetConfig(**{**small_cfg.to_dict(), "seed": 10})
        assert generate(small_cfg)["train"] != generate(other)["train"]

    def test_split_sizes(self, small_cfg):
        s = generate(small_cfg)
        labels = [x.label for x in s["train"]]
        assert [labels.count(c) for c in range(5)] == class_counts(small_cfg)
        for split in ("val", "test"):
            labels = [x.label for x in s[split]]
            assert [labels.count(c) for c in range(5)] == [3] * 5

    def test_default_train_size(self):
        cfg = DatasetConfig(seed=42)
        s = generate(cfg)
        assert len(s["train"]) == sum(brute_counts(200, 50, 12))
        assert len(s["val"]) == len(s["test"]) == 12 * 20

    def test_sample_shapes(self, small_cfg):
        s = generate(small_cfg)
        ids = [x.id for split in s.values() for x in split]
        assert len(set(ids)) == len(ids)
        for x in s["train"]:
            assert x.seq_a.shape[0] == x.seq_b.shape[0]
            assert 2 <= x.seq_a.shape[0] <= 20
            assert x.seq_a.shape[1] == 3 and x.seq_b.shape[1] == 4

    def test_noiseless_equals_prototypes(self):
        cfg = DatasetConfig(k=6, n_head=20, noise_sigma=0.0, confusion_rate=0.0, seed=4)
        pa, pb = class_prototypes(cfg)
        s = generate(cfg)
        for x in s["test"]:
            np.testing.assert_array_equal(x.seq_a, np.tile(pa[x.label], (x.seq_a.shape[0], 1)))
            np.testing.assert_array_equal(x.seq_b, np.tile(pb[x.label], (x.seq_b.shape[0], 1)))
            d = ((pa - x.seq_a.mean(axis=0)) ** 2).sum(axis=1)
            assert int(np.argmin(d)) == x.label

    def test_fusion_beats_single_nearest_prototype(self):
        cfg = DatasetConfig(seed=42)
        pa, pb = class_prototypes(cfg)
        test = generate(cfg)["test"]
        y = np.array([x.label for x in test])
        ma = np.stack([x.seq_a.mean(axis=0) for x in test])
        mb = np.stack([x.seq_b.mean(axis=0) for x in test])
        da = ((ma[:, None, :] - pa[None]) ** 2).sum(-1)
        db = ((mb[:, None, :] - pb[None]) ** 2).sum(-1)
        acc = [float((np.argmin(d, axis=1) == y).mean()) for d in (da, db, da + db)]
        assert acc[2] > acc[0] and acc[2] > acc[1]

    def test_merge(self, small_cfg):
        s = generate(small_cfg)
        merged = merge_splits(s["train"], s["val"])
        assert len(merged) == len(s["train"]) + len(s["val"])


class TestClips:
    def test_long_sequence(self):
        seq = np.arange(40 * 2, dtype=float).reshape(40, 2)
        rng = Rng(0)
        starts = set()
        for _ in range(300):
            c = sample_clip(seq, 16, rng)
            assert 0 <= c.source_start <= 24
            np.testing.assert_array_equal(c.frames, seq[c.source_start:c.source_start + 16])
            starts.add(c.source_start)
        assert starts == set(range(25))

    def test_short_sequence_padding(self):
        seq = np.arange(10 * 3, dtype=float).reshape(10, 3)
        c = sample_clip(seq, 16, Rng(1))
        assert c.source_start == 0
        np.testing.assert_array_equal(c.frames[:10], seq)
        np.testing.assert_array_equal(c.frames[10:], np.tile(seq[9], (6, 1)))

    def test_exact_fit(self):
        seq = np.arange(16 * 2, dtype=float).reshape(16, 2)
        for c in (sample_clip(seq, 16, Rng(2)), eval_clip(seq, 16)):
            assert c.source_start == 0
            np.testing.assert_array_equal(c.frames, seq)

    def test_eval_center(self):
        seq = np.arange(40, dtype=float).reshape(40, 1)
        c = eval_clip(seq, 16)
        assert c.source_start == 12
        np.testing.assert_array_equal(c.frames[:, 0], np.arange(12, 28))

    def test_eval_short(self):
        seq = np.ones((5, 2))
        c = eval_clip(seq, 16)
        assert c.source_start == 0 and c.frames.shape == (16, 2)

    def test_empty(self):
        with pytest.raises(ValueError):
            sample_clip(np.zeros((0, 3)), 16, Rng(0))
        with pytest.raises(ValueError):
            eval_clip(np.zeros((0, 3)), 16)

    @settings(max_examples=200)
    @given(st.integers(1, 60), st.integers(1, 40), st.integers(0, 2**32))
    def test_clip_length_and_padding(self, t, clip_len, seed):
        seq = np.arange(t * 2, dtype=float).reshape(t, 2)
        for c in (sample_clip(seq, clip_len, Rng(seed)), eval_clip(seq, clip_len)):
            assert c.frames.shape == (clip_len, 2)
            if t < clip_len:
                np.testing.assert_array_equal(c.frames[t:], np.tile(seq[-1], (clip_len - t, 1)))


class TestDatasetFile:
    def test_round_trip(self, tmp_path, small_cfg):
        samples = generate(small_cfg)["val"][:3]
        path = tmp_path / "d.jsonl"
        write_dataset(path, samples)
        assert read_dataset(path) == samples

    def test_round_trip_extreme_values(self, tmp_path):
        rng = np.random.default_rng(0)
        samples = []
        for i in range(20):
            t = int(rng.integers(1, 6))
            scale = 10.0 ** rng.integers(-300, 300)
            samples.append(Sample(i, int(rng.integers(0, 4)), rng.normal(size=(t, 3)) * scale,
                                  rng.normal(size=(t, 2))))
        path = tmp_path / "x.jsonl"
        write_dataset(path, samples)
        back = read_dataset(path)
        for a, b in zip(samples, back):
            assert a.seq_a.tobytes() == b.seq_a.tobytes()
            assert a.seq_b.tobytes() == b.seq_b.tobytes()

    def test_truncated_line(self, tmp_path, small_cfg):
        path = tmp_path / "d.jsonl"
        write_dataset(path, generate(small_cfg)["val"][:3])
        lines = path.read_text().splitlines()
        lines[1] = lines[1][: len(lines[1]) // 2]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match=":2:"):
            read_dataset(path)

    def test_misaligned(self, tmp_path):
        rec = {"id": 0, "label": 1,
               "seq_a": {"shape": [2, 1], "data": [0.0, 1.0]},
               "seq_b": {"shape": [3, 1], "data": [0.0, 1.0, 2.0]}}
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(AlignmentError, match="aligned"):
            read_dataset(path)

    @pytest.mark.parametrize(
        "rec, field",
        [
            ({"label": 1, "seq_a": None, "seq_b": None}, "id"),
            ({"id": 0, "label": "x", "seq_a": None, "seq_b": None}, "label"),
            ({"id": 0, "label": 1, "seq_a": {"shape": [2, 2], "data": [1.0]},
              "seq_b": {"shape": [2, 2], "data": [1.0] * 4}}, "seq_a"),
        ],
    )
    def test_bad_fields_named(self, tmp_path, rec, field):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(FormatError, match=field):
            read_dataset(path)
