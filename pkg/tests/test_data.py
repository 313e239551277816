import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maskfuse import rng
from maskfuse.data import (
    EMOTIONS,
    Dataset,
    SubjectSample,
    SyntheticSpec,
    class_counts,
    decode_features,
    encode_features,
    generating_means,
    load_dataset,
    read_csv,
    stratified_kfold,
    synth_generate,
    write_csv,
    write_dataset,
)
from maskfuse.errors import (
    BadMagicError,
    DataError,
    DuplicateSubjectError,
    MissingClassError,
    MissingFileError,
    ShapeInconsistencyError,
    TruncatedFileError,
    UnknownLabelError,
    VersionMismatchError,
)


def small_dataset(n=6, d=2, S=3, seed=0):
    rs = np.random.default_rng(seed)
    return Dataset([f"s{i}" for i in range(n)], rs.normal(size=(n, 6, d, S)), [i % 3 for i in range(n)])


def random_finite_f64(rs, size):
    bits = rs.integers(0, 2**64, size=size, dtype=np.uint64)
    vals = bits.view(np.float64)
    return np.where(np.isfinite(vals), vals, -0.0)


class TestStream:
    def test_splitmix_reference(self):
        # first outputs of the canonical SplitMix64 with state 0 (key = 0)
        s = rng.Stream(0)
        s.key = 0
        assert [int(v) for v in s.next_u64(3)] == [
            0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F,
        ]

    def test_counter_continuity(self):
        a = rng.Stream(9, 2)
        first = np.concatenate([a.next_u64(3), a.next_u64(4)])
        np.testing.assert_array_equal(first, rng.Stream(9, 2).next_u64(7))

    def test_uniform_range(self):
        u = rng.Stream(1).uniform(10_000)
        assert u.min() >= 0.0 and u.max() < 1.0
        assert abs(u.mean() - 0.5) < 0.02

    def test_normal_moments(self):
        z = rng.Stream(2).normal(20_001)
        assert abs(z.mean()) < 0.03 and abs(z.std() - 1) < 0.03

    def test_permutation_is_permutation(self):
        p = rng.Stream(3).permutation(50)
        assert sorted(p.tolist()) == list(range(50))

    def test_streams_differ(self):
        assert not np.array_equal(rng.Stream(1, rng.INIT).next_u64(4), rng.Stream(1, rng.SHUFFLE).next_u64(4))


class TestDataset:
    def test_duplicate_ids(self):
        with pytest.raises(DuplicateSubjectError):
            Dataset(["a", "a"], np.zeros((2, 6, 1, 1)), [0, 1])

    def test_bad_label(self):
        with pytest.raises(UnknownLabelError):
            Dataset(["a"], np.zeros((1, 6, 1, 1)), [3])

    def test_from_samples_rejects_mixed_shapes(self):
        a = SubjectSample("a", np.zeros((6, 2, 1)), 0)
        b = SubjectSample("b", np.zeros((6, 3, 1)), 1)
        with pytest.raises(ShapeInconsistencyError):
            Dataset.from_samples([a, b])

    def test_sample_needs_six_maps(self):
        with pytest.raises(ShapeInconsistencyError):
            SubjectSample("a", np.zeros((5, 2, 1)), 0)


class TestClassCounts:
    def test_counting(self):
        np.testing.assert_array_equal(class_counts([0, 0, 1, 2, 2, 2]), [2, 1, 3])

    def test_empty(self):
        np.testing.assert_array_equal(class_counts([]), [0, 0, 0])

    @given(st.lists(st.integers(0, 2), max_size=40), st.randoms())
    def test_permutation_invariant(self, labels, r):
        shuffled = labels[:]
        r.shuffle(shuffled)
        np.testing.assert_array_equal(class_counts(labels), class_counts(shuffled))

    def test_dataset(self):
        np.testing.assert_array_equal(class_counts(small_dataset(7)), [3, 2, 2])


class TestFeatureFiles:
    def test_header_layout(self):
        maps = np.arange(12.0).reshape(6, 2, 1)
        blob = encode_features(maps)
        magic, version, d, S = struct.unpack_from("<4sHII", blob)
        assert (magic, version, d, S) == (b"PDFE", 1, 2, 1)
        # emotion-major, channel-major, spatial-minor
        np.testing.assert_array_equal(np.frombuffer(blob[14:], "<f8"), np.arange(12.0))

    def test_bit_exact_arbitrary_payloads(self, rs):
        maps = random_finite_f64(rs, (6, 3, 2))
        maps.flat[0], maps.flat[1], maps.flat[2] = -0.0, 5e-324, -1e-310
        back = decode_features(encode_features(maps))
        assert back.tobytes() == maps.tobytes()

    def test_bad_magic(self):
        blob = b"NOPE" + encode_features(np.zeros((6, 1, 1)))[4:]
        with pytest.raises(BadMagicError):
            decode_features(blob)

    def test_version(self):
        blob = bytearray(encode_features(np.zeros((6, 1, 1))))
        blob[4:6] = (2).to_bytes(2, "little")
        with pytest.raises(VersionMismatchError):
            decode_features(bytes(blob))

    @pytest.mark.parametrize("cut", [0, 5, 14, 20, -8])
    def test_truncated(self, cut):
        with pytest.raises(TruncatedFileError):
            decode_features(encode_features(np.ones((6, 2, 2)))[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(ShapeInconsistencyError):
            decode_features(encode_features(np.ones((6, 1, 1))) + b"\0" * 8)


class TestManifest:
    def test_round_trip(self, tmp_path, rs):
        ds = small_dataset(9)
        ds.features[0, 0, 0, 0] = -0.0
        ds.features[1, 2, 1, 2] = 5e-324
        ds.features[2] = random_finite_f64(rs, (6, 2, 3))
        write_dataset(ds, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds" / "manifest.json")
        assert back.subject_ids == ds.subject_ids
        assert back.features.tobytes() == ds.features.tobytes()
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_manifest_fields(self, tmp_path):
        write_dataset(small_dataset(3, d=4, S=1), tmp_path)
        m = json.loads((tmp_path / "manifest.json").read_text())
        assert m["format_version"] == 1 and m["d"] == 4 and m["S"] == 1
        assert m["emotion_order"] == list(EMOTIONS)
        assert set(m["samples"][0]) == {"subject_id", "label", "feature_file"}

    def test_overwrite_refused_without_force(self, tmp_path):
        write_dataset(small_dataset(3), tmp_path)
        with pytest.raises(FileExistsError):
            write_dataset(small_dataset(3), tmp_path)
        write_dataset(small_dataset(4), tmp_path, force=True)
        assert len(load_dataset(tmp_path)) == 4

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(DataError):
            write_dataset(Dataset([], np.zeros((0, 6, 1, 1)), []), tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_dataset(tmp_path / "nope.json")

    def test_missing_feature_file(self, tmp_path):
        write_dataset(small_dataset(3), tmp_path)
        (tmp_path / "features" / "000001.pdfe").unlink()
        with pytest.raises(MissingFileError):
            load_dataset(tmp_path)

    def test_truncated_feature_file(self, tmp_path):
        write_dataset(small_dataset(3), tmp_path)
        f = tmp_path / "features" / "000002.pdfe"
        f.write_bytes(f.read_bytes()[:-3])
        with pytest.raises(TruncatedFileError):
            load_dataset(tmp_path)

    def _edit(self, tmp_path, fn):
        write_dataset(small_dataset(3), tmp_path)
        path = tmp_path / "manifest.json"
        m = json.loads(path.read_text())
        fn(m)
        path.write_text(json.dumps(m))
        return path

    def test_duplicate_subject(self, tmp_path):
        def dup(m):
            m["samples"][1]["subject_id"] = m["samples"][0]["subject_id"]

        with pytest.raises(DuplicateSubjectError):
            load_dataset(self._edit(tmp_path, dup))

    def test_unknown_label(self, tmp_path):
        def bad(m):
            m["samples"][0]["label"] = 7

        with pytest.raises(UnknownLabelError):
            load_dataset(self._edit(tmp_path, bad))

    def test_manifest_version(self, tmp_path):
        def bump(m):
            m["format_version"] = 99

        with pytest.raises(VersionMismatchError):
            load_dataset(self._edit(tmp_path, bump))

    def test_shape_disagrees_with_manifest(self, tmp_path):
        def grow(m):
            m["d"] = 5

        with pytest.raises(ShapeInconsistencyError):
            load_dataset(self._edit(tmp_path, grow))


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds = small_dataset(5, d=3, S=1)
        write_csv(ds, tmp_path / "f.csv")
        back = read_csv(tmp_path / "f.csv")
        assert back.features.tobytes() == ds.features.tobytes()
        assert back.subject_ids == ds.subject_ids

    def test_header(self, tmp_path):
        write_csv(small_dataset(3, d=2, S=1), tmp_path / "f.csv")
        header = (tmp_path / "f.csv").read_text().splitlines()[0]
        assert header.startswith("subject_id,label,happiness_0,happiness_1,sadness_0")

    def test_rejects_spatial(self, tmp_path):
        with pytest.raises(ShapeInconsistencyError):
            write_csv(small_dataset(3, S=2), tmp_path / "f.csv")

    def test_bad_label(self, tmp_path):
        write_csv(small_dataset(3, d=1, S=1), tmp_path / "f.csv")
        text = (tmp_path / "f.csv").read_text().replace("s1,1,", "s1,x,")
        (tmp_path / "f.csv").write_text(text)
        with pytest.raises(UnknownLabelError):
            read_csv(tmp_path / "f.csv")


def _deal_oracle(labels, k, seed):
    """Per-class fold sizes straight from the dealing rule (no arrays)."""
    sizes = {}
    offset = 0
    for c in range(3):
        n = sum(1 for y in labels if y == c)
        per_fold = [0] * k
        for j in range(n):
            per_fold[(offset + j) % k] += 1
        sizes[c] = per_fold
        offset = (offset + n) % k
    return sizes


class TestStratifiedKFold:
    def test_exact_divisibility(self):
        labels = [0] * 9 + [1] * 3 + [2] * 3
        folds = stratified_kfold(labels, 3, seed=0)
        for f in range(3):
            np.testing.assert_array_equal(class_counts(np.array(labels)[folds == f]), [3, 1, 1])

    def test_partition(self):
        labels = np.array([0] * 12 + [1] * 7 + [2] * 5)
        folds = stratified_kfold(labels, 5, seed=4)
        assert set(folds.tolist()) == set(range(5))
        members = [set(np.flatnonzero(folds == f)) for f in range(5)]
        assert set().union(*members) == set(range(labels.size))
        assert sum(len(m) for m in members) == labels.size

    def test_uneven_counts_match_dealing_oracle(self):
        labels = [0] * 10 + [1] * 4 + [2] * 3
        folds = stratified_kfold(labels, 3, seed=1)
        oracle = _deal_oracle(labels, 3, seed=1)
        assert sorted(oracle[0], reverse=True) == [4, 3, 3]
        for c in range(3):
            got = [int(np.sum((folds == f) & (np.array(labels) == c))) for f in range(3)]
            assert got == oracle[c]

    def test_deterministic_and_seed_sensitive(self):
        labels = np.repeat([0, 1, 2], [40, 30, 20])
        a = stratified_kfold(labels, 5, seed=3)
        np.testing.assert_array_equal(a, stratified_kfold(labels, 5, seed=3))
        b = stratified_kfold(labels, 5, seed=4)
        assert not np.array_equal(a, b)
        for c in range(3):
            for f in range(5):
                assert np.sum((a == f) & (labels == c)) == np.sum((b == f) & (labels == c))

    def test_too_few_in_class(self):
        with pytest.raises(MissingClassError) as exc:
            stratified_kfold([0] * 10 + [1] * 10 + [2] * 4, 5, 0)
        assert exc.value.label == 2 and "MidLatePD" in str(exc.value)

    def test_k_too_small(self):
        with pytest.raises(DataError):
            stratified_kfold([0, 1, 2], 1, 0)


class TestSynthetic:
    def test_counts_exact(self):
        spec = SyntheticSpec(counts=(7, 3, 2), d=3, S=2, seed=5)
        ds = synth_generate(spec)
        np.testing.assert_array_equal(class_counts(ds), [7, 3, 2])
        assert (ds.d, ds.S) == (3, 2)

    def test_deterministic(self):
        spec = SyntheticSpec(counts=(5, 5, 5), d=2, seed=9)
        assert synth_generate(spec).features.tobytes() == synth_generate(spec).features.tobytes()
        other = SyntheticSpec(counts=(5, 5, 5), d=2, seed=10)
        assert synth_generate(spec).features.tobytes() != synth_generate(other).features.tobytes()

    def test_mean_norms(self):
        spec = SyntheticSpec(d=5, S=3, separation=2.5, informative=(True, False, True, False, False, True))
        means = generating_means(spec)
        for c in range(3):
            for e in range(6):
                norm = np.linalg.norm(means[c, e, :, 0])
                assert norm == (pytest.approx(2.5, rel=1e-12) if spec.informative[e] else 0.0)

    def test_uninformative_emotions_are_pure_noise(self):
        spec = SyntheticSpec(counts=(400, 400, 400), d=2, separation=5.0,
                             informative=(True,) + (False,) * 5, seed=2)
        ds = synth_generate(spec)
        for c in range(3):
            block = ds.features[ds.labels == c, 1:]
            assert abs(block.mean()) < 0.05
            assert abs(block.std() - 1.0) < 0.05

    def test_nearest_generating_mean_oracle(self):
        spec = SyntheticSpec(counts=(100, 100, 100), d=8, S=1, separation=5.0, noise=1.0, seed=0)
        ds = synth_generate(spec)
        means = generating_means(spec).reshape(3, -1)
        flat = ds.features.reshape(len(ds), -1)
        dists = ((flat[:, None, :] - means[None]) ** 2).sum(axis=2)
        assert np.mean(dists.argmin(axis=1) == ds.labels) >= 0.99

    @pytest.mark.parametrize("kwargs", [{"counts": (0, 1, 1)}, {"noise": 0.0}, {"informative": (False,) * 6},
                                        {"d": 0}, {"counts": (1, 1)}])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(DataError):
            SyntheticSpec(**kwargs)
