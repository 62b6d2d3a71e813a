import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emrgnn.data import (
    SbmSpec,
    Splits,
    generate_sbm,
    load_dataset,
    parse_manifest,
    triangular_pair,
    write_dataset,
)
from emrgnn.errors import ValidationError


def write_toy(d, featureless=False, extra=""):
    (d / "a.txt").write_text("0 1\n1 2\n")
    (d / "b.txt").write_text("# only one edge\n2 3\n")
    (d / "labels.csv").write_text("0,0\n1,1\n2,0\n3,1\n")
    (d / "splits.txt").write_text("[train]\n0 1\n[val]\n2\n[test]\n3\n")
    if not featureless:
        (d / "x.csv").write_text("1,0\n0,1\n1,1\n0,0\n")
    lines = ["name = toy", "n = 4", "relation = a a.txt", "relation = b b.txt",
             "labels = labels.csv", "splits = splits.txt"]
    lines.append("featureless = true" if featureless else "features = x.csv")
    path = d / "manifest.txt"
    path.write_text("\n".join(lines) + "\n" + extra)
    return path


class TestManifest:
    def test_toy_dataset(self, tmp_path):
        ds = load_dataset(write_toy(tmp_path))
        assert ds.graph.n == 4 and ds.graph.num_relations == 2
        assert ds.graph.relation_names == ("a", "b") or list(ds.graph.relation_names) == ["a", "b"]
        np.testing.assert_array_equal(ds.graph.relations[1].to_dense()[2], [0, 0, 0, 1])
        np.testing.assert_array_equal(ds.features[2], [1, 1])
        np.testing.assert_array_equal(ds.labels, [0, 1, 0, 1])
        np.testing.assert_array_equal(ds.splits.train, [0, 1])
        assert ds.num_classes == 2

    def test_featureless_uses_identity(self, tmp_path):
        ds = load_dataset(write_toy(tmp_path, featureless=True))
        np.testing.assert_array_equal(ds.features, np.eye(4))

    def test_unknown_key_position(self, tmp_path):
        path = write_toy(tmp_path, extra="  colour = blue\n")
        with pytest.raises(ValidationError, match=r"manifest.txt:8:3: unknown key 'colour'"):
            parse_manifest(path)

    def test_missing_equals_position(self, tmp_path):
        path = write_toy(tmp_path, extra="relation c.txt\n")
        with pytest.raises(ValidationError, match=r"manifest.txt:8:1"):
            parse_manifest(path)

    def test_bad_n(self, tmp_path):
        path = write_toy(tmp_path)
        path.write_text(path.read_text().replace("n = 4", "n = four"))
        with pytest.raises(ValidationError, match=r"manifest.txt:2:4: n must be an integer"):
            parse_manifest(path)

    def test_missing_file_named(self, tmp_path):
        path = write_toy(tmp_path)
        (tmp_path / "b.txt").unlink()
        with pytest.raises(ValidationError, match="relation b file not found"):
            parse_manifest(path)

    def test_out_of_range_edge(self, tmp_path):
        path = write_toy(tmp_path)
        (tmp_path / "a.txt").write_text("0 9\n")
        with pytest.raises(ValidationError, match="a.txt"):
            load_dataset(path)

    def test_overlapping_splits_rejected(self, tmp_path):
        path = write_toy(tmp_path)
        (tmp_path / "splits.txt").write_text("[train]\n0 1\n[val]\n1\n[test]\n3\n")
        with pytest.raises(ValidationError, match="overlap"):
            load_dataset(path)

    def test_unlabelled_node_in_split(self, tmp_path):
        path = write_toy(tmp_path)
        (tmp_path / "labels.csv").write_text("0,0\n1,1\n2,0\n")
        with pytest.raises(ValidationError, match="unlabelled"):
            load_dataset(path)

    def test_feature_row_count(self, tmp_path):
        path = write_toy(tmp_path)
        (tmp_path / "x.csv").write_text("1,0\n0,1\n")
        with pytest.raises(ValidationError, match="x.csv"):
            load_dataset(path)


def test_splits_reject_duplicates():
    with pytest.raises(ValidationError):
        Splits([0, 0], [1], [2])


def test_round_trip(tmp_path):
    ds = generate_sbm(SbmSpec(n=90, seed=2))
    back = load_dataset(write_dataset(tmp_path, ds))
    for a, b in zip(ds.graph.relations, back.graph.relations):
        np.testing.assert_array_equal(a.to_dense(), b.to_dense())
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
    for s in ("train", "val", "test"):
        np.testing.assert_array_equal(back.splits[s], ds.splits[s])


class TestSbm:
    def test_deterministic(self):
        a, b = generate_sbm(SbmSpec(seed=5)), generate_sbm(SbmSpec(seed=5))
        np.testing.assert_array_equal(a.features, b.features)
        for x, y in zip(a.graph.relations, b.graph.relations):
            np.testing.assert_array_equal(x.indices, y.indices)
        assert not np.array_equal(generate_sbm(SbmSpec(seed=6)).labels, a.labels)

    def test_balanced_classes_and_splits(self):
        ds = generate_sbm(SbmSpec(n=300, classes=3, seed=1))
        np.testing.assert_array_equal(np.bincount(ds.labels), [100, 100, 100])
        assert ds.splits.train.size == 30 and ds.splits.val.size == 30 and ds.splits.test.size == 240
        for c in range(3):
            assert np.sum(ds.labels[ds.splits.train] == c) == 10

    def test_edge_density(self):
        spec = SbmSpec(n=900, classes=3, relations=((0.06, 0.003),), seed=0)
        ds = generate_sbm(spec)
        A = ds.graph.relations[0].to_dense()
        same = ds.labels[:, None] == ds.labels[None, :]
        iu = np.triu_indices(900, 1)
        p_in = A[iu][same[iu]].mean()
        p_out = A[iu][~same[iu]].mean()
        assert p_in == pytest.approx(0.06, rel=0.05)
        assert p_out == pytest.approx(0.003, rel=0.1)

    def test_noise_relation_carries_no_signal(self):
        ds = generate_sbm(SbmSpec(n=600, relations=((0.02, 0.02),), seed=8))
        e = ds.graph.edge_list(0)
        frac_same = np.mean(ds.labels[e[:, 0]] == ds.labels[e[:, 1]])
        # same-class share of all pairs: 3 * C(200, 2) / C(600, 2) = 199 / 599 ~ 0.332
        assert frac_same == pytest.approx(199 / 599, abs=0.03)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(classes=1), dict(relations=()), dict(relations=((0.01, 0.1),)), dict(split_fractions=(0.5, 0.5, 0.5))],
    )
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ValidationError):
            SbmSpec(**kwargs)


@settings(max_examples=30, deadline=None)
@given(m=st.integers(2, 300))
def test_triangular_pair_matches_triu(m):
    i, j = triangular_pair(np.arange(m * (m - 1) // 2), m)
    iu, ju = np.triu_indices(m, 1)
    np.testing.assert_array_equal(i, iu)
    np.testing.assert_array_equal(j, ju)
