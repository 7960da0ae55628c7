import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabshot.data import (
    Dataset,
    FeatureKind,
    FeatureSpec,
    encode_labels,
    impute,
    load_csv,
    normalize,
    preprocess,
    split,
)
from tabshot.exceptions import (
    DataFormatError,
    EmptyDatasetError,
    StratificationError,
    UnknownCategoryError,
    UnusableFeatureError,
)


def numeric_ds(cols, labels=None):
    x = np.asarray(cols, dtype=float).T
    labels = np.zeros(x.shape[0], dtype=int) if labels is None else labels
    feats = [FeatureSpec(f"f{i}") for i in range(x.shape[1])]
    return Dataset(feats, x, labels, ["a", "b"])


def test_load_small_csv(tmp_csv):
    ds = load_csv(tmp_csv("a,b,y\n1,2,x\n3,4,z\n5,6,x\n"), label="y")
    assert ds.n_features == 2 and ds.n_rows == 3
    assert ds.class_names == ("x", "z")
    assert ds.labels.tolist() == [0, 1, 0]
    assert ds.values.dtype == np.float64


def test_load_diabetes_shaped_csv(tmp_path):
    # 8 numeric features + binary outcome, 768 rows
    rng = np.random.default_rng(0)
    names = ["Pregnancies", "Glucose", "BloodPressure", "SkinThickness", "Insulin", "BMI",
             "DiabetesPedigreeFunction", "Age", "Outcome"]
    p = tmp_path / "diabetes.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for _ in range(768):
            w.writerow([*np.round(rng.uniform(0, 100, 8), 3), int(rng.integers(2))])
    ds = load_csv(p, label="Outcome")
    assert ds.n_rows == 768
    assert ds.n_features + 1 == 9
    assert len(ds.class_names) == 2


def test_ragged_row_reports_line(tmp_csv):
    with pytest.raises(DataFormatError, match="row 3"):
        load_csv(tmp_csv("a,b,y\n1,2,0\n1,2\n"), label="y")


def test_empty_dataset(tmp_csv):
    with pytest.raises(EmptyDatasetError):
        load_csv(tmp_csv("a,b,y\n"), label="y")


def test_missing_label_column(tmp_csv):
    with pytest.raises(DataFormatError):
        load_csv(tmp_csv("a,b,y\n1,2,0\n"), label="target")


def test_categorical_inference_and_missing(tmp_csv):
    ds = load_csv(tmp_csv("size,w,y\nlow,1.5,0\nhigh,?,1\nmed,NA,0\n,2,1\n"), label="y")
    size, w = ds.features
    assert size.kind is FeatureKind.CATEGORICAL and size.categories == ("high", "low", "med")
    assert w.kind is FeatureKind.NUMERIC
    assert ds.values[3, 0] is None
    assert np.isnan(ds.values[1, 1]) and np.isnan(ds.values[2, 1])


def test_feature_spec_invariants():
    with pytest.raises(ValueError):
        FeatureSpec("c", FeatureKind.CATEGORICAL, [])
    with pytest.raises(ValueError):
        FeatureSpec("n", FeatureKind.NUMERIC, ["a"])
    with pytest.raises(ValueError):
        FeatureSpec("c", FeatureKind.CATEGORICAL, ["a", "a"])


def test_encode_sorted_index(tmp_csv):
    ds = encode_labels(load_csv(tmp_csv("lvl,y\nlow,0\nhigh,1\nmed,0\n"), label="y"))
    assert ds.values[:, 0].tolist() == [1.0, 0.0, 2.0]


def test_encode_all_numeric_is_identity(tmp_csv):
    ds = load_csv(tmp_csv("a,b,y\n1,2,0\n3,4,1\n"), label="y")
    assert encode_labels(ds) is ds


def test_encode_unknown_category():
    spec = FeatureSpec("colour", FeatureKind.CATEGORICAL, ["blue", "red"])
    ds = Dataset([spec], np.array([["green"]], dtype=object), [0], ["a"])
    with pytest.raises(UnknownCategoryError, match="colour.*green|green.*colour"):
        encode_labels(ds)


def test_encode_car_like_matches_dictionary_oracle(tmp_path):
    levels = {
        "buying": ["vhigh", "high", "med", "low"],
        "maint": ["vhigh", "high", "med", "low"],
        "doors": ["2", "3", "4", "5more"],
        "persons": ["2", "4", "more"],
        "lug_boot": ["small", "med", "big"],
        "safety": ["low", "med", "high"],
    }
    rng = np.random.default_rng(1)
    rows = [[str(rng.choice(v)) for v in levels.values()] + [str(rng.choice(["unacc", "acc", "good", "vgood"]))]
            for _ in range(1728)]
    p = tmp_path / "car.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(levels) + ["class"])
        w.writerows(rows)
    # 'doors' and 'persons' contain non-numeric cells, so every column is categorical
    ds = encode_labels(load_csv(p, label="class"))
    assert ds.values.dtype == np.float64
    for j, name in enumerate(levels):
        seen = sorted({r[j] for r in rows})
        table = {c: i for i, c in enumerate(seen)}
        expect = [table[r[j]] for r in rows]
        assert ds.values[:, j].tolist() == expect, name


def test_impute_median_and_mode():
    num = numeric_ds([[1, np.nan, 3]])
    assert impute(num).values[:, 0].tolist() == [1, 2, 3]
    spec = FeatureSpec("c", FeatureKind.CATEGORICAL, ["A", "B"])
    cat = Dataset([spec], np.array([["A"], ["A"], [None], ["B"]], dtype=object), [0, 0, 0, 0], ["k"])
    assert impute(cat).values[:, 0].tolist() == ["A", "A", "A", "B"]


def test_impute_no_missing_is_identity():
    ds = numeric_ds([[1, 2, 3], [4, 5, 6]])
    assert np.array_equal(impute(ds).values, ds.values)


def test_impute_all_missing_column():
    with pytest.raises(UnusableFeatureError):
        impute(numeric_ds([[np.nan, np.nan]]))


def test_normalize_examples():
    ds = normalize(numeric_ds([[0, 5, 10], [7, 7, 7]]))
    assert ds.values[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert ds.values[:, 1].tolist() == [0.5, 0.5, 0.5]
    assert ds.norm_stats == ((0.0, 10.0), (7.0, 7.0))


def test_normalize_clamps_with_train_stats():
    test = normalize(numeric_ds([[12.0, -3.0, 4.0]]), stats=[(0.0, 10.0)])
    raw = (np.array([12.0, -3.0, 4.0]) - 0.0) / (10.0 - 0.0)
    assert raw[0] == pytest.approx(1.2)
    assert test.values[:, 0].tolist() == [1.0, 0.0, 0.4]


def test_normalize_is_idempotent():
    ds = normalize(numeric_ds([[3, 9, -1, 4], [2, 2, 2, 2]]))
    again = normalize(ds)
    assert np.array_equal(again.values, ds.values)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_row_permutation_commutes_with_impute_normalize(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 3))
    x[rng.random(x.shape) < 0.2] = np.nan
    x[0] = 0.0  # keep every column observed
    ds = numeric_ds(x.T, labels=np.zeros(12, dtype=int))
    perm = rng.permutation(12)
    a = normalize(impute(ds)).values[perm]
    b = normalize(impute(ds.take(perm))).values
    assert np.allclose(a, b, rtol=0, atol=0)


def labeled_ds(n, n_classes, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    return Dataset([FeatureSpec("f0")], rng.normal(size=(n, 1)), labels,
                   [f"c{i}" for i in range(n_classes)])


def test_split_counts_and_ratios():
    ds = labeled_ds(100, 2)
    a, b = split(ds, seed=7, fractions=[0.8, 0.2])
    assert (a.n_rows, b.n_rows) == (80, 20)
    for part, frac in ((a, 0.8), (b, 0.2)):
        for c in range(2):
            expect = frac * (ds.labels == c).sum()
            assert abs((part.labels == c).sum() - expect) <= 1


def test_split_single_part_and_determinism():
    ds = labeled_ds(30, 3)
    (whole,) = split(ds, seed=1, fractions=[1.0])
    assert np.array_equal(whole.values, ds.values) and np.array_equal(whole.labels, ds.labels)
    p1 = split(ds, seed=5, fractions=[0.5, 0.3, 0.2])
    p2 = split(ds, seed=5, fractions=[0.5, 0.3, 0.2])
    assert all(np.array_equal(x.row_ids, y.row_ids) for x, y in zip(p1, p2))


def test_split_too_few_rows_in_a_class():
    ds = Dataset([FeatureSpec("f")], np.zeros((5, 1)), [0, 0, 0, 0, 1], ["a", "b"])
    with pytest.raises(StratificationError, match="'b'"):
        split(ds, seed=0, fractions=[0.5, 0.5])


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(6, 80),
    n_classes=st.integers(1, 3),
    raw=st.lists(st.floats(0.05, 1.0), min_size=1, max_size=3),
    seed=st.integers(0, 10_000),
)
def test_split_is_disjoint_and_exhaustive(n, n_classes, raw, seed):
    fractions = np.asarray(raw) / np.sum(raw)
    ds = labeled_ds(n, n_classes, seed)
    if min((ds.labels == c).sum() for c in range(n_classes)) < len(fractions):
        with pytest.raises(StratificationError):
            split(ds, seed, fractions)
        return
    parts = split(ds, seed, fractions)
    ids = np.concatenate([p.row_ids for p in parts])
    assert sorted(ids.tolist()) == list(range(n))
    for p in parts:
        assert set(np.unique(p.labels)) == set(range(n_classes))


def test_preprocess_chain_bounds(tmp_csv):
    ds = preprocess(load_csv(tmp_csv("a,c,y\n1,x,0\n?,y,1\n5,,0\n9,x,1\n"), label="y"))
    assert ds.values.min() >= 0 and ds.values.max() <= 1
    assert not np.isnan(ds.values).any()
