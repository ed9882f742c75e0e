import json

import numpy as np
import pytest

from sdpmetric.data import (DataFormatError, Dataset, SplitSpec, TripletConstraint, TripletSet,
                            apply_pca, generate_triplets, load_dense, load_libsvm, make_splits,
                            standardize)
from sdpmetric.datasets import BUILTIN, load_builtin


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_line_csv(tmp_path):
    ds = load_dense(_write(tmp_path, "1.0,2.0,A\n0.0,1.0,A\n5.0,5.0,B\n"))
    assert (ds.n, ds.dim, ds.n_classes) == (3, 2, 2)
    assert ds.classes == ("A", "B")
    assert list(ds.labels) == [0, 0, 1]


def test_header_and_named_label_column(tmp_path):
    p = _write(tmp_path, "cls,x,y\n1,0.5,1\n2,1.5,2\n1,0.0,0\n")
    ds = load_dense(p, label_column="cls")
    assert ds.dim == 2 and ds.classes == (1, 2)
    assert np.allclose(ds.samples[0], [0.5, 1])
    sniffed = load_dense(p, label_column=0)
    assert np.array_equal(sniffed.samples, ds.samples)
    assert load_dense(p, label_column="0").dim == 2


def test_numeric_labels_sorted_numerically(tmp_path):
    ds = load_dense(_write(tmp_path, "0,10\n1,2\n2,10\n3,9\n"))
    assert ds.classes == (2, 9, 10)


@pytest.mark.parametrize("text,line,fragment", [
    ("1,2,A\n1,A\n", 2, "expected 3 fields"),
    ("1,2,A\n1,x,B\n", 2, "non-numeric"),
    ("1,2,A\n\n1,nan,B\n", 3, "non-finite"),
])
def test_csv_errors_carry_line(tmp_path, text, line, fragment):
    with pytest.raises(DataFormatError) as e:
        load_dense(_write(tmp_path, text))
    assert e.value.line == line
    assert fragment in str(e.value) and f":{line}" in str(e.value)


def test_csv_empty_and_unknown_column(tmp_path):
    with pytest.raises(DataFormatError, match="empty"):
        load_dense(_write(tmp_path, ""))
    with pytest.raises(DataFormatError, match="unknown label column"):
        load_dense(_write(tmp_path, "a,b\n1,2\n3,4\n"), label_column="zzz")
    with pytest.raises(DataFormatError, match="out of range"):
        load_dense(_write(tmp_path, "1,2\n3,4\n"), label_column=7)


def test_libsvm_basic(tmp_path):
    ds = load_libsvm(_write(tmp_path, "1 1:0.5 3:2.0\n2 2:1\n", "d.svm"))
    assert np.array_equal(ds.samples[0], [0.5, 0, 2.0])
    assert ds.classes == (1, 2) and ds.dim == 3


@pytest.mark.parametrize("text,fragment", [
    ("1 3:1 2:1\n", "ascending"),
    ("1 1:0.5\n2 1=3\n", "malformed"),
    ("1 0:1\n", "malformed"),
    ("", "empty"),
])
def test_libsvm_errors(tmp_path, text, fragment):
    with pytest.raises(DataFormatError, match=fragment):
        load_libsvm(_write(tmp_path, text, "d.svm"))


def test_builtin_wine(wine):
    assert (wine.n, wine.dim, wine.n_classes) == (178, 13, 3)


def test_builtin_catalogue():
    shapes = {n: (d.n, d.dim, d.n_classes) for n in BUILTIN for d in [load_builtin(n)]}
    assert shapes == {"wine": (178, 13, 3), "balance": (625, 4, 3), "breast_cancer": (683, 9, 2)}


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(np.ones((1, 2)), [0])
    with pytest.raises(ValueError):
        Dataset(np.ones((3, 2)), [0, 1])
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0], [np.inf]]), [0, 1])


def test_split_sizes_hundred():
    ds = Dataset(np.arange(200.0).reshape(100, 2), np.arange(100) % 2)
    s = make_splits(ds, seed=7)
    assert (len(s.train), len(s.validation), len(s.test)) == (70, 15, 15)


def test_split_sizes_wine(wine):
    s = make_splits(wine, seed=0)
    assert (len(s.train), len(s.validation), len(s.test)) == (126, 26, 26)


def test_split_disjoint_covering_stratified(wine):
    s = make_splits(wine, seed=3)
    idx = list(s.train) + list(s.validation) + list(s.test)
    assert sorted(idx) == list(range(wine.n))
    for part in (s.train, s.validation, s.test):
        assert set(wine.labels[list(part)]) == {0, 1, 2}


def test_split_determinism_and_json(wine, tmp_path):
    a, b = make_splits(wine, seed=11), make_splits(wine, seed=11)
    assert a.to_json() == b.to_json()
    assert a.to_json() != make_splits(wine, seed=12).to_json()
    a.save(tmp_path / "s.json")
    back = SplitSpec.load(tmp_path / "s.json")
    assert back.train == a.train and back.test == a.test and back.seed == 11
    assert set(json.loads(a.to_json())) == {"seed", "train", "validation", "test"}


def test_split_small_class_confined_to_train(caplog):
    y = np.array([0] * 20 + [1] * 20 + [2] * 2)
    ds = Dataset(np.random.default_rng(0).normal(size=(42, 2)), y)
    s = make_splits(ds, seed=0)
    assert set(np.flatnonzero(y == 2)) <= set(s.train)
    assert "confined" in caplog.text or "fewer" in caplog.text


def test_split_bad_fractions(wine):
    with pytest.raises(ValueError):
        make_splits(wine, fractions=(0.5, 0.3, 0.3))
    with pytest.raises(ValueError):
        SplitSpec((0, 1), (1,), (2,))


def test_triplets_wine_count(wine):
    s = make_splits(wine, seed=0)
    T = generate_triplets(wine, s.train, 3)
    assert len(T) == 1134


def test_triplets_labels_and_factors(wine):
    s = make_splits(wine, seed=1)
    T = generate_triplets(wine, s.train, 2)
    y, A = wine.labels, wine.samples
    i, j, k = T.index.T
    assert np.all(y[i] == y[j]) and np.all(y[i] != y[k])
    assert np.array_equal(T.U, A[i] - A[k]) and np.array_equal(T.V, A[i] - A[j])
    assert set(i) | set(j) | set(k) <= set(s.train)


def test_triplets_two_per_class():
    A = np.array([[0.0, 0], [0, 1], [5, 0], [5, 1]])
    ds = Dataset(A, [0, 0, 1, 1])
    assert len(generate_triplets(ds, range(4), m=1)) == 4


def test_triplet_count_formula():
    r = np.random.default_rng(2)
    y = np.array([0] * 3 + [1] * 7 + [2] * 1)
    ds = Dataset(r.normal(size=(11, 3)), y)
    m = 3
    want = sum(min(m, np.sum(y == y[i]) - 1) * min(m, np.sum(y != y[i])) for i in range(11))
    T = generate_triplets(ds, range(11), m)
    assert len(T) == want
    # the singleton class only ever appears as an impostor
    assert 10 not in T.index[:, 0] and 10 not in T.index[:, 1] and 10 in T.index[:, 2]


def test_triplet_ties_smallest_index():
    # samples 1 and 2 are both at distance 1 from sample 0
    A = np.array([[0.0], [1.0], [-1.0], [10.0], [11.0]])
    ds = Dataset(A, [0, 0, 0, 1, 1])
    T = generate_triplets(ds, range(5), m=1)
    row = T.index[T.index[:, 0] == 0][0]
    assert row[1] == 1


def test_triplet_constraint_inner(rng):
    a_i, a_j, a_k = rng.normal(size=(3, 4))
    c = TripletConstraint(a_i - a_k, a_i - a_j, 0, 1, 2)
    X = rng.normal(size=(4, 4))
    X = X @ X.T
    A = np.outer(c.u, c.u) - np.outer(c.v, c.v)
    assert c.inner(X) == pytest.approx(np.sum(A * X), rel=1e-12)
    T = TripletSet.from_constraints([c, c])
    assert len(T) == 2 and T.dim == 4
    assert T.margins(X)[0] == pytest.approx(c.inner(X), rel=1e-12)
    assert T[1].i == 0 and T[1].k == 2


def test_standardize_uses_train_only(wine):
    s = make_splits(wine, seed=0)
    z = standardize(wine, s.train)
    tr = z.samples[list(s.train)]
    assert np.allclose(tr.mean(axis=0), 0, atol=1e-10)
    assert np.allclose(tr.std(axis=0), 1, atol=1e-10)


def test_pca_full_rank_preserves_distances(wine):
    s = make_splits(wine, seed=0)
    p, proj = apply_pca(wine, s.train, wine.dim)
    A, B = wine.samples, p.samples
    d0 = np.sum((A[:, None] - A[None]) ** 2, axis=2)
    d1 = np.sum((B[:, None] - B[None]) ** 2, axis=2)
    assert np.max(np.abs(d0 - d1)) <= 1e-8 * max(1, d0.max())


def test_pca_no_leakage(wine):
    s = make_splits(wine, seed=0)
    _, proj = apply_pca(wine, s.train, 5)
    perm = np.random.default_rng(9).permutation(wine.n)
    keep = np.array(sorted(s.train))
    shuffled = wine.samples.copy()
    others = np.setdiff1d(np.arange(wine.n), keep)
    shuffled[others] = wine.samples[perm[: len(others)]]
    alt = Dataset(shuffled, wine.labels)
    _, proj2 = apply_pca(alt, s.train, 5)
    assert np.array_equal(proj.components, proj2.components)
    assert np.array_equal(proj.mean, proj2.mean)


def test_pca_target_too_large(wine):
    with pytest.raises(ValueError):
        apply_pca(wine, range(50), wine.dim + 1)
