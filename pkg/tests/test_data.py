import math

import numpy as np
import pytest

from flowgmm.data import (
    Dataset,
    apply_standardization,
    assign_splits,
    gen_eight_gaussians,
    gen_pinwheel,
    gen_two_circles,
    load_delimited,
    make_ssl_split,
    standardize,
    subsample_balance,
    subsample_unlabeled,
    write_delimited,
)


def test_two_circles_noiseless_radii():
    ds = gen_two_circles(101, noise=0.0, seed=1)
    r = np.linalg.norm(ds.X, axis=1)
    assert np.allclose(r[ds.y == 0], 1.0, atol=1e-15)
    assert np.allclose(r[ds.y == 1], 2.0, atol=1e-15)
    counts = np.bincount(ds.y)
    assert abs(counts[0] - counts[1]) <= 1


def test_two_circles_radius_moments():
    n, noise = 1000, 0.1
    # a 3-sigma band: about 1 seed in 200 falls outside it
    ds = gen_two_circles(n, noise=noise, seed=0)
    for k, radius in enumerate((1.0, 2.0)):
        r = np.linalg.norm(ds.X[ds.y == k], axis=1)
        assert abs(r.mean() - radius) < 3 * noise / math.sqrt(len(r))


def test_generators_deterministic_and_validated():
    for gen in (gen_two_circles, gen_pinwheel, gen_eight_gaussians):
        a, b = gen(200, seed=4), gen(200, seed=4)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
        assert not np.array_equal(a.X, gen(200, seed=5).X)
    with pytest.raises(ValueError):
        gen_two_circles(1)
    with pytest.raises(ValueError):
        gen_pinwheel(100, n_classes=1)
    with pytest.raises(ValueError):
        gen_eight_gaussians(100, std=-1)


def test_pinwheel_degenerate_rays():
    C = 5
    ds = gen_pinwheel(500, n_classes=C, seed=0, rate=0.0, tangential_std=0.0)
    counts = np.bincount(ds.y)
    assert counts.max() - counts.min() <= 1
    angles = np.arctan2(ds.X[:, 1], ds.X[:, 0])
    r = np.linalg.norm(ds.X, axis=1)
    expected = 2 * math.pi * ds.y / C
    # a point with a negative radial draw sits on the opposite ray
    signed = np.where(ds.X @ np.array([1.0, 0.0]) * np.cos(expected)
                      + ds.X @ np.array([0.0, 1.0]) * np.sin(expected) >= 0, 0.0, math.pi)
    diff = np.angle(np.exp(1j * (angles - expected - signed)))
    assert np.all(np.abs(diff[r > 1e-12]) < 1e-12)


def _knn_accuracy(Xtr, ytr, Xte, yte, k=5):
    d = ((Xte[:, None] - Xtr[None]) ** 2).sum(-1)
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    pred = np.array([np.bincount(ytr[row]).argmax() for row in nn])
    return float(np.mean(pred == yte))


def test_pinwheel_default_is_nontrivial_but_learnable():
    ds = gen_pinwheel(1000, seed=0)
    means = np.stack([ds.X[ds.y == k].mean(0) for k in range(5)])
    nearest = np.argmin(((ds.X[:, None] - means[None]) ** 2).sum(-1), axis=1)
    assert np.mean(nearest == ds.y) < 1.0
    perm = np.random.default_rng(0).permutation(1000)
    tr, te = perm[:800], perm[800:]
    assert _knn_accuracy(ds.X[tr], ds.y[tr], ds.X[te], ds.y[te]) > 0.95


def test_eight_gaussians_cases():
    r = 3.0
    ds = gen_eight_gaussians(80, seed=0, radius=r, std=0.0)
    ang = ds.y * math.pi / 4
    assert np.allclose(ds.X, r * np.stack([np.cos(ang), np.sin(ang)], 1), atol=1e-15)
    ds = gen_eight_gaussians(4000, seed=1, radius=r, std=0.1 * r)
    means = r * np.stack([np.cos(np.arange(8) * math.pi / 4), np.sin(np.arange(8) * math.pi / 4)], 1)
    nearest = np.argmin(((ds.X[:, None] - means[None]) ** 2).sum(-1), axis=1)
    assert np.mean(nearest == ds.y) >= 0.99


def test_load_delimited_examples(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1.0,2.0,a\n3.0,4.0,b")
    ds = load_delimited(p, label_col=2, has_header=False)
    assert np.array_equal(ds.X, [[1, 2], [3, 4]]) and ds.y.tolist() == [0, 1]
    assert ds.n_classes == 2 and ds.label_names == ["a", "b"]
    p.write_text("f1,f2,cls\n1.0,2.0,x\n5,6,\n")
    ds = load_delimited(p, label_col="cls")
    assert ds.y.tolist() == [0, -1]


def test_load_delimited_numeric_labels_sort_numerically(tmp_path):
    p = tmp_path / "n.csv"
    p.write_text("0.5,10\n0.1,2\n0.2,1\n")
    ds = load_delimited(p, has_header=False)
    assert ds.label_names == ["1", "2", "10"] and ds.y.tolist() == [2, 1, 0]


@pytest.mark.parametrize("content,match", [
    ("a,b,c\n1,2,x\n1,2\n", r":3: expected 3 fields"),
    ("a,b,c\n1,oops,x\n", r":2: non-numeric"),
    ("a,b,c\n1,inf,x\n", r":2: non-finite"),
])
def test_load_delimited_errors_carry_line_numbers(tmp_path, content, match):
    p = tmp_path / "bad.csv"
    p.write_text(content)
    with pytest.raises(ValueError, match=match):
        load_delimited(p)


def test_load_delimited_bad_label_column(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("a,b\n1,x\n")
    with pytest.raises(ValueError, match="unknown label column"):
        load_delimited(p, label_col="zzz")
    with pytest.raises(ValueError, match="out of range"):
        load_delimited(p, label_col=5)
    with pytest.raises(ValueError, match="not in label map"):
        load_delimited(p, label_names=["y"])


def test_write_then_load_round_trip(tmp_path, rng):
    ds = Dataset(rng.standard_normal((30, 4)), rng.integers(-1, 3, 30), 3, label_names=["u", "v", "w"])
    p = tmp_path / "rt.csv"
    write_delimited(ds, p)
    back = load_delimited(p, label_names=ds.label_names)
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)


def test_standardize_cases(rng):
    X = rng.standard_normal((50, 3)) * [1, 5, 0] + [2, -1, 7]
    split = np.array(["train"] * 40 + ["test"] * 10, dtype=object)
    ds = standardize(Dataset(X, np.zeros(50, int), 1, split=split))
    tr = ds.X[:40]
    assert np.all(np.abs(tr.mean(0)) < 1e-10)
    assert np.allclose(tr[:, :2].std(0), 1, atol=1e-10)
    assert np.all(tr[:, 2] == 0) and ds.std[2] == 1.0
    assert np.allclose(ds.mean, X[:40].mean(0)) and np.allclose(ds.std[:2], X[:40, :2].std(0))
    assert np.array_equal(apply_standardization(X, ds.mean, ds.std), ds.X)
    again = standardize(ds)
    assert np.allclose(again.X, ds.X, atol=1e-10)
    with pytest.raises(ValueError):
        standardize(Dataset(X, np.zeros(50, int), 1, split=np.full(50, "test", dtype=object)))


def test_make_ssl_split_cases():
    ds = assign_splits(gen_pinwheel(500, seed=0), n_val=50, n_test=50, seed=0)
    assert np.array_equal(make_ssl_split(ds, None).y, ds.y)
    a = make_ssl_split(ds, 7, seed=1)
    b = make_ssl_split(ds, 7, seed=2)
    train = a.rows("train")
    assert np.array_equal(np.bincount(a.y[train][a.y[train] >= 0], minlength=5), [7] * 5)
    assert np.array_equal(a.X, ds.X)
    held = ds.split != "train"
    assert np.array_equal(a.y[held], ds.y[held])
    assert not np.array_equal(a.y >= 0, b.y >= 0)
    with pytest.raises(ValueError, match="fewer than"):
        make_ssl_split(ds, 1000)


def test_assign_splits_stratified_and_labeled_only():
    ds = make_ssl_split(gen_two_circles(400, seed=0), 150, seed=0)
    out = assign_splits(ds, n_val=40, n_test=100, seed=0)
    for name, n in (("val", 40), ("test", 100)):
        y = out.y[out.rows(name)]
        assert len(y) == n and np.all(y >= 0)
        assert abs(np.sum(y == 0) - np.sum(y == 1)) <= 1
    with pytest.raises(ValueError):
        assign_splits(ds, n_val=200, n_test=200)


def test_subsample_unlabeled_keeps_labels(rng):
    ds = make_ssl_split(gen_two_circles(300, seed=0), 5, seed=0)
    out, keep = subsample_unlabeled(ds, 50, seed=1, return_index=True)
    assert np.sum(out.y < 0) == 50 and np.sum(out.y >= 0) == 10
    assert np.array_equal(out.X, ds.X[keep])


def test_subsample_balance_cases():
    X = np.arange(140.0)[:, None]
    y = np.array([0] * 100 + [1] * 40)
    out = subsample_balance(Dataset(X, y, 2), seed=0)
    assert np.bincount(out.y).tolist() == [40, 40]
    assert set(out.X[out.y == 0, 0]) <= set(range(100))
    assert set(out.X[out.y == 1, 0]) <= set(range(100, 140))
    even = Dataset(X[:80], np.arange(80) % 2, 2)
    assert np.bincount(subsample_balance(even).y).tolist() == [40, 40]
    with pytest.raises(ValueError, match="class 2"):
        subsample_balance(Dataset(X, y, 3))


def test_dataset_rejects_bad_labels():
    with pytest.raises(ValueError, match="row 1"):
        Dataset(np.zeros((2, 1)), [0, 5], 2)
