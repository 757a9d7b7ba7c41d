"""Datasets: synthetic generators, delimited-file IO, standardization, splits.

Labels use -1 for "unlabeled" in memory and an empty field on disk.
Splits are tagged per row as ``train``, ``val`` or ``test``.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Dataset",
    "assign_splits",
    "gen_eight_gaussians",
    "gen_pinwheel",
    "gen_two_circles",
    "load_delimited",
    "make_ssl_split",
    "standardize",
    "subsample_balance",
    "subsample_unlabeled",
    "write_delimited",
]

UNLABELED = -1
SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    split: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    label_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.y) != len(self.X):
            raise ValueError("X must be (n, D) with one label per row")
        if self.split is None:
            self.split = np.full(len(self.y), "train", dtype=object)
        self.split = np.asarray(self.split, dtype=object)
        bad = (self.y < UNLABELED) | (self.y >= self.n_classes)
        if bad.any():
            raise ValueError(f"label out of range at row {int(np.flatnonzero(bad)[0])}")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def rows(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.rows(split)
        return self.X[idx], self.y[idx]

    def labeled(self, split: str = "train") -> tuple[np.ndarray, np.ndarray]:
        idx = self.rows(split)
        idx = idx[self.y[idx] >= 0]
        return self.X[idx], self.y[idx]

    def unlabeled(self, split: str = "train") -> np.ndarray:
        idx = self.rows(split)
        return self.X[idx[self.y[idx] < 0]]

    def class_counts(self, split: str | None = None) -> np.ndarray:
        y = self.y if split is None else self.y[self.rows(split)]
        return np.bincount(y[y >= 0], minlength=self.n_classes)


def _balanced_labels(n: int, n_classes: int) -> np.ndarray:
    return np.arange(n) % n_classes


# generators ---------------------------------------------------------------


def gen_two_circles(n: int = 1000, noise: float = 0.1, seed: int = 0,
                    radii: tuple[float, float] = (1.0, 2.0)) -> Dataset:
    """Two concentric rings; class k lies at radius ``radii[k]`` plus radial noise."""
    if n < 2:
        raise ValueError("need at least two points")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    y = _balanced_labels(n, 2)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    r = np.asarray(radii, dtype=np.float64)[y] + noise * rng.standard_normal(n)
    X = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return Dataset(X, y, 2)


def gen_pinwheel(n: int = 1000, n_classes: int = 5, seed: int = 0, rate: float = 0.75,
                 radial_std: float = 0.3, tangential_std: float = 0.05) -> Dataset:
    """Spiral arms: stretched Gaussian blobs rotated by an angle growing with radius."""
    if n_classes < 2:
        raise ValueError("pinwheel needs at least 2 classes")
    if n < n_classes or radial_std < 0 or tangential_std < 0:
        raise ValueError("invalid pinwheel parameters")
    rng = np.random.default_rng(seed)
    y = _balanced_labels(n, n_classes)
    base = np.linspace(0.0, 2.0 * math.pi, n_classes, endpoint=False)
    feats = rng.standard_normal((n, 2)) * np.array([radial_std, tangential_std])
    feats[:, 0] += 1.0
    angles = base[y] + rate * np.exp(feats[:, 0])
    c, s = np.cos(angles), np.sin(angles)
    X = np.stack([c * feats[:, 0] - s * feats[:, 1], s * feats[:, 0] + c * feats[:, 1]], axis=1)
    return Dataset(X, y, n_classes)


def gen_eight_gaussians(n: int = 1000, seed: int = 0, radius: float = 2.0,
                        std: float = 0.2) -> Dataset:
    """Eight isotropic blobs with means at angles k*pi/4 on a circle."""
    if n < 8 or radius <= 0 or std < 0:
        raise ValueError("invalid eight-gaussians parameters")
    rng = np.random.default_rng(seed)
    y = _balanced_labels(n, 8)
    angles = y * (math.pi / 4.0)
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return Dataset(centers + std * rng.standard_normal((n, 2)), y, 8)


GENERATORS = {
    "two_circles": gen_two_circles,
    "pinwheel": gen_pinwheel,
    "eight_gaussians": gen_eight_gaussians,
}


# splits -------------------------------------------------------------------


def assign_splits(ds: Dataset, n_val: int = 0, n_test: int = 0, seed: int = 0) -> Dataset:
    """Tag random ``n_val`` / ``n_test`` labeled rows (stratified by label) as val / test."""
    n_labeled = int(np.sum(ds.y >= 0))
    if n_val + n_test > n_labeled or n_val + n_test >= len(ds):
        raise ValueError("val + test need more labeled rows than are available")
    rng = np.random.default_rng(seed)
    split = np.full(len(ds), "train", dtype=object)
    order = rng.permutation(len(ds))
    order = order[ds.y[order] >= 0]
    # interleave classes so every prefix of `order` is close to stratified
    keys = np.empty(len(ds))
    for k in np.unique(ds.y):
        members = order[ds.y[order] == k]
        keys[members] = (np.arange(len(members)) + 0.5) / len(members)
    order = order[np.argsort(keys[order], kind="stable")]
    split[order[:n_test]] = "test"
    split[order[n_test:n_test + n_val]] = "val"
    return replace(ds, split=split)


def make_ssl_split(ds: Dataset, n_labeled_per_class: int | None, seed: int = 0) -> Dataset:
    """Keep exactly ``n_labeled_per_class`` train labels per class; hide the rest.

    ``None`` keeps every label.  Only train rows are touched.
    """
    if n_labeled_per_class is None:
        return replace(ds, y=ds.y.copy())
    rng = np.random.default_rng(seed)
    y = ds.y.copy()
    train = ds.rows("train")
    for k in range(ds.n_classes):
        members = train[ds.y[train] == k]
        if len(members) < n_labeled_per_class:
            raise ValueError(
                f"class {k} has {len(members)} train rows, fewer than {n_labeled_per_class}"
            )
        keep = rng.choice(members, size=n_labeled_per_class, replace=False)
        hidden = np.setdiff1d(members, keep)
        y[hidden] = UNLABELED
    return replace(ds, y=y)


def subsample_unlabeled(ds: Dataset, n_unlabeled: int, seed: int = 0,
                        return_index: bool = False):
    """Drop train-unlabeled rows at random until at most ``n_unlabeled`` remain.

    With ``return_index`` also returns the kept row indices of the input.
    """
    train = ds.rows("train")
    unl = train[ds.y[train] < 0]
    keep = np.arange(len(ds))
    if len(unl) > n_unlabeled:
        rng = np.random.default_rng(seed)
        drop = rng.choice(unl, size=len(unl) - n_unlabeled, replace=False)
        keep = np.setdiff1d(keep, drop)
        ds = replace(ds, X=ds.X[keep], y=ds.y[keep], split=ds.split[keep])
    return (ds, keep) if return_index else ds


def subsample_balance(ds: Dataset, seed: int = 0) -> Dataset:
    """Downsample every class to the minority-class count (unlabeled rows dropped)."""
    counts = np.bincount(ds.y[ds.y >= 0], minlength=ds.n_classes)
    if ds.n_classes < 2:
        raise ValueError("balancing needs at least two classes")
    if np.any(counts == 0):
        raise ValueError(f"class {int(np.argmin(counts))} has no rows")
    target = counts.min()
    rng = np.random.default_rng(seed)
    keep = np.sort(np.concatenate([
        rng.choice(np.flatnonzero(ds.y == k), size=target, replace=False)
        for k in range(ds.n_classes)
    ]))
    return replace(ds, X=ds.X[keep], y=ds.y[keep], split=ds.split[keep])


# standardization ------------------------------------------------------------


def standardize(ds: Dataset) -> Dataset:
    """Zero-mean / unit-std features using statistics of the train rows only.

    Zero-variance columns keep std 1 so they are only centered.
    """
    train = ds.rows("train")
    if len(train) == 0:
        raise ValueError("cannot standardize without train rows")
    mean = ds.X[train].mean(axis=0)
    std = ds.X[train].std(axis=0)
    std[std == 0] = 1.0
    return replace(ds, X=(ds.X - mean) / std, mean=mean, std=std)


def apply_standardization(X, mean, std) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - mean) / std


# delimited files ------------------------------------------------------------


def _parse_label_map(raw_labels: list[str]) -> list[str]:
    names = sorted({lab for lab in raw_labels if lab != ""})
    try:
        names.sort(key=float)
    except ValueError:
        pass
    return names


def load_delimited(path, label_col: int | str = -1, delimiter: str = ",",
                   has_header: bool = True, label_names: list[str] | None = None) -> Dataset:
    """Read a delimited file with one label column (empty field = unlabeled).

    ``label_col`` is a column index (negative counts from the end) or a header
    name.  Labels map to 0..C-1 in sorted order unless ``label_names`` fixes
    the mapping (useful to keep train/test files consistent).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty file")
    first_line = 1
    header = None
    if has_header:
        header, rows = rows[0], rows[1:]
        first_line = 2
    width = len(header) if header is not None else len(rows[0]) if rows else 0
    if isinstance(label_col, str):
        if header is None or label_col not in header:
            raise ValueError(f"{path}: unknown label column {label_col!r}")
        col = header.index(label_col)
    else:
        col = label_col if label_col >= 0 else width + label_col
        if not 0 <= col < width:
            raise ValueError(f"{path}: label column {label_col} out of range for {width} columns")

    feats = np.empty((len(rows), width - 1))
    raw_labels: list[str] = []
    for i, row in enumerate(rows):
        lineno = i + first_line
        if len(row) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} fields, found {len(row)}")
        vals = row[:col] + row[col + 1:]
        try:
            feats[i] = [float(v) for v in vals]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric feature value") from None
        if not np.all(np.isfinite(feats[i])):
            raise ValueError(f"{path}:{lineno}: non-finite feature value")
        raw_labels.append(row[col].strip())

    names = _parse_label_map(raw_labels) if label_names is None else list(label_names)
    index = {name: k for k, name in enumerate(names)}
    y = np.empty(len(rows), dtype=np.int64)
    for i, lab in enumerate(raw_labels):
        if lab == "":
            y[i] = UNLABELED
        elif lab in index:
            y[i] = index[lab]
        else:
            raise ValueError(f"{path}:{i + first_line}: label {lab!r} not in label map")
    return Dataset(feats, y, max(len(names), 1), label_names=names)


def format_delimited(ds: Dataset, delimiter: str = ",", header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    if header:
        w.writerow([f"x{j + 1}" for j in range(ds.dim)] + ["label"])
    names = ds.label_names or [str(k) for k in range(ds.n_classes)]
    for row, lab in zip(ds.X, ds.y):
        w.writerow([repr(float(v)) for v in row] + ["" if lab < 0 else names[lab]])
    return buf.getvalue()


def write_delimited(ds: Dataset, path, delimiter: str = ",", header: bool = True) -> None:
    """Write features and label (last column) atomically."""
    text = format_delimited(ds, delimiter, header)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
