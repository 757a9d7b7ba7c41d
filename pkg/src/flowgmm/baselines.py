"""Comparison methods: kNN, softmax regression, dropout MLP, Pi-model, label spreading."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diff_core import Adam, GradientContext, Node, ParamTensor
from .training import pi_consistency, ramp

__all__ = [
    "MLPClassifier",
    "MLPConfig",
    "SpreadingError",
    "affinity_knn",
    "affinity_rbf",
    "grid_search_spreading",
    "knn_predict",
    "label_spreading_dense",
    "label_spreading_knn",
    "logistic_train",
    "mlp_train",
    "normalized_affinity",
    "pi_model_train",
    "sin2_distance",
    "sin2_matrix",
    "spread_scores",
]


# distances ------------------------------------------------------------------

def _unit_rows(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError("sin^2 distance is undefined for zero vectors")
    return X / norms[:, None]


def sin2_distance(a, b) -> float:
    """1 - cos(a, b); lies in [0, 2]."""
    ua, ub = _unit_rows(a)[0], _unit_rows(b)[0]
    return float(1.0 - ua @ ub)


def sin2_matrix(A, B) -> np.ndarray:
    return 1.0 - _unit_rows(A) @ _unit_rows(B).T


def _sq_l2_matrix(A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def _distances(A, B, metric: str) -> np.ndarray:
    if metric == "l2":
        return np.sqrt(_sq_l2_matrix(A, B))
    if metric == "sin2":
        return sin2_matrix(A, B)
    raise ValueError(f"unknown metric {metric!r}; use 'l2' or 'sin2'")


# kNN ------------------------------------------------------------------------

def knn_predict(X_train, y_train, queries, k: int, metric: str = "l2",
                n_classes: int | None = None, chunk: int = 1024, return_votes: bool = False):
    """Majority vote over the k nearest labeled rows.

    Ties go to the class whose tied neighbours have the smaller mean distance,
    then to the lowest class index.  ``return_votes`` also returns the (n, C)
    vote fractions.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train)
    if len(X_train) == 0:
        raise ValueError("kNN needs at least one labeled row")
    if k < 1 or k > len(X_train):
        raise ValueError(f"k must be in [1, {len(X_train)}], got {k}")
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    C = int(y_train.max()) + 1 if n_classes is None else n_classes
    out = np.empty(len(queries), dtype=np.int64)
    fractions = np.empty((len(queries), C))
    for start in range(0, len(queries), chunk):
        d = _distances(queries[start:start + chunk], X_train, metric)
        if k < len(X_train):
            near = np.argpartition(d, k - 1, axis=1)[:, :k]
        else:
            near = np.broadcast_to(np.arange(len(X_train)), d.shape)
        rows = np.arange(len(d))[:, None]
        nd, ny = d[rows, near], y_train[near]
        onehot = ny[:, :, None] == np.arange(C)[None, None, :]
        votes = onehot.sum(axis=1)
        dist_sum = (onehot * nd[:, :, None]).sum(axis=1)
        mean_d = np.where(votes > 0, dist_sum / np.maximum(votes, 1), np.inf)
        # lexicographic: most votes, then smallest mean distance, then lowest index
        best = votes == votes.max(axis=1, keepdims=True)
        mean_d = np.where(best, mean_d, np.inf)
        out[start:start + len(d)] = np.argmin(mean_d, axis=1)
        fractions[start:start + len(d)] = votes / k
    return (out, fractions) if return_votes else out


# softmax networks -----------------------------------------------------------

@dataclass
class MLPConfig:
    hidden: tuple[int, ...] = (512, 512, 512)
    dropout: float = 0.5
    lr: float = 3e-4
    epochs: int = 100
    batch_size: int = 32
    unlabeled_batch: int = 64
    consistency_weight: float = 30.0
    ramp_epochs: int = 0
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.lr <= 0 or self.epochs < 0 or self.batch_size < 1 or self.unlabeled_batch < 1:
            raise ValueError("lr must be positive, epochs >= 0, batch sizes >= 1")
        if self.consistency_weight < 0 or self.ramp_epochs < 0:
            raise ValueError("consistency weight and ramp length must be non-negative")


class MLPClassifier:
    """ReLU MLP with inverted dropout on hidden activations; no hidden layers = softmax regression."""

    def __init__(self, dim: int, n_classes: int, hidden=(), dropout: float = 0.0, seed: int = 0):
        self.dim, self.n_classes = int(dim), int(n_classes)
        self.dropout = float(dropout)
        rng = np.random.default_rng(seed)
        sizes = [self.dim, *hidden, self.n_classes]
        self.weights, self.biases = [], []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(a)
            self.weights.append(ParamTensor(rng.uniform(-bound, bound, (a, b)), f"w{i}"))
            self.biases.append(ParamTensor(rng.uniform(-bound, bound, b), f"b{i}"))

    def params(self) -> list[ParamTensor]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def logits(self, X) -> np.ndarray:
        h = np.asarray(X, dtype=np.float64)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.values + b.values
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
        return h

    def predict_proba(self, X) -> np.ndarray:
        a = self.logits(X)
        a = a - a.max(axis=1, keepdims=True)
        p = np.exp(a)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def logits_ctx(self, ctx: GradientContext, X, rng: np.random.Generator | None = None) -> Node:
        """Recorded forward pass; dropout masks are drawn from ``rng`` when given."""
        h = ctx.const(np.asarray(X, dtype=np.float64))
        keep = 1.0 - self.dropout
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ctx.affine(h, w, b)
            if i < len(self.weights) - 1:
                h = ctx.relu(h)
                if rng is not None and self.dropout > 0:
                    mask = (rng.random(h.value.shape) < keep) / keep
                    h = ctx.mul(h, mask)
        return h


def _cross_entropy(ctx: GradientContext, logits: Node, y) -> Node:
    return ctx.linear(ctx.mean(ctx.gather(ctx.log_softmax(logits), np.asarray(y))), -1.0)


def _check_classes(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("training needs labeled rows")
    missing = sorted(set(range(n_classes)) - set(y.tolist()))
    if missing:
        raise ValueError(f"no labeled examples for classes {missing}")
    return y


def _fit(model: MLPClassifier, X, y, cfg: MLPConfig, X_unl=None) -> MLPClassifier:
    X = np.asarray(X, dtype=np.float64)
    y = _check_classes(y, model.n_classes)
    use_unl = X_unl is not None and len(X_unl) > 0 and cfg.consistency_weight > 0
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    order_rng, drop_rng = (np.random.default_rng(s) for s in seeds)
    opt = Adam(model.params(), lr=cfg.lr)
    lab_iter = _batches(len(X), cfg.batch_size, order_rng)
    for epoch in range(cfg.epochs):
        weight = cfg.consistency_weight * ramp(epoch, cfg.ramp_epochs) if use_unl else 0.0
        if use_unl:
            steps = [(next(lab_iter), idx) for idx in _one_pass(len(X_unl), cfg.unlabeled_batch, order_rng)]
        else:
            steps = [(idx, None) for idx in _one_pass(len(X), cfg.batch_size, order_rng)]
        for lab_idx, unl_idx in steps:
            ctx = GradientContext()
            loss = _cross_entropy(ctx, model.logits_ctx(ctx, X[lab_idx], drop_rng), y[lab_idx])
            if unl_idx is not None and weight > 0:
                xu = X_unl[unl_idx]
                pa = ctx.exp(ctx.log_softmax(model.logits_ctx(ctx, xu, drop_rng)))
                pb = ctx.exp(ctx.log_softmax(model.logits_ctx(ctx, xu, drop_rng)))
                loss = ctx.add(loss, ctx.linear(pi_consistency(ctx, pa, pb), weight))
            ctx.backward(loss, model.params())
            opt.step()
    return model


def _one_pass(n: int, size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, size):
        yield perm[start:start + size]


def _batches(n: int, size: int, rng: np.random.Generator):
    while True:
        yield from _one_pass(n, min(size, n), rng)


def logistic_train(X, y, n_classes: int, lr: float = 1e-2, epochs: int = 200,
                   batch_size: int = 64, seed: int = 0) -> MLPClassifier:
    """Multinomial softmax regression fitted with Adam on labeled rows."""
    X = np.asarray(X, dtype=np.float64)
    model = MLPClassifier(X.shape[1], n_classes, hidden=(), dropout=0.0, seed=seed)
    cfg = MLPConfig(hidden=(), dropout=0.0, lr=lr, epochs=epochs, batch_size=batch_size,
                    consistency_weight=0.0, seed=seed)
    return _fit(model, X, y, cfg)


def mlp_train(X, y, n_classes: int, cfg: MLPConfig | None = None) -> MLPClassifier:
    cfg = cfg or MLPConfig()
    X = np.asarray(X, dtype=np.float64)
    model = MLPClassifier(X.shape[1], n_classes, cfg.hidden, cfg.dropout, cfg.seed)
    return _fit(model, X, y, cfg)


def pi_model_train(X, y, X_unl, n_classes: int, cfg: MLPConfig | None = None) -> MLPClassifier:
    """Cross-entropy on labeled rows plus a squared-difference penalty between
    predictions under two independent dropout masks on unlabeled rows."""
    cfg = cfg or MLPConfig()
    X = np.asarray(X, dtype=np.float64)
    X_unl = None if X_unl is None else np.asarray(X_unl, dtype=np.float64)
    model = MLPClassifier(X.shape[1], n_classes, cfg.hidden, cfg.dropout, cfg.seed)
    return _fit(model, X, y, cfg, X_unl)


# label spreading --------------------------------------------------------------

class SpreadingError(ValueError):
    pass


def affinity_rbf(X, gamma: float) -> np.ndarray:
    """Dense W_ij = exp(-gamma * sin^2(x_i, x_j)) with a zero diagonal."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    W = np.exp(-gamma * sin2_matrix(X, X))
    np.fill_diagonal(W, 0.0)
    return 0.5 * (W + W.T)


def affinity_knn(X, k: int, metric: str = "sin2", chunk: int = 1024) -> sp.csr_matrix:
    """Binary symmetrised kNN graph: W_ij = 1 if i is among j's neighbours or vice versa."""
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    rows, cols = [], []
    for start in range(0, n, chunk):
        d = _distances(X[start:start + chunk], X, metric)
        idx = np.arange(start, start + len(d))
        d[np.arange(len(d)), idx] = np.inf
        near = np.argpartition(d, k - 1, axis=1)[:, :k]
        rows.append(np.repeat(idx, k))
        cols.append(near.ravel())
    r, c = np.concatenate(rows), np.concatenate(cols)
    W = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(n, n)).tocsr()
    W = W.maximum(W.T)
    W.setdiag(0.0)
    W.eliminate_zeros()
    return W.tocsr()


def normalized_affinity(W):
    """S = D^{-1/2} W D^{-1/2}."""
    deg = np.asarray(W.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        raise SpreadingError(f"{int(np.sum(deg <= 0))} isolated node(s) in the affinity graph; "
                             "increase k or lower gamma")
    inv = 1.0 / np.sqrt(deg)
    if sp.issparse(W):
        D = sp.diags(inv)
        return (D @ W @ D).tocsr()
    return W * inv[:, None] * inv[None, :]


def _one_hot(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    Y = np.zeros((len(y), n_classes))
    known = y >= 0
    Y[known, y[known]] = 1.0
    return Y


def spread_scores(W, Y, alpha: float) -> np.ndarray:
    """Y* = (I - alpha S)^{-1} Y by direct solve."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must be in [0, 1)")
    S = normalized_affinity(W)
    n = S.shape[0]
    hint = f"(I - alpha*S) is singular or ill-conditioned at alpha={alpha}; try a smaller alpha"
    # S has spectrum in [-1, 1] containing 1, so cond(I - alpha S) <= (1 + alpha) / (1 - alpha)
    if (1.0 + alpha) / (1.0 - alpha) > 1e12:
        raise SpreadingError(hint)
    if sp.issparse(S):
        A = (sp.identity(n, format="csc") - alpha * S).tocsc()
        try:
            F = spla.splu(A).solve(Y)
        except RuntimeError:
            raise SpreadingError(hint) from None
        resid = A @ F - Y
    else:
        A = np.eye(n) - alpha * S
        try:
            F = np.linalg.solve(A, Y)
        except np.linalg.LinAlgError:
            raise SpreadingError(hint) from None
        resid = A @ F - Y
    if not np.all(np.isfinite(F)) or np.abs(resid).max() > 1e-6 * max(1.0, np.abs(Y).max()):
        raise SpreadingError(hint)
    return F


def _spread(make_W, X, y, n_classes: int, alpha: float, X_test):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if not np.any(y >= 0):
        raise ValueError("label spreading needs labeled rows")
    F = spread_scores(make_W(X), _one_hot(y, n_classes), alpha)
    pred = np.argmax(F, axis=1)
    if X_test is None:
        return pred, F, None
    # inductive pass: training rows keep their labels (given or spread), test rows are new nodes
    X_test = np.asarray(X_test, dtype=np.float64)
    frozen = np.where(y >= 0, y, np.where(F.max(axis=1) > 0, pred, -1))
    Y2 = _one_hot(np.concatenate([frozen, np.full(len(X_test), -1)]), n_classes)
    F2 = spread_scores(make_W(np.concatenate([X, X_test])), Y2, alpha)
    return pred, F, F2[len(X):]


def label_spreading_dense(X, y, n_classes: int, gamma: float, alpha: float, X_test=None):
    """Returns ``(pred, scores, test_scores)``; ``test_scores`` is None without ``X_test``.

    ``pred``/``scores`` cover the training rows; test rows are scored by a
    second solve in which they are appended as unlabeled nodes.
    """
    return _spread(lambda A: affinity_rbf(A, gamma), X, y, n_classes, alpha, X_test)


def label_spreading_knn(X, y, n_classes: int, k: int, alpha: float, X_test=None,
                        metric: str = "sin2"):
    return _spread(lambda A: affinity_knn(A, k, metric), X, y, n_classes, alpha, X_test)


def grid_search_spreading(X, y, X_val, y_val, n_classes: int, alphas, gammas=(), ks=(),
                          kind: str = "rbf"):
    """Try every (alpha, gamma) or (alpha, k) pair, scoring accuracy on the validation rows.

    Returns ``(best_params, rows)`` with one ``(alpha, gamma_or_k, accuracy)`` row per pair;
    pairs that fail to solve score NaN.
    """
    second = gammas if kind == "rbf" else ks
    if kind not in ("rbf", "knn") or not len(second) or not len(alphas):
        raise ValueError("grid search needs kind rbf (with gammas) or knn (with ks) and alphas")
    rows, best = [], None
    for alpha, other in itertools.product(alphas, second):
        try:
            if kind == "rbf":
                _, _, fv = label_spreading_dense(X, y, n_classes, other, alpha, X_val)
            else:
                _, _, fv = label_spreading_knn(X, y, n_classes, int(other), alpha, X_val)
            acc = float(np.mean(np.argmax(fv, axis=1) == np.asarray(y_val)))
        except SpreadingError:
            acc = math.nan
        rows.append((alpha, other, acc))
        if not math.isnan(acc) and (best is None or acc > best[2]):
            best = (alpha, other, acc)
    if best is None:
        raise SpreadingError("no grid point produced a solvable system")
    key = "gamma" if kind == "rbf" else "k"
    return {"alpha": best[0], key: best[1]}, rows
