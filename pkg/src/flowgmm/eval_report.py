"""Evaluation: accuracy/NLL/ECE, variance calibration, latent geometry probes."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .flow import FlowModel
from .latent_gmm import GaussianMixture

__all__ = [
    "BoundaryDistanceRecord",
    "MetricsReport",
    "boundary_distance",
    "calibrate",
    "decision_grid",
    "ece",
    "evaluate",
    "evaluate_probs",
    "interpolate",
    "ood_scores",
    "write_csv",
]


@dataclass
class MetricsReport:
    accuracy: float
    nll: float
    ece: float
    per_class_accuracy: list[float] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)
    n: int = 0
    mean_confidence: float = math.nan

    def to_kv(self, prefix: str = "") -> str:
        lines = []
        for key, value in asdict(self).items():
            if isinstance(value, list):
                value = ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{prefix}{key} = {value}")
        return "\n".join(lines) + "\n"


def ece(probs, labels, n_bins: int = 15) -> float:
    """Expected calibration error over equal-width bins of max-probability."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or len(probs) == 0:
        raise ValueError("ece needs a non-empty (n, C) probability matrix")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    # bins are (lo, hi]; confidence 0 would only occur for degenerate rows
    bins = np.clip(np.ceil(conf * n_bins).astype(int) - 1, 0, n_bins - 1)
    total = 0.0
    for b in range(n_bins):
        sel = bins == b
        if sel.any():
            total += sel.mean() * abs(correct[sel].mean() - conf[sel].mean())
    return float(total)


def evaluate_probs(probs, labels, n_classes: int | None = None, n_bins: int = 15) -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n_classes = probs.shape[1] if n_classes is None else n_classes
    pred = probs.argmax(axis=1)
    p_true = np.clip(probs[np.arange(len(labels)), labels], 1e-300, None)
    per_class, counts = [], []
    for k in range(n_classes):
        sel = labels == k
        counts.append(int(sel.sum()))
        per_class.append(float(np.mean(pred[sel] == k)) if sel.any() else math.nan)
    return MetricsReport(
        accuracy=float(np.mean(pred == labels)),
        nll=float(-np.mean(np.log(p_true))),
        ece=ece(probs, labels, n_bins),
        per_class_accuracy=per_class,
        counts=counts,
        n=len(labels),
        mean_confidence=float(probs.max(axis=1).mean()),
    )


def evaluate(flow: FlowModel, gmm: GaussianMixture, X, y, n_bins: int = 15) -> MetricsReport:
    z, _, _ = flow.forward(np.asarray(X, dtype=np.float64))
    return evaluate_probs(gmm.predictive(z), y, gmm.n_classes, n_bins)


def calibrate(flow: FlowModel, gmm: GaussianMixture, X_val, y_val,
              n_bins: int = 15) -> tuple[float, MetricsReport, MetricsReport]:
    """Fit the shared latent variance on validation data.

    Returns ``(sigma2, before, after)``; ``gmm`` is updated in place.
    """
    before = evaluate(flow, gmm, X_val, y_val, n_bins)
    z, _, _ = flow.forward(np.asarray(X_val, dtype=np.float64))
    sigma2 = gmm.fit_sigma(z, y_val)
    after = evaluate(flow, gmm, X_val, y_val, n_bins)
    return sigma2, before, after


@dataclass
class BoundaryDistanceRecord:
    distance: float
    nearest: int
    second: int


def boundary_distances_latent(z, means) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distance of each latent to the bisector plane of its two closest means."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    means = np.asarray(means, dtype=np.float64)
    if len(means) < 2:
        raise ValueError("need at least two means")
    sq = ((z[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(sq, axis=1, kind="stable")[:, :2]
    rows = np.arange(len(z))
    a, b = order[:, 0], order[:, 1]
    gap = np.linalg.norm(means[a] - means[b], axis=1)
    d = np.abs(sq[rows, a] - sq[rows, b]) / (2.0 * gap)
    return d, a, b


def boundary_distance(flow: FlowModel, gmm: GaussianMixture, X) -> list[BoundaryDistanceRecord]:
    z, _, _ = flow.forward(np.asarray(X, dtype=np.float64))
    d, a, b = boundary_distances_latent(z, gmm.means)
    return [BoundaryDistanceRecord(float(di), int(ai), int(bi)) for di, ai, bi in zip(d, a, b)]


def interpolate(flow: FlowModel, gmm: GaussianMixture, x1, x2, n_steps: int = 10):
    """Straight line between f(x1) and f(x2) in latent space, mapped back.

    Returns ``(t, points, log_px, log_pz)``.
    """
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    z1, _, _ = flow.forward(np.asarray(x1, dtype=np.float64))
    z2, _, _ = flow.forward(np.asarray(x2, dtype=np.float64))
    t = np.linspace(0.0, 1.0, n_steps)
    zs = (1.0 - t)[:, None] * z1[None, :] + t[:, None] * z2[None, :]
    points = flow.inverse(zs)
    log_pz = gmm.marginal_logpdf(zs)
    # log p_X(x) = log p_Z(z) - log|det d f^{-1}/dz|
    _, inv_logdet = flow.inverse(zs, with_logdet=True)
    return t, points, log_pz - inv_logdet, log_pz


def ood_scores(flow: FlowModel, gmm: GaussianMixture, X) -> np.ndarray:
    """Total data log-likelihood log p_Z(f(x)) + log|det df/dx| per row."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != flow.dim:
        raise ValueError(f"expected rows of dimension {flow.dim}, got shape {X.shape}")
    z, logdet, _ = flow.forward(X)
    return gmm.marginal_logpdf(z) + logdet


def decision_grid(flow: FlowModel, gmm: GaussianMixture, bounds, resolution: int = 100):
    """Predictive probabilities on a regular grid over a 2-D input box.

    ``bounds`` is ``(x1_min, x1_max, x2_min, x2_max)``.  Returns an array with
    rows ``(x1, x2, p_0, ..., p_{C-1})``; ``resolution**2`` rows in total.
    """
    if flow.dim != 2:
        raise ValueError(f"decision grids need 2-D data, model has D={flow.dim}")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    lo1, hi1, lo2, hi2 = map(float, bounds)
    g1 = np.linspace(lo1, hi1, resolution)
    g2 = np.linspace(lo2, hi2, resolution)
    a, b = np.meshgrid(g1, g2, indexing="ij")
    pts = np.stack([a.ravel(), b.ravel()], axis=1)
    z, _, _ = flow.forward(pts)
    return np.concatenate([pts, gmm.predictive(z)], axis=1)


def format_csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header: list[str], rows) -> None:
    """Write a CSV atomically (temp file + rename)."""
    text = format_csv(header, rows)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
