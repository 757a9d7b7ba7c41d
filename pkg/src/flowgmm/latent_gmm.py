"""Class-conditional Gaussian mixture over the latent space.

Component ``k`` is ``N(mu_k, sigma^2 I)`` with a single shared variance.
The parameters are held fixed while the flow trains; ``fit_sigma`` is the
only post-hoc change (variance rescaling for calibration).
"""

from __future__ import annotations

import math

import numpy as np

from .diff_core import GradientContext, Node

__all__ = ["GaussianMixture", "golden_section_minimize"]

_LOG_2PI = math.log(2.0 * math.pi)
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def golden_section_minimize(fn, lo: float, hi: float, tol: float = 1e-6) -> float:
    """Minimiser of a unimodal ``fn`` on ``[lo, hi]`` to within ``tol``."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


class GaussianMixture:
    def __init__(self, means, log_var: float = 0.0, log_priors=None):
        means = np.array(means, dtype=np.float64)
        if means.ndim != 2:
            raise ValueError("means must be a (C, D) matrix")
        self.means = means
        self.log_var = float(log_var)
        if log_priors is None:
            log_priors = np.full(self.n_classes, -math.log(self.n_classes))
        log_priors = np.array(log_priors, dtype=np.float64)
        if log_priors.shape != (self.n_classes,):
            raise ValueError("need one log-prior per class")
        if abs(np.exp(log_priors).sum() - 1.0) > 1e-9:
            raise ValueError("class priors must sum to 1")
        self.log_priors = log_priors

    # construction -----------------------------------------------------------

    @classmethod
    def init_random(cls, dim: int, n_classes: int, seed: int) -> "GaussianMixture":
        """Means drawn i.i.d. from N(0, I); unit variance; uniform priors."""
        if dim < 1 or n_classes < 2:
            raise ValueError("need dim >= 1 and at least 2 classes")
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((n_classes, dim)))

    @classmethod
    def init_circle(cls, dim: int, n_classes: int, radius: float = 4.0) -> "GaussianMixture":
        """Means evenly spaced on a circle in the first two latent coordinates.

        Used for low-dimensional data, where i.i.d. standard-normal means tend
        to land on top of each other.
        """
        if dim < 2 or n_classes < 2:
            raise ValueError("circle placement needs dim >= 2 and at least 2 classes")
        angles = 2.0 * math.pi * np.arange(n_classes) / n_classes
        means = np.zeros((n_classes, dim))
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
        return cls(means)

    @classmethod
    def init_data_dependent(cls, latents, labels, r: float = 1.0,
                            n_classes: int | None = None) -> "GaussianMixture":
        """Means at ``r`` times the per-class average of labeled latents."""
        latents = np.asarray(latents, dtype=np.float64)
        labels = np.asarray(labels)
        n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
        means = np.empty((n_classes, latents.shape[1]))
        for k in range(n_classes):
            rows = latents[labels == k]
            if len(rows) == 0:
                raise ValueError(f"class {k} has no labeled latents")
            means[k] = rows.mean(axis=0)
        return cls(r * means)

    def set_priors(self, priors) -> None:
        priors = np.asarray(priors, dtype=np.float64)
        if priors.shape != (self.n_classes,) or np.any(priors <= 0):
            raise ValueError("priors must be positive, one per class")
        self.log_priors = np.log(priors / priors.sum())

    def copy(self) -> "GaussianMixture":
        return GaussianMixture(self.means.copy(), self.log_var, self.log_priors.copy())

    # properties -------------------------------------------------------------

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def variance(self) -> float:
        return math.exp(self.log_var)

    def _norm_const(self) -> float:
        return -0.5 * self.dim * (_LOG_2PI + self.log_var)

    # densities --------------------------------------------------------------

    def sq_distances(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        diff = z[:, None, :] - self.means[None, :, :]
        return (diff * diff).sum(axis=2)

    def class_logpdf(self, z) -> np.ndarray:
        """(n, C) matrix of log N(z | mu_k, sigma^2 I)."""
        return -0.5 * self.sq_distances(z) / self.variance + self._norm_const()

    def class_cond_logpdf(self, z, k: int):
        if not 0 <= k < self.n_classes:
            raise ValueError(f"class index {k} out of range")
        out = self.class_logpdf(z)[:, k]
        return float(out[0]) if np.ndim(z) == 1 else out

    def log_joint(self, z) -> np.ndarray:
        """(n, C) matrix of log p(z, y=k) = log p(y=k) + log N(z | mu_k, sigma^2 I)."""
        return self.class_logpdf(z) + self.log_priors

    def marginal_logpdf(self, z):
        out = _logsumexp_rows(self.log_joint(z))
        return float(out[0]) if np.ndim(z) == 1 else out

    def predictive(self, z) -> np.ndarray:
        """Posterior class probabilities p(y|z); the flow's log-det cancels."""
        lj = self.log_joint(z)
        p = np.exp(lj - _logsumexp_rows(lj)[:, None])
        p /= p.sum(axis=1, keepdims=True)
        return p[0] if np.ndim(z) == 1 else p

    def em_posterior(self, z, labels=None) -> np.ndarray:
        """Exact E-step responsibilities; rows with a label >= 0 become one-hot."""
        q = self.predictive(z)
        if labels is not None:
            labels = np.asarray(labels)
            q2 = np.atleast_2d(q)
            known = np.atleast_1d(labels) >= 0
            q2[known] = np.eye(self.n_classes)[np.atleast_1d(labels)[known]]
        return q

    def predict(self, z) -> np.ndarray:
        # np.argmax keeps the lowest index on ties
        return np.argmax(self.log_joint(z), axis=1)

    # recorded versions for training -------------------------------------------

    def log_joint_ctx(self, ctx: GradientContext, z: Node) -> Node:
        sq = ctx.sqdist(z, self.means)
        return ctx.linear(sq, -0.5 / self.variance, self._norm_const() + self.log_priors)

    # sampling / calibration ---------------------------------------------------

    def sample_class(self, k: int, temperature: float = 1.0, rng=None, n: int | None = None):
        """Draw from N(mu_k, T * sigma^2 I); T = 0 returns mu_k exactly."""
        if not 0 <= k < self.n_classes:
            raise ValueError(f"class index {k} out of range")
        if temperature < 0:
            raise ValueError("temperature must be non-negative")
        rng = np.random.default_rng(rng)
        shape = (self.dim,) if n is None else (n, self.dim)
        if temperature == 0:
            return np.broadcast_to(self.means[k], shape).copy()
        std = math.sqrt(temperature * self.variance)
        return self.means[k] + std * rng.standard_normal(shape)

    def predictive_nll(self, z, labels) -> float:
        labels = np.asarray(labels)
        lj = self.log_joint(z)
        return float(np.mean(_logsumexp_rows(lj) - lj[np.arange(len(labels)), labels]))

    def fit_sigma(self, latents, labels, lo: float = -10.0, hi: float = 10.0,
                  tol: float = 1e-6) -> float:
        """Refit the shared variance by minimising predictive NLL on held-out data.

        Searches log sigma^2 by golden section; keeps sigma^2 = 1 if the search
        lands on something worse.  Returns the fitted sigma^2.
        """
        latents = np.asarray(latents, dtype=np.float64)
        labels = np.asarray(labels)
        if len(labels) == 0:
            raise ValueError("fit_sigma needs a non-empty labeled validation set")
        probe = self.copy()

        def nll(log_var):
            probe.log_var = log_var
            return probe.predictive_nll(latents, labels)

        best = golden_section_minimize(nll, lo, hi, tol)
        if nll(0.0) < nll(best):
            best = 0.0
        self.log_var = float(best)
        return self.variance
