"""RealNVP-style flow built from fully connected affine coupling layers.

Each layer leaves the masked coordinates untouched and maps the rest as
``y = x * exp(s(x_masked)) + t(x_masked)``.  The scale net output is squashed
through ``gain * tanh(.)`` with a per-layer learnable ``gain`` (starts at 1).
The output layers of both the scale and shift nets start at zero, so a fresh
flow is the identity map with log-det 0.

Two evaluation paths exist: plain numpy (``forward``/``inverse``, used for
inference, sampling and inversion) and a recorded path (``forward_ctx``) used
for training.  Both compute the same expressions in the same order.
"""

from __future__ import annotations

import math

import numpy as np

from .diff_core import GradientContext, Node, NumericalError, ParamTensor

__all__ = ["CouplingLayer", "FlowModel", "alternating_masks"]

# names of per-layer parameter tensors, in checkpoint order
PARAM_NAMES = ("s_w1", "s_b1", "s_w2", "s_b2", "s_gain", "t_w1", "t_b1", "t_w2", "t_b2")


def alternating_masks(dim: int, n_layers: int) -> list[np.ndarray]:
    """Pass-through masks that swap between the first ceil(D/2) coords and the rest."""
    if dim < 2:
        raise ValueError("coupling flows need at least 2 dimensions")
    first = np.zeros(dim, dtype=bool)
    first[: math.ceil(dim / 2)] = True
    return [first.copy() if i % 2 == 0 else ~first for i in range(n_layers)]


def _as_batch(x, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"expected vectors of length {dim}, got array of shape {x.shape}")
    return x, single


class CouplingLayer:
    def __init__(self, mask, hidden: int, rng: np.random.Generator | None = None):
        mask = np.asarray(mask, dtype=bool)
        if mask.all() or not mask.any():
            raise ValueError("mask needs at least one pass-through and one transformed coordinate")
        self.mask = mask
        self.hidden = int(hidden)
        self.pass_idx = np.flatnonzero(mask)
        self.trans_idx = np.flatnonzero(~mask)
        p, q, h = len(self.pass_idx), len(self.trans_idx), self.hidden
        rng = rng if rng is not None else np.random.default_rng(0)

        def uniform(fan_in, shape):
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        self.s_w1 = ParamTensor(uniform(p, (p, h)), "s_w1")
        self.s_b1 = ParamTensor(uniform(p, (h,)), "s_b1")
        self.s_w2 = ParamTensor(np.zeros((h, q)), "s_w2")
        self.s_b2 = ParamTensor(np.zeros(q), "s_b2")
        self.s_gain = ParamTensor(np.ones(1), "s_gain")
        self.t_w1 = ParamTensor(uniform(p, (p, h)), "t_w1")
        self.t_b1 = ParamTensor(uniform(p, (h,)), "t_b1")
        self.t_w2 = ParamTensor(np.zeros((h, q)), "t_w2")
        self.t_b2 = ParamTensor(np.zeros(q), "t_b2")

    @property
    def dim(self) -> int:
        return self.mask.size

    def params(self) -> list[ParamTensor]:
        return [getattr(self, name) for name in PARAM_NAMES]

    def scale_shift(self, x_pass: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = np.maximum(x_pass @ self.s_w1.values + self.s_b1.values, 0.0)
        s = np.tanh(h @ self.s_w2.values + self.s_b2.values) * self.s_gain.values
        h = np.maximum(x_pass @ self.t_w1.values + self.t_b1.values, 0.0)
        t = h @ self.t_w2.values + self.t_b2.values
        return s, t

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s, t = self.scale_shift(x[:, self.pass_idx])
        y = np.empty_like(x)
        y[:, self.pass_idx] = x[:, self.pass_idx]
        y[:, self.trans_idx] = x[:, self.trans_idx] * np.exp(s) + t
        return y, s.sum(axis=1)

    def inverse(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s, t = self.scale_shift(y[:, self.pass_idx])
        x = np.empty_like(y)
        x[:, self.pass_idx] = y[:, self.pass_idx]
        x[:, self.trans_idx] = (y[:, self.trans_idx] - t) * np.exp(-s)
        return x, -s.sum(axis=1)

    def forward_ctx(self, ctx: GradientContext, x: Node) -> tuple[Node, Node]:
        x_pass = ctx.take_cols(x, self.pass_idx)
        x_trans = ctx.take_cols(x, self.trans_idx)
        h = ctx.relu(ctx.affine(x_pass, self.s_w1, self.s_b1))
        s = ctx.scale(ctx.tanh(ctx.affine(h, self.s_w2, self.s_b2)), self.s_gain)
        h = ctx.relu(ctx.affine(x_pass, self.t_w1, self.t_b1))
        t = ctx.affine(h, self.t_w2, self.t_b2)
        y_trans = ctx.add(ctx.mul(x_trans, ctx.exp(s)), t)
        y = ctx.merge_cols(x_pass, y_trans, self.pass_idx, self.trans_idx, self.dim)
        return y, ctx.sum(s, axis=1)


class FlowModel:
    """Composition f = f_L o ... o f_1 of coupling layers with alternating masks.

    Layer boundaries are indexed 0..L: boundary 0 is the input, boundary L is
    the latent code.
    """

    def __init__(self, dim: int, n_layers: int = 5, hidden: int = 512, seed: int = 0,
                 masks: list[np.ndarray] | None = None):
        if n_layers < 1:
            raise ValueError("flow needs at least one coupling layer")
        if hidden < 1:
            raise ValueError("hidden width must be positive")
        self.dim = int(dim)
        self.hidden = int(hidden)
        masks = alternating_masks(self.dim, n_layers) if masks is None else masks
        rng = np.random.default_rng(seed)
        self.layers = [CouplingLayer(m, hidden, rng) for m in masks]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def params(self) -> list[ParamTensor]:
        return [p for layer in self.layers for p in layer.params()]

    def set_identity(self) -> None:
        """Zero every scale/shift parameter (gains reset to 1), making f the identity."""
        for p in self.params():
            p.values[...] = 1.0 if p.name == "s_gain" else 0.0

    def _check_layer(self, layer: int) -> None:
        if not 0 <= layer <= self.n_layers:
            raise ValueError(f"layer boundary must be in [0, {self.n_layers}], got {layer}")

    def forward(self, x, upto: int | None = None):
        """Map data to latent space.

        Returns ``(z, logdet, intermediates)`` where ``intermediates[l]`` is the
        activation at boundary ``l`` (``intermediates[0]`` is ``x``).  A single
        vector input gives a vector ``z`` and a scalar ``logdet``.
        """
        x, single = _as_batch(x, self.dim)
        upto = self.n_layers if upto is None else upto
        self._check_layer(upto)
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite input to flow")
        logdet = np.zeros(x.shape[0])
        acts = [x]
        h = x
        with np.errstate(over="ignore", invalid="ignore"):
            for i, layer in enumerate(self.layers[:upto]):
                h, ld = layer.forward(h)
                if not np.all(np.isfinite(h)):
                    raise NumericalError(f"non-finite activation after coupling layer {i}")
                logdet = logdet + ld
                acts.append(h)
        if single:
            return h[0], float(logdet[0]), [a[0] for a in acts]
        return h, logdet, acts

    def inverse(self, z, start: int | None = None, with_logdet: bool = False):
        """Invert layers ``start-1 .. 0`` (default: the whole flow)."""
        z, single = _as_batch(z, self.dim)
        start = self.n_layers if start is None else start
        self._check_layer(start)
        logdet = np.zeros(z.shape[0])
        h = z
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(start - 1, -1, -1):
                h, ld = self.layers[i].inverse(h)
                if not np.all(np.isfinite(h)):
                    raise NumericalError(f"overflow while inverting coupling layer {i}")
                logdet = logdet + ld
        if single:
            h, logdet = h[0], float(logdet[0])
        return (h, logdet) if with_logdet else h

    def forward_ctx(self, ctx: GradientContext, x) -> tuple[Node, Node]:
        """Recorded forward pass over a batch; returns (z, per-row logdet) nodes."""
        h = ctx.const(np.asarray(x, dtype=np.float64)) if not isinstance(x, Node) else x
        logdet = None
        for layer in self.layers:
            h, ld = layer.forward_ctx(ctx, h)
            logdet = ld if logdet is None else ctx.add(logdet, ld)
        return h, logdet

    def perturb_intermediate(self, x, layer: int, coord: int, alpha: float,
                             sigma: float = 1.0) -> np.ndarray:
        """Invert ``f_{:layer}(x) + alpha * sigma * e_coord`` back to data space."""
        self._check_layer(layer)
        if not 0 <= coord < self.dim:
            raise ValueError(f"coordinate must be in [0, {self.dim}), got {coord}")
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        a, _, _ = self.forward(x, upto=layer)
        a = np.array(a, dtype=np.float64)
        a[..., coord] += alpha * sigma
        return self.inverse(a, start=layer)

    def activation_stats(self, X, layer: int) -> np.ndarray:
        """Population std of every coordinate of ``f_{:layer}(X)``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("activation_stats needs a non-empty (n, D) dataset")
        a, _, _ = self.forward(X, upto=layer)
        # shifting by one row first keeps constant columns at exactly 0
        return (a - a[0]).std(axis=0)
