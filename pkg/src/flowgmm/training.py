"""Losses and training loops for the flow + latent mixture classifier.

All batch losses are means over rows, so the labeled weight keeps the same
meaning whatever the batch sizes are.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .diff_core import Adam, GradientContext, Node, NumericalError
from .flow import FlowModel
from .latent_gmm import GaussianMixture

__all__ = [
    "BatchSampler",
    "TrainConfig",
    "TrainingError",
    "consistency_loss",
    "em_estep",
    "em_mstep_loss",
    "joint_loss",
    "pi_consistency",
    "ramp",
    "supervised_nll",
    "train_em",
    "train_sgd",
    "unsupervised_nll",
]

log = logging.getLogger(__name__)


class TrainingError(NumericalError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    labeled_batch: int = 32
    unlabeled_batch: int = 32
    labeled_weight: float = 1.0
    use_unlabeled: bool = True
    consistency: bool = False
    consistency_weight: float = 1.0
    ramp_epochs: int = 100
    noise_scale: float = 0.05
    seed: int = 0
    eval_every: int = 1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0 or self.ramp_epochs < 0:
            raise ValueError("epochs and ramp_epochs must be >= 0")
        if self.labeled_batch < 1 or self.unlabeled_batch < 1 or self.eval_every < 1:
            raise ValueError("batch sizes and eval_every must be positive")
        if self.labeled_weight < 0 or self.consistency_weight < 0 or self.noise_scale < 0:
            raise ValueError("weights and noise scale must be non-negative")


def ramp(epoch: float, ramp_epochs: int) -> float:
    """Linear warm-up from 0 to 1 over ``ramp_epochs`` epochs."""
    if ramp_epochs == 0:
        return 1.0
    return min(epoch / ramp_epochs, 1.0)


class BatchSampler:
    """Independent shuffled passes over the labeled and unlabeled index pools."""

    def __init__(self, labeled: np.ndarray, unlabeled: np.ndarray, rng: np.random.Generator):
        self.pools = {"labeled": np.asarray(labeled), "unlabeled": np.asarray(unlabeled)}
        self.rng = rng
        self._order = {name: self.rng.permutation(pool) for name, pool in self.pools.items()}
        self._cursor = {name: 0 for name in self.pools}

    def _reshuffle(self, name: str) -> None:
        self._order[name] = self.rng.permutation(self.pools[name])
        self._cursor[name] = 0

    def draw(self, name: str, size: int) -> np.ndarray:
        """Next ``size`` indices, wrapping into a fresh shuffle when the pass ends."""
        pool = self.pools[name]
        if len(pool) == 0:
            return pool[:0]
        out = []
        need = size
        while need > 0:
            if self._cursor[name] >= len(pool):
                self._reshuffle(name)
            start = self._cursor[name]
            chunk = self._order[name][start:start + need]
            self._cursor[name] += len(chunk)
            out.append(chunk)
            need -= len(chunk)
        return np.concatenate(out)

    def epoch(self, name: str, size: int):
        """Yield batches covering one full pass of ``name`` (last batch may be short)."""
        self._reshuffle(name)
        order = self._order[name]
        for start in range(0, len(order), size):
            self._cursor[name] = min(start + size, len(order))
            yield order[start:start + size]


# losses -------------------------------------------------------------------


def _log_joint_and_logdet(ctx, flow, gmm, *batches) -> list[tuple[Node, Node]]:
    """One recorded flow pass over the stacked batches, split back per batch."""
    if len(batches) == 1:
        z, logdet = flow.forward_ctx(ctx, batches[0])
        return [(gmm.log_joint_ctx(ctx, z), logdet)]
    z, logdet = flow.forward_ctx(ctx, np.concatenate(batches, axis=0))
    lj = gmm.log_joint_ctx(ctx, z)
    out, start = [], 0
    for b in batches:
        stop = start + len(b)
        out.append((ctx.take_rows(lj, start, stop), ctx.take_rows(logdet, start, stop)))
        start = stop
    return out


def _check_labels_range(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError("supervised terms need labels in [0, C)")
    return y


def _sup_term(ctx, lj, logdet, y) -> Node:
    return ctx.linear(ctx.mean(ctx.add(ctx.gather(lj, y), logdet)), -1.0)


def _unsup_term(ctx, lj, logdet) -> Node:
    return ctx.linear(ctx.mean(ctx.add(ctx.logsumexp(lj), logdet)), -1.0)


def supervised_nll(ctx: GradientContext, flow: FlowModel, gmm: GaussianMixture, x, y) -> Node:
    """Mean of -log p(x, y) = -log p(y) - log N(f(x)|mu_y) - log|det df/dx|."""
    y = _check_labels_range(y, gmm.n_classes)
    [(lj, logdet)] = _log_joint_and_logdet(ctx, flow, gmm, x)
    return _sup_term(ctx, lj, logdet, y)


def unsupervised_nll(ctx: GradientContext, flow: FlowModel, gmm: GaussianMixture, x) -> Node:
    """Mean of -log p(x) with p(x) the mixture marginal pushed through the flow."""
    [(lj, logdet)] = _log_joint_and_logdet(ctx, flow, gmm, x)
    return _unsup_term(ctx, lj, logdet)


def joint_loss(ctx: GradientContext, flow: FlowModel, gmm: GaussianMixture, x_lab, y_lab,
               x_unl, labeled_weight: float = 1.0) -> Node:
    """``labeled_weight * supervised_nll + unsupervised_nll``; empty batches add 0."""
    n_l = 0 if x_lab is None else len(x_lab)
    n_u = 0 if x_unl is None else len(x_unl)
    if n_l == 0 and n_u == 0:
        raise ValueError("joint_loss needs at least one non-empty batch")
    if n_l == 0:
        return unsupervised_nll(ctx, flow, gmm, x_unl)
    y_lab = _check_labels_range(y_lab, gmm.n_classes)
    if n_u == 0:
        return ctx.linear(supervised_nll(ctx, flow, gmm, x_lab, y_lab), labeled_weight)
    (lj_l, ld_l), (lj_u, ld_u) = _log_joint_and_logdet(ctx, flow, gmm, x_lab, x_unl)
    sup = ctx.linear(_sup_term(ctx, lj_l, ld_l, y_lab), labeled_weight)
    return ctx.add(sup, _unsup_term(ctx, lj_u, ld_u))


def pseudo_labels(flow: FlowModel, gmm: GaussianMixture, x) -> np.ndarray:
    z, _, _ = flow.forward(x)
    return gmm.predict(z)


def consistency_loss(ctx: GradientContext, flow: FlowModel, gmm: GaussianMixture, x,
                     noise_scale: float, rng: np.random.Generator) -> Node:
    """Class-conditional NLL of one jittered copy under the label of another.

    x' = x + e', x'' = x + e'' with e ~ N(0, s^2 I).  The label predicted for
    x'' is a constant (computed outside the tape); the loss is the mean of
    -log p(x' | y'').
    """
    if noise_scale < 0:
        raise ValueError("noise scale must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    x1 = x + noise_scale * rng.standard_normal(x.shape)
    x2 = x + noise_scale * rng.standard_normal(x.shape)
    y2 = pseudo_labels(flow, gmm, x2)
    [(lj, logdet)] = _log_joint_and_logdet(ctx, flow, gmm, x1)
    lj = ctx.linear(lj, 1.0, -gmm.log_priors)  # conditional, not joint
    return _sup_term(ctx, lj, logdet, y2)


def pi_consistency(ctx: GradientContext, probs_a, probs_b) -> Node:
    """Mean over rows of ||g(x') - g(x'')||^2 between two probability batches."""
    diff = ctx.add(probs_a, ctx.linear(probs_b, -1.0))
    return ctx.mean(ctx.sum(ctx.mul(diff, diff), axis=1))


def em_estep(flow: FlowModel, gmm: GaussianMixture, x) -> np.ndarray:
    z, _, _ = flow.forward(x)
    return gmm.em_posterior(z)


def em_mstep_loss(ctx: GradientContext, flow: FlowModel, gmm: GaussianMixture, x_lab, y_lab,
                  x_unl, q, labeled_weight: float = 1.0) -> Node:
    """Negative expected complete-data log-likelihood for fixed responsibilities.

    Labeled rows use one-hot responsibilities; ``q`` belongs to ``x_unl``.
    """
    n_l = 0 if x_lab is None else len(x_lab)
    n_u = 0 if x_unl is None else len(x_unl)
    if n_l == 0 and n_u == 0:
        raise ValueError("M-step needs at least one non-empty batch")
    batches = ([x_lab] if n_l else []) + ([x_unl] if n_u else [])
    terms = _log_joint_and_logdet(ctx, flow, gmm, *batches)
    parts = []
    if n_l:
        lj, logdet = terms.pop(0)
        y_lab = _check_labels_range(y_lab, gmm.n_classes)
        parts.append(ctx.linear(_sup_term(ctx, lj, logdet, y_lab), labeled_weight))
    if n_u:
        lj, logdet = terms.pop(0)
        q = np.asarray(q, dtype=np.float64)
        expected = ctx.add(ctx.sum(ctx.mul(lj, q), axis=1), logdet)
        parts.append(ctx.linear(ctx.mean(expected), -1.0))
    return parts[0] if len(parts) == 1 else ctx.add(parts[0], parts[1])


# evaluation helpers -----------------------------------------------------------


def dataset_nll(flow, gmm, x_lab, y_lab, x_unl, labeled_weight=1.0) -> float:
    """Full-batch value of the joint objective (numpy path)."""
    total = 0.0
    if len(x_lab):
        z, ld, _ = flow.forward(x_lab)
        lj = gmm.log_joint(z)
        total += labeled_weight * -np.mean(lj[np.arange(len(y_lab)), y_lab] + ld)
    if len(x_unl):
        z, ld, _ = flow.forward(x_unl)
        total += -np.mean(gmm.marginal_logpdf(z) + ld)
    return float(total)


def _val_metrics(flow, gmm, X, y) -> tuple[float, float]:
    if len(y) == 0:
        return math.nan, math.nan
    z, _, _ = flow.forward(X)
    return gmm.predictive_nll(z, y), float(np.mean(gmm.predict(z) == y))


# loops --------------------------------------------------------------------


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]


def _check_labels(ds: Dataset, n_classes: int) -> None:
    counts = ds.class_counts("train")
    missing = [k for k in range(n_classes) if counts[k] == 0]
    if missing:
        raise ValueError(f"classes {missing} have no labeled training rows")


def _train(flow: FlowModel, gmm: GaussianMixture, ds: Dataset, cfg: TrainConfig,
           em: bool) -> History:
    _check_labels(ds, gmm.n_classes)
    x_lab, y_lab = ds.labeled("train")
    x_unl = ds.unlabeled("train") if cfg.use_unlabeled else ds.X[:0]
    x_val, y_val = ds.labeled("val")

    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    sampler = BatchSampler(np.arange(len(x_lab)), np.arange(len(x_unl)),
                           np.random.default_rng(seeds[0]))
    noise_rng = np.random.default_rng(seeds[1])
    opt = Adam(flow.params(), lr=cfg.lr)
    driver = "unlabeled" if len(x_unl) else "labeled"
    other = "labeled" if driver == "unlabeled" else None
    other_size = cfg.labeled_batch

    history = History(config=asdict(cfg))

    def record(epoch: int, weight: float, extra: dict) -> None:
        val_nll, val_acc = _val_metrics(flow, gmm, x_val, y_val)
        row = {
            "epoch": epoch,
            "train_nll": dataset_nll(flow, gmm, x_lab, y_lab, x_unl, cfg.labeled_weight),
            "val_nll": val_nll,
            "val_acc": val_acc,
            "consistency_weight": weight,
        }
        row.update(extra)
        history.rows.append(row)
        log.info("epoch %d train_nll %.4f val_acc %.4f", epoch, row["train_nll"], val_acc)

    record(0, 0.0, {})
    for epoch in range(1, cfg.epochs + 1):
        weight = cfg.consistency_weight * ramp(epoch - 1, cfg.ramp_epochs) if cfg.consistency else 0.0
        loss_sum = 0.0
        n_batches = 0
        driver_size = cfg.unlabeled_batch if driver == "unlabeled" else cfg.labeled_batch
        for b, idx in enumerate(sampler.epoch(driver, driver_size)):
            if driver == "unlabeled":
                li = sampler.draw(other, other_size)
                xl, yl, xu = x_lab[li], y_lab[li], x_unl[idx]
            else:
                xl, yl, xu = x_lab[idx], y_lab[idx], x_unl[:0]
            ctx = GradientContext()
            try:
                if em:
                    q = em_estep(flow, gmm, xu) if len(xu) else None
                    loss = em_mstep_loss(ctx, flow, gmm, xl, yl, xu, q, cfg.labeled_weight)
                else:
                    loss = joint_loss(ctx, flow, gmm, xl, yl, xu, cfg.labeled_weight)
                total = loss
                if cfg.consistency and weight > 0:
                    xc = xu if len(xu) else xl
                    cons = consistency_loss(ctx, flow, gmm, xc, cfg.noise_scale, noise_rng)
                    total = ctx.add(loss, ctx.linear(cons, weight))
                ctx.backward(total)
                opt.step()
            except NumericalError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            loss_sum += float(loss.value)
            n_batches += 1
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            extra = {"batch_loss": loss_sum / max(n_batches, 1)}
            if len(x_unl):
                extra["unsup_nll"] = dataset_nll(flow, gmm, x_lab[:0], y_lab[:0], x_unl)
            record(epoch, weight, extra)
    return history


def train_sgd(flow: FlowModel, gmm: GaussianMixture, ds: Dataset, cfg: TrainConfig) -> History:
    """Maximise the joint labeled/unlabeled likelihood (plus optional consistency) with Adam.

    One epoch is one pass through the unlabeled pool, or through the labeled
    pool when there is no unlabeled data; the labeled pool recycles on its own.
    """
    return _train(flow, gmm, ds, cfg, em=False)


def train_em(flow: FlowModel, gmm: GaussianMixture, ds: Dataset, cfg: TrainConfig) -> History:
    """EM variant: exact E-step per batch, then one Adam step on the expected NLL."""
    return _train(flow, gmm, ds, cfg, em=True)
