"""Command-line entry point: dataset generation, training runs, and model probes.

Exit codes: 0 success, 1 usage/config/input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import baselines as bl
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import FLOW_METHODS, OUT_ENV, ConfigError, format_config, parse_config, resolve_config
from .data import (
    GENERATORS,
    Dataset,
    apply_standardization,
    assign_splits,
    format_delimited,
    load_delimited,
    make_ssl_split,
    standardize,
    subsample_balance,
    subsample_unlabeled,
    write_delimited,
)
from .diff_core import NumericalError
from .eval_report import (
    boundary_distance,
    calibrate,
    decision_grid,
    evaluate_probs,
    format_csv,
    interpolate,
    ood_scores,
)
from .flow import FlowModel
from .latent_gmm import GaussianMixture
from .training import TrainConfig, train_em, train_sgd

METRIC_HEADER = ["split", "n", "accuracy", "nll", "ece", "mean_confidence"]


class UsageError(Exception):
    pass


def _atomic_write(path, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


# datasets ---------------------------------------------------------------------

def _generator_kwargs(cfg: dict) -> dict:
    name = cfg["dataset"]
    if name == "two_circles":
        return {"noise": cfg["noise"]}
    if name == "pinwheel":
        return {"n_classes": cfg["n_classes"], "rate": cfg["spiral_rate"],
                "radial_std": cfg["radial_std"], "tangential_std": cfg["tangential_std"]}
    return {"radius": cfg["blob_radius"], "std": cfg["blob_std"]}


def generate(cfg: dict) -> Dataset:
    return GENERATORS[cfg["dataset"]](n=cfg["n_samples"], seed=cfg["seed"], **_generator_kwargs(cfg))


def _label_col(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def _load_file(path: str, cfg: dict, label_names=None) -> Dataset:
    return load_delimited(path, _label_col(cfg["label_col"]), cfg["delimiter"], cfg["has_header"],
                          label_names)


def build_dataset(cfg: dict) -> tuple[Dataset, np.ndarray]:
    """Returns the prepared dataset and the true labels of its rows (-1 where unknown)."""
    seed = cfg["seed"]
    if cfg["dataset"] == "file":
        ds = _load_file(cfg["train_file"], cfg)
        if cfg["balance"]:
            ds = subsample_balance(ds, seed)
        if cfg["test_file"]:
            ds = assign_splits(ds, n_val=cfg["n_val"], n_test=0, seed=seed)
            test = _load_file(cfg["test_file"], cfg, ds.label_names)
            if test.dim != ds.dim:
                raise ValueError(f"test file has {test.dim} features, train file has {ds.dim}")
            test = test.subset("train")
            ds = replace(ds, X=np.concatenate([ds.X, test[0]]), y=np.concatenate([ds.y, test[1]]),
                         split=np.concatenate([ds.split, np.full(len(test[1]), "test", dtype=object)]))
        else:
            ds = assign_splits(ds, n_val=cfg["n_val"], n_test=cfg["n_test"], seed=seed)
    else:
        ds = generate(cfg)
        if cfg["balance"]:
            ds = subsample_balance(ds, seed)
        ds = assign_splits(ds, n_val=cfg["n_val"], n_test=cfg["n_test"], seed=seed)
    truth = ds.y.copy()
    ds = make_ssl_split(ds, cfg["n_labeled_per_class"], seed)
    if cfg["n_unlabeled"] is not None:
        ds, keep = subsample_unlabeled(ds, cfg["n_unlabeled"], seed, return_index=True)
        truth = truth[keep]
    if cfg["standardize"]:
        ds = standardize(ds)
    else:
        ds = replace(ds, mean=np.zeros(ds.dim), std=np.ones(ds.dim))
    return ds, truth


# models -----------------------------------------------------------------------

def build_flow(cfg: dict, ds: Dataset) -> tuple[FlowModel, GaussianMixture]:
    flow = FlowModel(ds.dim, cfg["n_layers"], cfg["hidden"], seed=cfg["seed"])
    if cfg["means_init"] == "random":
        gmm = GaussianMixture.init_random(ds.dim, ds.n_classes, cfg["seed"])
    elif cfg["means_init"] == "circle":
        if ds.dim < 2:
            raise ValueError("means_init = circle needs at least 2 features")
        gmm = GaussianMixture.init_circle(ds.dim, ds.n_classes, cfg["means_radius"])
    else:
        xl, yl = ds.labeled("train")
        z, _, _ = flow.forward(xl)
        gmm = GaussianMixture.init_data_dependent(z, yl, cfg["means_scale"], ds.n_classes)
    return flow, gmm


def train_config(cfg: dict) -> TrainConfig:
    method = cfg["method"]
    return TrainConfig(
        lr=cfg["lr"], epochs=cfg["epochs"], labeled_batch=cfg["labeled_batch"],
        unlabeled_batch=cfg["unlabeled_batch"], labeled_weight=cfg["labeled_weight"],
        use_unlabeled=method != "flowgmm-sup", consistency=method == "flowgmm-cons",
        consistency_weight=cfg["consistency_weight"], ramp_epochs=cfg["ramp_epochs"],
        noise_scale=cfg["noise_scale"], seed=cfg["seed"], eval_every=cfg["eval_every"],
    )


def _normalize_rows(scores: np.ndarray) -> np.ndarray:
    scores = np.maximum(scores, 0.0)
    total = scores.sum(axis=1, keepdims=True)
    uniform = np.full_like(scores, 1.0 / scores.shape[1])
    return np.where(total > 0, scores / np.where(total > 0, total, 1.0), uniform)


def _sharpen_to(pred: np.ndarray, probs: np.ndarray) -> np.ndarray:
    # nudge so argmax agrees with an externally tie-broken prediction
    probs = probs.copy()
    probs[np.arange(len(pred)), pred] += 1e-9
    return probs / probs.sum(axis=1, keepdims=True)


def _knn_probs(X_lab, y_lab, Q, k, metric, C) -> np.ndarray:
    pred, votes = bl.knn_predict(X_lab, y_lab, Q, k, metric, C, return_votes=True)
    return _sharpen_to(pred, votes)


def run_baseline(cfg: dict, ds: Dataset, eval_sets: dict) -> tuple[dict, dict]:
    """Fit one baseline; returns probabilities per evaluation set and extra report keys."""
    method, C = cfg["method"], ds.n_classes
    xl, yl = ds.labeled("train")
    xu = ds.unlabeled("train")
    extra = {}
    mlp_cfg = bl.MLPConfig(hidden=cfg["mlp_hidden"], dropout=cfg["mlp_dropout"], lr=cfg["mlp_lr"],
                           epochs=cfg["mlp_epochs"], batch_size=cfg["mlp_batch"],
                           unlabeled_batch=cfg["unlabeled_batch"], consistency_weight=cfg["pi_weight"],
                           ramp_epochs=cfg["pi_ramp_epochs"], seed=cfg["seed"])
    if method == "knn":
        return {name: _knn_probs(xl, yl, X, cfg["knn_k"], cfg["knn_metric"], C)
                for name, (X, _) in eval_sets.items()}, extra
    if method in ("logreg", "mlp", "pi-model"):
        if method == "logreg":
            model = bl.logistic_train(xl, yl, C, cfg["logreg_lr"], cfg["logreg_epochs"], seed=cfg["seed"])
        elif method == "mlp":
            model = bl.mlp_train(xl, yl, C, mlp_cfg)
        else:
            model = bl.pi_model_train(xl, yl, xu, C, mlp_cfg)
        return {name: model.predict_proba(X) for name, (X, _) in eval_sets.items()}, extra

    # label spreading: transductive over train rows, inductive for val/test
    X_tr, y_tr = ds.X[ds.rows("train")], ds.y[ds.rows("train")]
    alpha, gamma, k = cfg["spread_alpha"], cfg["spread_gamma"], cfg["spread_k"]
    if cfg["spread_alphas"]:
        xv, yv = ds.labeled("val")
        best, _ = bl.grid_search_spreading(X_tr, y_tr, xv, yv, C, cfg["spread_alphas"],
                                           gammas=cfg["spread_gammas"], ks=cfg["spread_ks"],
                                           kind="rbf" if method == "spread-rbf" else "knn")
        alpha = best["alpha"]
        gamma = best.get("gamma", gamma)
        k = int(best.get("k", k))
        extra.update({f"spread_best_{key}": value for key, value in best.items()})
    held = [name for name in eval_sets if name != "train_unlabeled"]
    X_held = np.concatenate([eval_sets[name][0] for name in held]) if held else None
    if method == "spread-rbf":
        _, F, F_held = bl.label_spreading_dense(X_tr, y_tr, C, gamma, alpha, X_held)
    else:
        _, F, F_held = bl.label_spreading_knn(X_tr, y_tr, C, k, alpha, X_held, cfg["spread_metric"])
    out = {}
    if "train_unlabeled" in eval_sets:
        out["train_unlabeled"] = _normalize_rows(F[y_tr < 0])
    start = 0
    for name in held:
        n = len(eval_sets[name][0])
        out[name] = _normalize_rows(F_held[start:start + n])
        start += n
    return out, extra


def _history_csv(history) -> str:
    keys = []
    for row in history.rows:
        keys.extend(k for k in row if k not in keys)
    return format_csv(keys, [[row.get(k, math.nan) for k in keys] for row in history.rows])


def _prediction_csv(X_truth, probs, C) -> str:
    labels = X_truth
    header = ["row", "label", "pred"] + [f"p{k}" for k in range(C)]
    rows = [[i, int(labels[i]), int(np.argmax(p)), *map(float, p)] for i, p in enumerate(probs)]
    return format_csv(header, rows)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    return str(value)


def run_experiment(cfg: dict, log=print) -> str:
    """Run the configured method and write every output; returns the run directory."""
    run_dir = os.path.join(cfg["out"], cfg["experiment"])
    art_dir = os.path.join(run_dir, "artifacts")
    os.makedirs(art_dir, exist_ok=True)
    _atomic_write(os.path.join(run_dir, "config.resolved"), format_config(cfg))

    ds, truth = build_dataset(cfg)
    C = ds.n_classes
    train_rows = ds.rows("train")
    unl_rows = train_rows[ds.y[train_rows] < 0]
    eval_sets = {}
    known = truth[unl_rows] >= 0
    if len(unl_rows) and known.all():
        eval_sets["train_unlabeled"] = (ds.X[unl_rows], truth[unl_rows])
    for split in ("val", "test"):
        X, y = ds.labeled(split)
        if len(y):
            eval_sets[split] = (X, y)

    report = {
        "experiment": cfg["experiment"], "method": cfg["method"], "seed": cfg["seed"],
        "dim": ds.dim, "n_classes": C,
        "n_train_labeled": int(len(ds.labeled("train")[1])), "n_train_unlabeled": int(len(unl_rows)),
        "n_val": int(len(ds.rows("val"))), "n_test": int(len(ds.rows("test"))),
        "labeled_counts": ds.class_counts("train").tolist(),
    }
    log(f"[{cfg['experiment']}] method={cfg['method']} D={ds.dim} C={C} "
        f"labeled={report['n_train_labeled']} unlabeled={report['n_train_unlabeled']} "
        f"val={report['n_val']} test={report['n_test']}")
    started = time.perf_counter()

    if cfg["method"] in FLOW_METHODS:
        flow, gmm = build_flow(cfg, ds)
        tcfg = train_config(cfg)
        trainer = train_em if cfg["method"] == "flowgmm-em" else train_sgd
        history = trainer(flow, gmm, ds, tcfg)
        _atomic_write(os.path.join(art_dir, "history.csv"), _history_csv(history))
        if cfg["calibrate"]:
            xv, yv = ds.labeled("val")
            if len(yv) == 0:
                raise ValueError("calibrate = true needs n_val > 0")
            sigma2, before, after = calibrate(flow, gmm, xv, yv)
            report.update({"calibrated_sigma2": sigma2, "val_nll_before": before.nll,
                           "val_nll_after": after.nll, "val_ece_before": before.ece,
                           "val_ece_after": after.ece})
        probs = {}
        for name, (X, _) in eval_sets.items():
            z, _, _ = flow.forward(X)
            probs[name] = gmm.predictive(z)
        extra = {"mean": ds.mean.tolist(), "std": ds.std.tolist(), "label_names": ds.label_names}
        save_checkpoint(os.path.join(run_dir, "checkpoint.bin"), flow, gmm, extra)
        if len(unl_rows):
            recs = boundary_distance(flow, gmm, ds.X[unl_rows])
            _atomic_write(os.path.join(art_dir, "distances.csv"), format_csv(
                ["distance", "nearest", "second"], [[r.distance, r.nearest, r.second] for r in recs]))
        if ds.dim == 2:
            lo, hi = ds.X.min(axis=0) - 0.5, ds.X.max(axis=0) + 0.5
            grid = decision_grid(flow, gmm, (lo[0], hi[0], lo[1], hi[1]), cfg["grid_resolution"])
            _atomic_write(os.path.join(art_dir, "grid.csv"), format_csv(
                ["x1", "x2"] + [f"p{k}" for k in range(C)], grid.tolist()))
    else:
        probs, extra_report = run_baseline(cfg, ds, eval_sets)
        report.update(extra_report)

    rows = []
    for name, (X, y) in eval_sets.items():
        m = evaluate_probs(probs[name], y, C)
        rows.append([name, m.n, m.accuracy, m.nll, m.ece, m.mean_confidence])
        report.update({f"{name}_{key}": getattr(m, key)
                       for key in ("accuracy", "nll", "ece", "mean_confidence", "per_class_accuracy")})
        if name == "test":
            _atomic_write(os.path.join(art_dir, "test_predictions.csv"), _prediction_csv(y, probs[name], C))
        log(f"[{cfg['experiment']}] {name}: accuracy={m.accuracy:.4f} nll={m.nll:.4f} ece={m.ece:.4f}")
    _atomic_write(os.path.join(run_dir, "metrics.csv"), format_csv(METRIC_HEADER, rows))
    _atomic_write(os.path.join(run_dir, "report.kv"),
                  "".join(f"{k} = {_fmt(v)}\n" for k, v in report.items()))
    log(f"[{cfg['experiment']}] done in {time.perf_counter() - started:.1f}s -> {run_dir}")
    return run_dir


# checkpoint-based commands ----------------------------------------------------

class LoadedModel:
    def __init__(self, path: str):
        self.flow, self.gmm, extra = load_checkpoint(path)
        D = self.flow.dim
        self.mean = np.asarray(extra.get("mean", np.zeros(D)), dtype=np.float64)
        self.std = np.asarray(extra.get("std", np.ones(D)), dtype=np.float64)
        self.label_names = extra.get("label_names") or None

    def to_model(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.flow.dim:
            raise ValueError(f"data has {X.shape[1]} features, model expects {self.flow.dim}")
        return apply_standardization(X, self.mean, self.std)

    def to_data(self, X) -> np.ndarray:
        return np.asarray(X) * self.std + self.mean

    @property
    def log_std_sum(self) -> float:
        # density correction between standardized and raw units
        return float(np.log(self.std).sum())


def _load_data(args, model: LoadedModel) -> tuple[np.ndarray, np.ndarray]:
    ds = load_delimited(args.data, _label_col(args.label_col), args.delimiter, not args.no_header,
                        model.label_names)
    if ds.n_classes > model.gmm.n_classes:
        raise ValueError(f"data has {ds.n_classes} classes, model has {model.gmm.n_classes}")
    return model.to_model(ds.X), ds.y


def _write_or_print(path: str | None, text: str) -> None:
    if path:
        _atomic_write(path, text)
    else:
        sys.stdout.write(text)


def cmd_eval(args) -> None:
    model = LoadedModel(args.checkpoint)
    X, y = _load_data(args, model)
    sel = y >= 0
    if not sel.any():
        raise ValueError("evaluation needs labeled rows")
    z, _, _ = model.flow.forward(X[sel])
    m = evaluate_probs(model.gmm.predictive(z), y[sel], model.gmm.n_classes)
    print(m.to_kv(), end="")
    if args.out:
        _atomic_write(args.out, format_csv(METRIC_HEADER, [["data", m.n, m.accuracy, m.nll, m.ece,
                                                             m.mean_confidence]]))


def cmd_calibrate(args) -> None:
    model = LoadedModel(args.checkpoint)
    X, y = _load_data(args, model)
    sel = y >= 0
    sigma2, before, after = calibrate(model.flow, model.gmm, X[sel], y[sel])
    print(f"sigma2 = {sigma2!r}")
    print(f"nll_before = {before.nll!r}\nnll_after = {after.nll!r}")
    print(f"ece_before = {before.ece!r}\nece_after = {after.ece!r}")
    if args.out:
        _atomic_write(args.out, format_csv(METRIC_HEADER, [
            ["before", before.n, before.accuracy, before.nll, before.ece, before.mean_confidence],
            ["after", after.n, after.accuracy, after.nll, after.ece, after.mean_confidence]]))
    if args.save:
        extra = {"mean": model.mean.tolist(), "std": model.std.tolist(), "label_names": model.label_names}
        save_checkpoint(args.save, model.flow, model.gmm, extra)


def cmd_sample(args) -> None:
    model = LoadedModel(args.checkpoint)
    z = model.gmm.sample_class(args.cls, args.temperature, np.random.default_rng(args.seed), args.n)
    X = model.to_data(model.flow.inverse(z))
    header = [f"x{i + 1}" for i in range(model.flow.dim)]
    _write_or_print(args.out, format_csv(header, X.tolist()))


def cmd_interpolate(args) -> None:
    model = LoadedModel(args.checkpoint)
    X, _ = _load_data(args, model)
    for idx in (args.i, args.j):
        if not 0 <= idx < len(X):
            raise ValueError(f"row index {idx} out of range for {len(X)} rows")
    t, pts, log_px, log_pz = interpolate(model.flow, model.gmm, X[args.i], X[args.j], args.steps)
    header = ["t"] + [f"x{i + 1}" for i in range(model.flow.dim)] + ["log_px", "log_pz"]
    raw = model.to_data(pts)
    rows = [[t[k], *raw[k], log_px[k] - model.log_std_sum, log_pz[k]] for k in range(len(t))]
    _write_or_print(args.out, format_csv(header, rows))


def cmd_distances(args) -> None:
    model = LoadedModel(args.checkpoint)
    X, _ = _load_data(args, model)
    recs = boundary_distance(model.flow, model.gmm, X)
    d = np.array([r.distance for r in recs])
    print(f"median = {float(np.median(d))!r}\np10 = {float(np.percentile(d, 10))!r}", file=sys.stderr)
    _write_or_print(args.out, format_csv(["distance", "nearest", "second"],
                                         [[r.distance, r.nearest, r.second] for r in recs]))


def cmd_ood(args) -> None:
    model = LoadedModel(args.checkpoint)
    X, _ = _load_data(args, model)
    scores = ood_scores(model.flow, model.gmm, X) - model.log_std_sum
    _write_or_print(args.out, format_csv(["row", "log_px"], [[i, s] for i, s in enumerate(scores)]))


def cmd_grid(args) -> None:
    model = LoadedModel(args.checkpoint)
    if model.flow.dim != 2:
        raise ValueError(f"grid needs a 2-D model, checkpoint has D={model.flow.dim}")
    bounds = [float(b) for b in args.bounds.split(",")]
    if len(bounds) != 4:
        raise ValueError("--bounds takes x1min,x1max,x2min,x2max")
    lo = model.to_model([[bounds[0], bounds[2]]])[0]
    hi = model.to_model([[bounds[1], bounds[3]]])[0]
    grid = decision_grid(model.flow, model.gmm, (lo[0], hi[0], lo[1], hi[1]), args.resolution)
    grid[:, :2] = model.to_data(grid[:, :2])
    header = ["x1", "x2"] + [f"p{k}" for k in range(model.gmm.n_classes)]
    _write_or_print(args.out, format_csv(header, grid.tolist()))


def cmd_gen(args) -> None:
    explicit = parse_config(_read(args.config), args.config) if args.config else {}
    overrides = {"dataset": args.dataset, "n_samples": args.n, "seed": args.seed}
    cfg = resolve_config(explicit, overrides)
    if cfg["dataset"] == "file":
        raise ValueError("gen needs a synthetic dataset name")
    ds = generate(cfg)
    if args.out:
        write_delimited(ds, args.out)
    else:
        sys.stdout.write(format_delimited(ds))
    counts = ds.class_counts()
    print(" ".join(f"class{k}={int(c)}" for k, c in enumerate(counts)), file=sys.stderr)


def _read(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None


def _run_config(args, method: str | None = None) -> None:
    explicit = parse_config(_read(args.config), args.config) if args.config else {}
    overrides = {"seed": args.seed, "out": args.out, "experiment": args.experiment}
    if method is not None:
        overrides["method"] = method
    cfg = resolve_config(explicit, overrides)
    run_experiment(cfg)


# argument parsing -------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


BASELINE_COMMANDS = ("knn", "logreg", "mlp", "pi-model", "spread-rbf", "spread-knn")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flowgmm", description="Semi-supervised classification with a flow and latent Gaussian mixture.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic dataset as delimited text")
    g.add_argument("--dataset", choices=[d for d in GENERATORS])
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--config", help="optional config supplying generator parameters")
    g.add_argument("--out", help="output file (stdout if omitted)")
    g.set_defaults(func=cmd_gen)

    def run_args(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", help=f"output root (default: config 'out', ${OUT_ENV}, or ./runs)")
        sp.add_argument("--experiment", help="override the experiment name")

    t = sub.add_parser("train", help="run the configured method")
    run_args(t)
    t.set_defaults(func=lambda a: _run_config(a))
    for name in BASELINE_COMMANDS:
        b = sub.add_parser(name, help=f"run the {name} baseline")
        run_args(b)
        b.set_defaults(func=lambda a, m=name: _run_config(a, m))

    def model_args(sp, data=True):
        sp.add_argument("--checkpoint", required=True)
        if data:
            sp.add_argument("--data", required=True, help="delimited data file")
            sp.add_argument("--label-col", default="-1")
            sp.add_argument("--delimiter", default=",")
            sp.add_argument("--no-header", action="store_true")
        sp.add_argument("--out", help="output CSV (stdout if omitted)")

    e = sub.add_parser("eval", help="accuracy / NLL / ECE on a labeled file")
    model_args(e)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("calibrate", help="fit the latent variance on validation data")
    model_args(c)
    c.add_argument("--save", help="write the calibrated checkpoint here")
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sample", help="draw class-conditional samples")
    model_args(s, data=False)
    s.add_argument("--class", dest="cls", type=int, required=True)
    s.add_argument("--temperature", type=float, default=1.0)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    i = sub.add_parser("interpolate", help="latent straight-line path between two rows")
    model_args(i)
    i.add_argument("--i", type=int, default=0)
    i.add_argument("--j", type=int, default=1)
    i.add_argument("--steps", type=int, default=10)
    i.set_defaults(func=cmd_interpolate)

    d = sub.add_parser("distances", help="latent distance to the nearest decision boundary")
    model_args(d)
    d.set_defaults(func=cmd_distances)

    o = sub.add_parser("ood", help="per-row data log-likelihood")
    model_args(o)
    o.set_defaults(func=cmd_ood)

    gr = sub.add_parser("grid", help="predictive probabilities over a 2-D box")
    model_args(gr, data=False)
    gr.add_argument("--bounds", required=True, help="x1min,x1max,x2min,x2max")
    gr.add_argument("--resolution", type=int, default=100)
    gr.set_defaults(func=cmd_grid)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return 1
    except (NumericalError, bl.SpreadingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
