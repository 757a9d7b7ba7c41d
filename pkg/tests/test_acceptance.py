"""End-to-end acceptance checks, one test per criterion.

Every test prints a single ``PASS``/``FAIL`` line (also repeated in the
terminal summary) before asserting.  The recipe-driven checks share cached
runs of the shipped recipe files.
"""

import csv
import os
import time

import numpy as np
import pytest

from flowgmm.baselines import (
    MLPConfig,
    knn_predict,
    logistic_train,
    mlp_train,
    normalized_affinity,
    pi_model_train,
    sin2_matrix,
    spread_scores,
)
from flowgmm.cli import main, run_experiment
from flowgmm.config import format_config, parse_config, resolve_config
from flowgmm.data import Dataset, assign_splits, standardize
from flowgmm.diff_core import GradientContext, finite_diff_grad
from flowgmm.eval_report import calibrate
from flowgmm.flow import FlowModel
from flowgmm.latent_gmm import GaussianMixture
from flowgmm.training import TrainConfig, consistency_loss, joint_loss, train_sgd
from helpers import randomize, rel_err
from oracles import fd_jacobian, spreading_fixed_point

RECIPES = os.path.join(os.path.dirname(__file__), "..", "recipes")
SEEDS = (0, 1, 2)
RESULTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        RESULTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


class RecipeRuns:
    """Runs shipped recipes on demand and keeps the outputs for reuse."""

    def __init__(self, root):
        self.root = str(root)
        self.runs = {}
        self.seconds = {}

    def config(self, recipe: str, seed: int, experiment: str | None = None) -> dict:
        with open(os.path.join(RECIPES, f"{recipe}.cfg")) as fh:
            explicit = parse_config(fh.read(), recipe)
        name = experiment or f"{recipe}_s{seed}"
        return resolve_config(explicit, {"seed": seed, "out": self.root, "experiment": name})

    def run(self, recipe: str, seed: int) -> str:
        key = (recipe, seed)
        if key not in self.runs:
            started = time.perf_counter()
            self.runs[key] = run_experiment(self.config(recipe, seed), log=lambda *a: None)
            self.seconds[key] = time.perf_counter() - started
        return self.runs[key]

    def test_accuracy(self, recipe: str, seed: int) -> float:
        for row in _read_csv(os.path.join(self.run(recipe, seed), "metrics.csv")):
            if row["split"] == "test":
                return float(row["accuracy"])
        raise AssertionError("no test row")

    def distances(self, recipe: str, seed: int) -> np.ndarray:
        path = os.path.join(self.run(recipe, seed), "artifacts", "distances.csv")
        return np.array([float(r["distance"]) for r in _read_csv(path)])


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def recipes(tmp_path_factory):
    return RecipeRuns(tmp_path_factory.mktemp("recipes"))


def test_criterion_01_invertibility(verdict):
    started = time.perf_counter()
    worst = 0.0
    for dim in (2, 8, 16):
        for k in range(20):
            flow = randomize(FlowModel(dim, n_layers=5, hidden=32, seed=k), seed=100 * dim + k, scale=0.3)
            x = np.random.default_rng(k).uniform(-10, 10, (1000, dim))
            z, _, _ = flow.forward(x)
            worst = max(worst, float(np.max(np.abs(flow.inverse(z) - x))))
    elapsed = time.perf_counter() - started
    verdict(1, worst < 1e-6 and elapsed < 30,
            f"max round-trip error {worst:.2e} (< 1e-6), {elapsed:.1f}s (< 30s)")


def test_criterion_02_logdet_oracle(verdict):
    worst = 0.0
    for dim in (2, 3):
        for k in range(100):
            flow = randomize(FlowModel(dim, n_layers=5, hidden=16, seed=k), seed=7 * k + dim, scale=0.4)
            x = np.random.default_rng(1000 + k).standard_normal(dim) * 2
            _, logdet, _ = flow.forward(x)
            J = fd_jacobian(lambda v: flow.forward(v)[0], x)
            worst = max(worst, abs(logdet - np.linalg.slogdet(J)[1]))
    verdict(2, worst < 1e-4, f"max |logdet - log|det J_fd|| = {worst:.2e} (< 1e-4) over 200 cases")


def test_criterion_03_gradient_check(verdict):
    worst = 0.0
    for k in range(10):
        rng = np.random.default_rng(k)
        flow = randomize(FlowModel(4, n_layers=3, hidden=8, seed=k), seed=k, scale=0.4)
        gmm = GaussianMixture(rng.standard_normal((3, 4)) * 1.5, log_var=rng.uniform(-0.5, 0.5))
        xl, yl = rng.standard_normal((5, 4)), rng.integers(0, 3, 5)
        xu = rng.standard_normal((6, 4))
        builds = (
            lambda c: joint_loss(c, flow, gmm, xl, yl, xu, labeled_weight=2.0),
            lambda c: consistency_loss(c, flow, gmm, xu, 0.1, np.random.default_rng(k)),
        )
        for build in builds:
            ctx = GradientContext()
            ctx.backward(build(ctx), flow.params())
            analytic = [p.grad.copy() for p in flow.params()]
            numeric = finite_diff_grad(lambda: float(build(GradientContext()).value.item()),
                                       flow.params(), h=1e-5)
            worst = max(worst, max(rel_err(a, n) for a, n in zip(analytic, numeric)))
    verdict(3, worst < 1e-3, f"max relative gradient error {worst:.2e} (< 1e-3), joint + consistency, D=4")


def test_criterion_04_predictive_em_identity(verdict):
    rng = np.random.default_rng(0)
    gmm = GaussianMixture(rng.standard_normal((5, 3)) * 3, log_var=0.3,
                          log_priors=np.log(rng.dirichlet(np.ones(5))))
    z = rng.standard_normal((10_000, 3)) * 5
    p, q = gmm.predictive(z), gmm.em_posterior(z)
    gap = float(np.max(np.abs(p - q)))
    mass = float(np.max(np.abs(p.sum(1) - 1)))
    verdict(4, gap <= 1e-12 and mass <= 1e-12,
            f"max |predictive - posterior| = {gap:.1e}, max |sum - 1| = {mass:.1e} (<= 1e-12)")


def test_criterion_05_high_dim_moments(verdict):
    started = time.perf_counter()
    D, n = 256, 10_000
    rng = np.random.default_rng(0)
    own = other = 0.0
    for seed in range(n):
        mu = GaussianMixture.init_random(D, 2, seed=seed).means
        s1 = mu[0] + rng.standard_normal(D)
        own += np.sum((s1 - mu[0]) ** 2)
        other += np.sum((s1 - mu[1]) ** 2)
    r1, r2 = own / n / D, other / n / (3 * D)
    elapsed = time.perf_counter() - started
    verdict(5, 0.98 <= r1 <= 1.02 and 0.98 <= r2 <= 1.02 and elapsed < 10,
            f"E|s1-mu1|^2/D = {r1:.4f}, E|s1-mu2|^2/3D = {r2:.4f} (in [0.98, 1.02]), {elapsed:.1f}s (< 10s)")


def test_criterion_06_semi_supervised_gain(verdict, recipes):
    lines, ok = [], True
    for data in ("pinwheel", "two_circles"):
        acc = {m: np.mean([recipes.test_accuracy(f"{data}_{m}", s) for s in SEEDS])
               for m in ("sup", "ssl", "cons")}
        gain = acc["ssl"] - acc["sup"]
        ok &= gain >= 0.05 and acc["cons"] >= acc["ssl"] - 0.01
        lines.append(f"{data}: sup {acc['sup']:.3f} ssl {acc['ssl']:.3f} cons {acc['cons']:.3f}")
    total = sum(v for (r, _), v in recipes.seconds.items()
                if r.rsplit("_", 1)[1] in ("sup", "ssl", "cons"))
    ok &= total < 15 * 60
    verdict(6, ok, "; ".join(lines) + f" (ssl - sup >= 0.05, cons >= ssl - 0.01), {total:.0f}s (< 900s)")


def test_criterion_07_boundary_distance(verdict, recipes):
    ok, parts = True, []
    for s in SEEDS:
        sup, ssl = recipes.distances("pinwheel_sup", s), recipes.distances("pinwheel_ssl", s)
        cut = np.percentile(sup, 10)
        f_sup, f_ssl = np.mean(sup < cut), np.mean(ssl < cut)
        ok &= np.median(ssl) > np.median(sup) and f_ssl < f_sup
        parts.append(f"seed {s}: median {np.median(sup):.2f}->{np.median(ssl):.2f}, "
                     f"below p10 {f_sup:.3f}->{f_ssl:.3f}")
    verdict(7, ok, "; ".join(parts))


def test_criterion_08_calibration(verdict):
    rng = np.random.default_rng(0)
    n = 2000
    y = np.arange(n) % 2
    X = np.array([[-1.0, 0.0], [1.0, 0.0]])[y] + rng.standard_normal((n, 2))
    ds = standardize(assign_splits(Dataset(X, y, 2), n_val=500, n_test=500, seed=0))
    flow = FlowModel(2, n_layers=4, hidden=32, seed=0)
    gmm = GaussianMixture.init_circle(2, 2, 4.0)
    train_sgd(flow, gmm, ds, TrainConfig(epochs=10, labeled_batch=64, use_unlabeled=False,
                                         eval_every=10))
    sigma2, before, after = calibrate(flow, gmm, *ds.labeled("val"))
    ok = (after.nll < before.nll and after.ece < before.ece and after.accuracy == before.accuracy
          and before.mean_confidence > before.accuracy)
    verdict(8, ok, f"sigma2 {sigma2:.2f}; NLL {before.nll:.3f}->{after.nll:.3f}, "
                   f"ECE {before.ece:.3f}->{after.ece:.3f}, accuracy {before.accuracy}->{after.accuracy}, "
                   f"pre confidence {before.mean_confidence:.3f} > accuracy")


def test_criterion_09_label_spreading(verdict):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        A = rng.uniform(0, 1, (10, 10)) * (rng.uniform(0, 1, (10, 10)) < 0.6)
        W = np.triu(A, 1) + np.triu(A, 1).T
        W[np.arange(10), (np.arange(10) + 1) % 10] = W[(np.arange(10) + 1) % 10, np.arange(10)] = 0.5
        Y = np.zeros((10, 3))
        Y[[0, 1, 2], [0, 1, 2]] = 1
        alpha = rng.uniform(0.05, 0.95)
        closed = spread_scores(W, Y, alpha)
        fixed = spreading_fixed_point(normalized_affinity(W), Y, alpha)
        worst = max(worst, float(np.max(np.abs((1 - alpha) * closed - fixed))))
    two = np.array([[0.0, 1.0], [1.0, 0.0]])
    two_ok = all(np.argmax(spread_scores(two, np.array([[1.0, 0], [0, 0]]), a)[1]) == 0
                 for a in np.linspace(0.001, 0.999, 200))
    verdict(9, worst < 1e-8 and two_ok,
            f"closed form vs iteration max gap {worst:.1e} (< 1e-8); 2-node graph predicts labeled class "
            f"for all alpha: {two_ok}")


def _blobs(n, seed):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    return np.array([[4.0, 4.0], [-4.0, -4.0]])[y] + rng.standard_normal((n, 2)), y


def test_criterion_10_baseline_sanity(verdict):
    X, y = _blobs(200, 0)
    Xt, yt = _blobs(1000, 1)
    cfg = MLPConfig(epochs=20)
    acc = {
        "knn-l2": np.mean(knn_predict(X, y, Xt, 5, "l2") == yt),
        "knn-sin2": np.mean(knn_predict(X, y, Xt, 5, "sin2") == yt),
        "logreg": np.mean(logistic_train(X, y, 2).predict(Xt) == yt),
        "mlp": np.mean(mlp_train(X, y, 2, cfg).predict(Xt) == yt),
        "pi-model": np.mean(pi_model_train(X, y, Xt, 2, cfg).predict(Xt) == yt),
    }
    rng = np.random.default_rng(2)
    A, B = rng.standard_normal((10_000, 5)), rng.standard_normal((10_000, 5))
    ua = A / np.linalg.norm(A, axis=1, keepdims=True)
    ub = B / np.linalg.norm(B, axis=1, keepdims=True)
    s2 = np.array([sin2_matrix(a, b)[0, 0] for a, b in zip(A, B)])
    gap = float(np.max(np.abs(s2 - 0.5 * ((ua - ub) ** 2).sum(1))))
    ok = all(v >= 0.99 for v in acc.values()) and gap <= 1e-12
    verdict(10, ok, ", ".join(f"{k} {v:.3f}" for k, v in acc.items()) + f" (>= 0.99); sin2 gap {gap:.1e}")


def test_criterion_11_em_parity(verdict, recipes):
    pairs = [(recipes.test_accuracy("pinwheel_em", s), recipes.test_accuracy("pinwheel_ssl", s)) for s in SEEDS]
    ok = all(abs(em - sgd) <= 0.03 for em, sgd in pairs)
    verdict(11, ok, ", ".join(f"seed {s}: em {em:.3f} sgd {sgd:.3f}" for s, (em, sgd) in zip(SEEDS, pairs))
            + " (within 0.03)")


def test_criterion_12_determinism(verdict, recipes, tmp_path):
    checks = []
    for recipe in ("pinwheel_ssl", "two_circles_cons"):
        first = os.path.join(recipes.run(recipe, 0), "metrics.csv")
        cfg = recipes.config(recipe, 0)
        cfg["out"] = str(tmp_path)
        again = os.path.join(run_experiment(cfg, log=lambda *a: None), "metrics.csv")
        with open(first, "rb") as a, open(again, "rb") as b:
            checks.append((recipe, a.read() == b.read()))
    verdict(12, all(ok for _, ok in checks),
            ", ".join(f"{r}: {'identical' if ok else 'differs'}" for r, ok in checks))


def _write_embeddings(path, n, C, D, seed, label_fraction=1.0):
    rng = np.random.default_rng(seed)
    centers = np.random.default_rng(99).standard_normal((C, D)) * 2
    y = np.arange(n) % C
    X = centers[y] + rng.standard_normal((n, D))
    names = ["world", "sports", "business", "scitech"]
    with open(path, "w") as fh:
        fh.write(",".join([f"e{j}" for j in range(D)] + ["topic"]) + "\n")
        for i in range(n):
            label = names[y[i]] if rng.uniform() < label_fraction else ""
            fh.write(",".join(repr(float(v)) for v in X[i]) + f",{label}\n")


def test_criterion_13_embedding_protocol(verdict, tmp_path):
    train, test = tmp_path / "train.csv", tmp_path / "test.csv"
    _write_embeddings(train, 3000, 4, 16, seed=0, label_fraction=0.9)
    _write_embeddings(test, 400, 4, 16, seed=1)
    with open(os.path.join(RECIPES, "text_template.cfg")) as fh:
        explicit = parse_config(fh.read())
    explicit.update({"train_file": str(train), "test_file": str(test),
                     "n_unlabeled": 2000, "n_val": 100, "epochs": 60, "lr": 1e-3, "hidden": 32, "n_layers": 2,
                     "out": str(tmp_path / "out")})
    parts, ok = [], True
    for method in ("flowgmm", "knn"):
        path = tmp_path / f"{method}.cfg"
        path.write_text(format_config(resolve_config({**explicit, "method": method, "experiment": method})))
        assert main(["train", "--config", str(path)]) == 0
        run = os.path.join(explicit["out"], method)
        with open(os.path.join(run, "report.kv")) as fh:
            rep = dict(line.rstrip("\n").split(" = ", 1) for line in fh)
        expected = {"n_train_labeled": "200", "n_train_unlabeled": "2000", "n_test": "400",
                    "n_val": "100", "labeled_counts": "50,50,50,50"}
        ok &= all(rep[k] == v for k, v in expected.items()) and float(rep["test_accuracy"]) > 0.8
        parts.append(f"{method}: n_l={rep['n_train_labeled']} n_u={rep['n_train_unlabeled']} "
                     f"test={rep['n_test']} acc={float(rep['test_accuracy']):.3f}")
    verdict(13, ok, "; ".join(parts) + " (expected n_l=200, n_u=2000, accuracy > 0.8)")
