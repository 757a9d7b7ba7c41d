"""Randomised invariants checked with hypothesis."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flowgmm.baselines import affinity_rbf, normalized_affinity, sin2_matrix, spread_scores
from flowgmm.config import SCHEMA, format_config, parse_config, resolve_config
from flowgmm.diff_core import GradientContext
from flowgmm.eval_report import boundary_distances_latent, ece
from flowgmm.flow import FlowModel
from flowgmm.latent_gmm import GaussianMixture
from flowgmm.training import supervised_nll, unsupervised_nll
from helpers import randomize
from oracles import bisector_distance, spreading_fixed_point

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
seeds = st.integers(0, 2**31 - 1)


@settings(max_examples=60, deadline=None)
@given(seed=seeds, dim=st.integers(2, 16), n_layers=st.integers(1, 6), data=st.data())
def test_flow_round_trip_and_logdet_negation(seed, dim, n_layers, data):
    flow = randomize(FlowModel(dim, n_layers=n_layers, hidden=8, seed=seed), seed=seed, scale=0.3)
    x = data.draw(arrays(np.float64, (3, dim), elements=finite))
    z, logdet, _ = flow.forward(x)
    back, inv = flow.inverse(z, with_logdet=True)
    assert np.max(np.abs(back - x)) < 1e-6
    assert np.max(np.abs(logdet + inv)) < 1e-8


@settings(max_examples=60, deadline=None)
@given(seed=seeds, upto=st.integers(0, 4))
def test_partial_forward_composes(seed, upto):
    flow = randomize(FlowModel(3, n_layers=4, hidden=6), seed=seed)
    x = np.random.default_rng(seed).standard_normal((4, 3))
    mid, ld1, _ = flow.forward(x, upto=upto)
    z, ld, _ = flow.forward(x)
    rest = mid
    ld2 = np.zeros(4)
    for layer in flow.layers[upto:]:
        rest, part = layer.forward(rest)
        ld2 += part
    assert np.array_equal(rest, z)
    assert np.allclose(ld1 + ld2, ld, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=seeds, C=st.integers(2, 6), D=st.integers(1, 5), scale=st.floats(0.1, 50))
def test_predictive_normalised_and_nearest_mean(seed, C, D, scale):
    rng = np.random.default_rng(seed)
    gmm = GaussianMixture(rng.standard_normal((C, D)) * scale, log_var=rng.uniform(-2, 2))
    z = rng.standard_normal((20, D)) * scale * 2
    p = gmm.predictive(z)
    assert np.all(np.abs(p.sum(1) - 1) < 1e-12)
    assert np.array_equal(gmm.em_posterior(z), p)
    sq = ((z[:, None] - gmm.means[None]) ** 2).sum(-1)
    top2 = np.sort(sq, axis=1)[:, :2]
    clear = top2[:, 1] - top2[:, 0] > 1e-9 * (1 + top2[:, 1])
    assert np.array_equal(gmm.predict(z)[clear], np.argmin(sq, 1)[clear])


@settings(max_examples=50, deadline=None)
@given(seed=seeds, n_classes=st.integers(2, 4))
def test_marginal_never_above_joint_bound(seed, n_classes):
    rng = np.random.default_rng(seed)
    flow = randomize(FlowModel(2, 2, 4), seed=seed, scale=0.3)
    gmm = GaussianMixture(rng.standard_normal((n_classes, 2)) * 2)
    x = rng.standard_normal((5, 2))
    unsup = float(unsupervised_nll(GradientContext(), flow, gmm, x).value)
    for k in range(n_classes):
        y = np.full(5, k)
        assert unsup <= float(supervised_nll(GradientContext(), flow, gmm, x, y).value) + 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=seeds)
def test_fit_sigma_keeps_predictions(seed):
    rng = np.random.default_rng(seed)
    gmm = GaussianMixture(rng.standard_normal((3, 2)) * 2)
    z = rng.standard_normal((25, 2)) * 2
    y = rng.integers(0, 3, 25)
    before_pred, before_nll = gmm.predict(z), gmm.predictive_nll(z, y)
    gmm.fit_sigma(z, y)
    assert np.array_equal(gmm.predict(z), before_pred)
    assert gmm.predictive_nll(z, y) <= before_nll


@settings(max_examples=100, deadline=None)
@given(a=arrays(np.float64, (6,), elements=finite), b=arrays(np.float64, (6,), elements=finite))
def test_sin2_is_half_squared_chord(a, b):
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    ua, ub = a / np.linalg.norm(a), b / np.linalg.norm(b)
    assert abs(sin2_matrix(a, b)[0, 0] - 0.5 * np.sum((ua - ub) ** 2)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(seed=seeds, n=st.integers(1, 200), C=st.integers(2, 5), bins=st.integers(1, 20))
def test_ece_in_unit_interval(seed, n, C, bins):
    rng = np.random.default_rng(seed)
    value = ece(rng.dirichlet(np.ones(C), n), rng.integers(0, C, n), bins)
    assert 0.0 <= value <= 1.0


@settings(max_examples=100, deadline=None)
@given(seed=seeds, C=st.integers(2, 5), D=st.integers(1, 4))
def test_boundary_distance_is_bisector_distance(seed, C, D):
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((C, D)) * 3
    z = rng.standard_normal((10, D)) * 3
    d, a, b = boundary_distances_latent(z, means)
    for i in range(10):
        assert abs(d[i] - bisector_distance(z[i], means[a[i]], means[b[i]])) < 1e-10
        assert d[i] >= 0


@settings(max_examples=40, deadline=None)
@given(seed=seeds, alpha=st.floats(0.05, 0.95), gamma=st.floats(0.1, 5))
def test_spreading_closed_form_is_fixed_point(seed, alpha, gamma):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((10, 3))
    W = affinity_rbf(X, gamma)
    Y = np.zeros((10, 2))
    Y[0, 0] = Y[1, 1] = 1
    F = spread_scores(W, Y, alpha)
    S = normalized_affinity(W)
    assert np.max(np.abs(F - (alpha * S @ F + Y))) < 1e-10
    assert np.max(np.abs((1 - alpha) * F - spreading_fixed_point(S, Y, alpha))) < 1e-8


@settings(max_examples=50, deadline=None)
@given(epochs=st.integers(0, 1000), lr=st.floats(1e-6, 1.0), seed=st.integers(-5, 5),
       hidden=st.lists(st.integers(1, 1024), min_size=1, max_size=4),
       name=st.text(alphabet="abcxyz_-0123", min_size=1, max_size=12))
def test_config_text_round_trip(epochs, lr, seed, hidden, name):
    cfg = resolve_config({"epochs": epochs, "lr": lr, "seed": seed, "mlp_hidden": tuple(hidden),
                          "experiment": name, "out": "o"})
    text = format_config(cfg)
    assert resolve_config(parse_config(text)) == cfg
    assert text.count("\n") == len(SCHEMA)
