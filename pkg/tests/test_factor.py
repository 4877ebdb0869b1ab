"""Alternating least squares with low-rank confounders, plus proxy extraction."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from tensorfe.errors import EstimationError
from tensorfe.factor import (
    defactored_regressors,
    fit_factor_model,
    low_rank_effects,
    residual_proxies,
)
from tensorfe.tensor_ops import cp_compose, flatten

BETA = (1.0, -0.5)


def build_panel(rng, shape=(12, 10, 8), n_components=2, noise=0.0):
    """Noiseless (by default) outcome with a CP confounder correlated with x."""
    mats = [rng.standard_normal((n, n_components)) for n in shape]
    effects = cp_compose(mats)
    xs = [
        0.5 * effects + rng.standard_normal(shape),
        rng.standard_normal(shape),
    ]
    y = BETA[0] * xs[0] + BETA[1] * xs[1] + effects
    if noise:
        y = y + noise * rng.standard_normal(shape)
    return y, xs, effects


def test_noiseless_recovery_at_true_rank():
    y, xs, _ = build_panel(np.random.default_rng(0))
    fit = fit_factor_model(y, xs, 1, 2)
    assert fit.converged
    assert_allclose(fit.beta, BETA, atol=1e-6)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_noiseless_recovery_along_every_dim(dim):
    y, xs, _ = build_panel(np.random.default_rng(1))
    fit = fit_factor_model(y, xs, dim, 2)
    assert_allclose(fit.beta, BETA, atol=1e-6)


def test_over_specified_rank_still_recovers():
    y, xs, _ = build_panel(np.random.default_rng(2))
    fit = fit_factor_model(y, xs, 1, 3)
    assert_allclose(fit.beta, BETA, atol=1e-5)


def test_zero_factors_reduces_to_pooled_ols():
    rng = np.random.default_rng(3)
    y, xs, _ = build_panel(rng, noise=0.5)
    fit = fit_factor_model(y, xs, 1, 0)
    design = np.stack([x.ravel() for x in xs], axis=1)
    expected = np.linalg.lstsq(design, y.ravel(), rcond=None)[0]
    assert_allclose(fit.beta, expected, atol=1e-12)
    assert fit.converged


def test_objective_trace_never_increases():
    y, xs, _ = build_panel(np.random.default_rng(4), noise=1.0)
    fit = fit_factor_model(y, xs, 1, 2)
    trace = np.asarray(fit.objective_trace)
    assert trace.size >= 1
    assert np.all(np.diff(trace) <= 1e-10)
    assert fit.objective == pytest.approx(trace.min())


def test_fitted_low_rank_term_has_requested_rank():
    y, xs, _ = build_panel(np.random.default_rng(5), noise=0.3)
    fit = fit_factor_model(y, xs, 1, 2)
    lr = flatten(fit.low_rank, 1)
    s = np.linalg.svd(lr, compute_uv=False)
    assert s[2] <= 1e-8 * s[0]


def test_defactored_regressors_are_annihilated():
    y, xs, _ = build_panel(np.random.default_rng(6), noise=0.4)
    fit = fit_factor_model(y, xs, 1, 2)
    for xd in defactored_regressors(fit, xs):
        m = flatten(xd, 1)
        assert_allclose(fit.loadings.T @ m, 0.0, atol=1e-8)
        assert_allclose(m @ fit.factors, 0.0, atol=1e-8)


def test_proxies_span_rank_one_direction():
    rng = np.random.default_rng(7)
    vecs = [rng.standard_normal(9) for _ in range(3)]
    resid = np.einsum("i,j,k->ijk", *vecs)
    proxies = residual_proxies(resid, 1)
    for dim, v in zip((1, 2, 3), vecs):
        col = proxies.for_dim(dim)[:, 0]
        unit = v / np.linalg.norm(v)
        overlap = abs(float(col @ unit)) / np.linalg.norm(col)
        assert overlap > 1 - 1e-10  # collinear up to sign


def test_proxies_close_to_truth_under_small_noise():
    rng = np.random.default_rng(8)
    shape = (30, 30, 30)
    mats = [rng.standard_normal((30, 2)) for _ in range(3)]
    effects = cp_compose(mats)
    noisy = effects + 0.01 * rng.standard_normal(shape)
    proxies = residual_proxies(noisy, 2)
    for dim, truth in zip((1, 2, 3), mats):
        est = proxies.for_dim(dim)
        # Procrustes alignment: estimated columns span the loading space.
        coef, *_ = np.linalg.lstsq(est, truth, rcond=None)
        mse = np.mean((est @ coef - truth) ** 2)
        assert mse < 1e-2


def test_proxies_reject_zero_residual():
    with pytest.raises(EstimationError):
        residual_proxies(np.zeros((5, 5, 5)), 1)


def test_proxy_columns_are_standardized(rng):
    resid = rng.standard_normal((10, 11, 12))
    proxies = residual_proxies(resid, 2)
    for dim in (1, 2, 3):
        assert_allclose(proxies.for_dim(dim).std(axis=0, ddof=1), 1.0, atol=1e-12)


def test_low_rank_effects_exact_at_matching_ranks():
    rng = np.random.default_rng(9)
    col = rng.standard_normal((8, 1))
    mats = [col @ np.ones((1, 3)), rng.standard_normal((8, 3)), rng.standard_normal((8, 3))]
    effects = cp_compose(mats)
    assert_allclose(low_rank_effects(effects, (1, 3, 3)), effects, atol=1e-9)


def test_low_rank_effects_filters_noise():
    rng = np.random.default_rng(10)
    shape = (20, 20, 20)
    wins = 0
    for _ in range(50):
        mats = [rng.standard_normal((20, 2)) for _ in range(3)]
        effects = cp_compose(mats)
        noise = rng.standard_normal(shape)
        est = low_rank_effects(effects + noise, (2, 2, 2))
        if np.linalg.norm(est - effects) < np.linalg.norm(noise):
            wins += 1
    assert wins == 50


def test_low_rank_effects_zero_ranks():
    arr = np.random.default_rng(11).standard_normal((4, 4, 4))
    assert_allclose(low_rank_effects(arr, (0, 0, 0)), 0.0)
