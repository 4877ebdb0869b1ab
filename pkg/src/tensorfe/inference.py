"""Orthogonalized slope estimation and variance/interval machinery.

The corrected estimator replaces each regressor by its residual from a
multilinear low-rank projection (removing the part that co-moves with the
interactive effects), estimates the effects themselves from the outcome net
of a preliminary slope, and then regresses the structurally-cleaned outcome
on the cleaned regressors.  Debiasing works because the nuisance errors enter
the estimating equation only through products of small terms.

Variance estimators share one sandwich: homoskedastic, heteroskedastic, and a
HAC version that sums empirical cross-moments over a box of per-dimension
offsets with a product-Bartlett taper.  Setting every lag to zero reproduces
the heteroskedastic estimator exactly (same code path).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Callable, Sequence

import numpy as np

from .errors import EstimationError, RankError, TensorShapeError
from .tensor_ops import as_tensor, check_dim, flatten, hosvd_truncate, mode_product, vec


def _as_regressors(x, shape) -> list[np.ndarray]:
    xs = [x] if isinstance(x, np.ndarray) and x.shape == tuple(shape) else list(x)
    out = []
    for k, xk in enumerate(xs):
        arr = as_tensor(xk, name=f"regressor {k + 1}")
        if arr.shape != tuple(shape):
            raise TensorShapeError(f"regressor {k + 1} has shape {arr.shape}, expected {tuple(shape)}")
        out.append(arr)
    if not out:
        raise TensorShapeError("need at least one regressor")
    return out


def regressor_low_rank_parts(x, ranks) -> list[np.ndarray]:
    """Per-regressor multilinear low-rank components (HOSVD truncations)."""
    xs = [x] if isinstance(x, np.ndarray) else list(x)
    return [hosvd_truncate(as_tensor(xk, name=f"regressor {k + 1}"), ranks) for k, xk in enumerate(xs)]


@dataclass
class Orthogonalization:
    """Nuisance estimates feeding the corrected slope estimator.

    ``gamma_x[k]`` is regressor ``k``'s low-rank part, ``effects`` the
    low-rank estimate of the interactive component from the preliminary
    residual, and ``gamma_y`` their combination
    ``sum_k gamma_x[k] * beta_tilde[k] + effects`` (held exactly, by
    construction).  ``eta[k] = x[k] - gamma_x[k]`` is the cleaned regressor.
    """

    gamma_x: list[np.ndarray]
    effects: np.ndarray
    gamma_y: np.ndarray
    eta: list[np.ndarray]
    beta_tilde: np.ndarray
    ranks: tuple[int, ...]


def orthogonalize(y, x, beta_tilde, ranks, *, effects=None) -> Orthogonalization:
    """Build every nuisance object the corrected estimator needs.

    Parameters
    ----------
    y, x : array_like
        Outcome tensor and regressor tensor(s) of the same shape.
    beta_tilde : array_like
        Preliminary slope estimate (consistent; e.g. a kernel-within fit).
    ranks : sequence of int
        Per-dimension truncation ranks for both the regressor projections and
        the effects estimate.
    effects : array_like, optional
        Caller-supplied effects estimate replacing the default multilinear
        truncation of the preliminary residual (e.g. a kernel-smoothed
        estimate from the same fit that produced ``beta_tilde``).  The
        regressor projections still use ``ranks``.
    """
    y_arr = as_tensor(y, name="outcome", min_order=2)
    xs = _as_regressors(x, y_arr.shape)
    bt = np.atleast_1d(np.asarray(beta_tilde, dtype=np.float64))
    if bt.shape != (len(xs),):
        raise TensorShapeError(f"beta_tilde has shape {bt.shape}, expected ({len(xs)},)")
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != y_arr.ndim:
        raise RankError(f"{len(ranks)} ranks given for an order-{y_arr.ndim} tensor")

    gamma_x = regressor_low_rank_parts(xs, ranks)
    if effects is None:
        prelim_resid = y_arr - sum(b * xk for b, xk in zip(bt, xs))
        effects = hosvd_truncate(prelim_resid, ranks)
    else:
        effects = as_tensor(effects, name="effects")
        if effects.shape != y_arr.shape:
            raise TensorShapeError(f"effects has shape {effects.shape}, expected {y_arr.shape}")
    gamma_y = sum(b * g for b, g in zip(bt, gamma_x)) + effects
    eta = [xk - g for xk, g in zip(xs, gamma_x)]
    return Orthogonalization(
        gamma_x=gamma_x, effects=effects, gamma_y=gamma_y, eta=eta, beta_tilde=bt, ranks=ranks
    )


@dataclass
class CorrectedFit:
    """Corrected slope estimate with the ingredients for variance estimation.

    ``eta`` and ``residual`` are full-shape tensors (residual = outcome net of
    regression part and estimated effects), so downstream HAC estimators can
    use true index adjacency.  ``scatter`` of cross-fitted pieces preserves the
    original index order.
    """

    beta: np.ndarray
    omega: np.ndarray
    residual: np.ndarray
    eta: list[np.ndarray]
    beta_tilde: np.ndarray
    orth: Orthogonalization | None = None
    split: "CrossfitPlan | None" = None
    fold_beta_tilde: list[np.ndarray] = field(default_factory=list)

    @property
    def n_cells(self) -> int:
        return self.residual.size


def _solve_cleaned_moments(eta: list[np.ndarray], target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pooled solve of the cleaned normal equations; returns (beta, omega)."""
    n_reg = len(eta)
    n_cells = target.size
    gram = np.empty((n_reg, n_reg))
    rhs = np.empty(n_reg)
    for k in range(n_reg):
        rhs[k] = np.vdot(eta[k], target)
        for l in range(k, n_reg):
            gram[k, l] = gram[l, k] = np.vdot(eta[k], eta[l])
    if np.linalg.norm(gram) == 0.0 or not np.all(np.isfinite(gram)):
        raise EstimationError("cleaned regressors are identically zero or non-finite")
    if np.linalg.cond(gram) > 1e12:
        raise EstimationError("cleaned regressors are (near-)collinear")
    return np.linalg.solve(gram, rhs), gram / n_cells


def corrected_estimate(
    y, x, beta_tilde=None, ranks=None, *, effects=None, orth: Orthogonalization | None = None
) -> CorrectedFit:
    """Orthogonalization-corrected slope estimate.

    Either pass a prebuilt :class:`Orthogonalization` or the preliminary slope
    and ranks to build one (``effects`` optionally overrides the truncation
    estimate, see :func:`orthogonalize`).  The slope solves the normal
    equations of the cleaned regressors against the outcome net of its
    estimated structural part; the returned residual nets out the regression
    at the *corrected* slope and the estimated effects.
    """
    y_arr = as_tensor(y, name="outcome", min_order=2)
    xs = _as_regressors(x, y_arr.shape)
    if orth is None:
        if beta_tilde is None or ranks is None:
            raise ValueError("need either a prebuilt orthogonalization or (beta_tilde, ranks)")
        orth = orthogonalize(y_arr, xs, beta_tilde, ranks, effects=effects)
    beta, omega = _solve_cleaned_moments(orth.eta, y_arr - orth.gamma_y)
    residual = y_arr - sum(b * xk for b, xk in zip(beta, xs)) - orth.effects
    return CorrectedFit(
        beta=beta,
        omega=omega,
        residual=residual,
        eta=orth.eta,
        beta_tilde=orth.beta_tilde,
        orth=orth,
    )


# --------------------------------------------------------------------------
# Variance estimation
# --------------------------------------------------------------------------


def _eta_list(eta, shape=None) -> list[np.ndarray]:
    etas = [eta] if isinstance(eta, np.ndarray) else list(eta)
    etas = [as_tensor(e, name=f"eta {k + 1}") for k, e in enumerate(etas)]
    if shape is not None:
        for k, e in enumerate(etas):
            if e.shape != tuple(shape):
                raise TensorShapeError(f"eta {k + 1} has shape {e.shape}, expected {tuple(shape)}")
    return etas


def _omega_inv(eta: list[np.ndarray]) -> tuple[np.ndarray, int]:
    n_cells = eta[0].size
    k = len(eta)
    omega = np.empty((k, k))
    for a in range(k):
        for b in range(a, k):
            omega[a, b] = omega[b, a] = np.vdot(eta[a], eta[b]) / n_cells
    if not np.all(np.isfinite(omega)) or np.linalg.cond(omega) > 1e12:
        raise EstimationError("scale matrix of the cleaned regressors is singular")
    return np.linalg.inv(omega), n_cells


def var_homoskedastic(eta, resid) -> np.ndarray:
    """Sandwich under homoskedastic, uncorrelated errors.

    ``sigma^2 * Omega^{-1} / N`` with ``sigma^2`` the plain mean of squared
    residuals (no degrees-of-freedom correction).
    """
    resid = as_tensor(resid, name="residual")
    etas = _eta_list(eta, resid.shape)
    omega_inv, n_cells = _omega_inv(etas)
    sigma_sq = float(np.vdot(resid, resid)) / n_cells
    return sigma_sq * omega_inv / n_cells


def var_hac(eta, resid, lags) -> np.ndarray:
    """Heteroskedasticity- and autocorrelation-robust sandwich.

    Sums empirical cross-moments ``N^{-1} sum_i e_i e_{i+s} eta_i eta_{i+s}'``
    over the offset box ``|s_n| <= lags[n]``, weighting each offset by the
    product-Bartlett taper ``prod_n (1 - |s_n| / (lags[n] + 1))``.  The middle
    matrix is symmetrized and, if any eigenvalue is negative, clipped to the
    positive-semidefinite cone before the sandwich.  All lags zero reproduces
    the heteroskedastic estimator exactly.
    """
    resid = as_tensor(resid, name="residual")
    etas = _eta_list(eta, resid.shape)
    lags = tuple(int(l) for l in lags)
    if len(lags) != resid.ndim:
        raise RankError(f"{len(lags)} lags given for an order-{resid.ndim} tensor")
    for l, n in zip(lags, resid.shape):
        if l < 0 or l >= n:
            raise RankError(f"lag {l} out of range [0, {n - 1}]")

    omega_inv, n_cells = _omega_inv(etas)
    scores = [e * resid for e in etas]
    k = len(etas)
    meat = np.zeros((k, k))
    for offsets in itertools.product(*(range(-l, l + 1) for l in lags)):
        weight = math.prod(1.0 - abs(s) / (l + 1) for s, l in zip(offsets, lags))
        base = tuple(slice(0, n - s) if s >= 0 else slice(-s, n) for s, n in zip(offsets, resid.shape))
        ahead = tuple(slice(s, n) if s >= 0 else slice(0, n + s) for s, n in zip(offsets, resid.shape))
        for a in range(k):
            for b in range(k):
                meat[a, b] += weight * float(np.vdot(scores[a][base], scores[b][ahead]))
    meat /= n_cells
    meat = 0.5 * (meat + meat.T)
    eigvals, eigvecs = np.linalg.eigh(meat)
    if eigvals[0] < 0.0:
        meat = (eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T
    return omega_inv @ meat @ omega_inv / n_cells


def var_heteroskedastic(eta, resid) -> np.ndarray:
    """Heteroskedasticity-robust sandwich (independent, non-identical errors).

    Identical to :func:`var_hac` with every lag set to zero.
    """
    resid_arr = as_tensor(resid, name="residual")
    return var_hac(eta, resid_arr, lags=(0,) * resid_arr.ndim)


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------


@dataclass
class EstimateReport:
    """Slope estimates with standard errors and symmetric normal intervals."""

    method: str
    beta: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float
    variance_model: str
    vcov: np.ndarray
    n_cells: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-ready payload (interval keys spelled ``ci_low`` / ``ci_high``)."""
        out = {
            "method": self.method,
            "beta": self.beta.tolist(),
            "se": self.se.tolist(),
            "ci_low": self.ci_lower.tolist(),
            "ci_high": self.ci_upper.tolist(),
            "level": self.level,
            "variance_model": self.variance_model,
            "vcov": self.vcov.tolist(),
            "n_cells": self.n_cells,
            "diagnostics": self.diagnostics,
        }
        return out


def normal_quantile(level: float) -> float:
    """Two-sided normal critical value for a confidence level in (0, 1)."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    return NormalDist().inv_cdf(0.5 + level / 2.0)


def build_report(
    method: str,
    beta,
    vcov,
    n_cells: int,
    *,
    level: float = 0.95,
    variance_model: str = "hac",
    diagnostics: dict | None = None,
) -> EstimateReport:
    """Assemble a report: normal intervals around the point estimates."""
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    vcov = np.asarray(vcov, dtype=np.float64)
    if vcov.shape != (beta.size, beta.size):
        raise TensorShapeError(f"vcov shape {vcov.shape} does not match {beta.size} coefficient(s)")
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None))
    z = normal_quantile(level)
    return EstimateReport(
        method=method,
        beta=beta,
        se=se,
        ci_lower=beta - z * se,
        ci_upper=beta + z * se,
        level=level,
        variance_model=variance_model,
        vcov=vcov,
        n_cells=int(n_cells),
        diagnostics=diagnostics or {},
    )


# --------------------------------------------------------------------------
# Cross-fitting
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossfitPlan:
    """Two-fold split along one dimension, deterministic in the seed."""

    dim: int
    fold_a: tuple[int, ...]
    fold_b: tuple[int, ...]
    seed: int

    @property
    def folds(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return (self.fold_a, self.fold_b)


def crossfit_split(shape, dim: int, seed: int = 0) -> CrossfitPlan:
    """Halve one dimension's index set into two random folds.

    The permutation is drawn from ``SeedSequence([seed])``; indices inside
    each fold are sorted so sub-tensors keep their original ordering.
    """
    shape = tuple(int(s) for s in shape)
    dim = check_dim(dim, len(shape))
    n = shape[dim - 1]
    if n < 2:
        raise RankError(f"cannot split dimension {dim} of size {n}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    perm = rng.permutation(n)
    half = (n + 1) // 2
    fold_a = tuple(int(i) for i in np.sort(perm[:half]))
    fold_b = tuple(int(i) for i in np.sort(perm[half:]))
    return CrossfitPlan(dim=dim, fold_a=fold_a, fold_b=fold_b, seed=int(seed))


def _take(t: np.ndarray, idx, dim: int) -> np.ndarray:
    return np.take(t, np.asarray(idx, dtype=np.intp), axis=dim - 1)


def _subspace_projector(mat: np.ndarray, rank: int) -> np.ndarray:
    u, _, _ = np.linalg.svd(mat, full_matrices=False)
    basis = u[:, :rank]
    return basis @ basis.T


def pooled_ols(y, x) -> np.ndarray:
    """Plain pooled OLS slope on vectorized tensors (no transform)."""
    y_arr = as_tensor(y, name="outcome")
    xs = _as_regressors(x, y_arr.shape)
    beta, _ = _solve_cleaned_moments(xs, y_arr)
    return beta


def corrected_estimate_split(
    y,
    x,
    ranks,
    plan: CrossfitPlan,
    prelim: Callable[[np.ndarray, list[np.ndarray]], Sequence[float]] = pooled_ols,
) -> CorrectedFit:
    """Cross-fitted corrected estimate.

    For each fold along the split dimension, the preliminary slope and all
    low-rank subspaces (per-regressor and for the effects) are estimated on
    the complement fold; the split dimension itself is never projected.
    Non-split dimensions keep their full index sets inside every sub-tensor.
    Fold-level cleaned moments are pooled into one slope, and the residual and
    cleaned regressors are scattered back to full shape in original index
    order so autocorrelation-aware variance estimators stay meaningful.
    """
    y_arr = as_tensor(y, name="outcome", min_order=2)
    xs = _as_regressors(x, y_arr.shape)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != y_arr.ndim:
        raise RankError(f"{len(ranks)} ranks given for an order-{y_arr.ndim} tensor")
    split_dim = check_dim(plan.dim, y_arr.ndim)
    project_dims = [d for d in range(1, y_arr.ndim + 1) if d != split_dim]

    n_reg = len(xs)
    gram = np.zeros((n_reg, n_reg))
    rhs = np.zeros(n_reg)
    eta_full = [np.zeros_like(y_arr) for _ in xs]
    effects_full = np.zeros_like(y_arr)
    fold_prelims: list[np.ndarray] = []

    for apply_idx, fit_idx in ((plan.fold_a, plan.fold_b), (plan.fold_b, plan.fold_a)):
        fit_y = _take(y_arr, fit_idx, split_dim)
        fit_x = [_take(xk, fit_idx, split_dim) for xk in xs]
        bt = np.atleast_1d(np.asarray(prelim(fit_y, fit_x), dtype=np.float64))
        if bt.shape != (n_reg,):
            raise EstimationError(f"preliminary estimator returned shape {bt.shape}, expected ({n_reg},)")
        fold_prelims.append(bt)
        fit_resid = fit_y - sum(b * xk for b, xk in zip(bt, fit_x))

        x_projectors = [
            {d: _subspace_projector(flatten(xk, d), ranks[d - 1]) for d in project_dims} for xk in fit_x
        ]
        resid_projectors = {d: _subspace_projector(flatten(fit_resid, d), ranks[d - 1]) for d in project_dims}

        sub_y = _take(y_arr, apply_idx, split_dim)
        sub_x = [_take(xk, apply_idx, split_dim) for xk in xs]
        gamma_x = []
        for xk, projs in zip(sub_x, x_projectors):
            g = xk
            for d in project_dims:
                g = mode_product(g, projs[d], d)
            gamma_x.append(g)
        effects = sub_y - sum(b * xk for b, xk in zip(bt, sub_x))
        for d in project_dims:
            effects = mode_product(effects, resid_projectors[d], d)
        gamma_y = sum(b * g for b, g in zip(bt, gamma_x)) + effects
        eta = [xk - g for xk, g in zip(sub_x, gamma_x)]

        target = sub_y - gamma_y
        for k in range(n_reg):
            rhs[k] += np.vdot(eta[k], target)
            for l in range(k, n_reg):
                inc = np.vdot(eta[k], eta[l])
                gram[k, l] += inc
                if l != k:
                    gram[l, k] += inc
        scatter = [slice(None)] * y_arr.ndim
        scatter[split_dim - 1] = np.asarray(apply_idx, dtype=np.intp)
        scatter = tuple(scatter)
        for k in range(n_reg):
            eta_full[k][scatter] = eta[k]
        effects_full[scatter] = effects

    if np.linalg.norm(gram) == 0.0 or np.linalg.cond(gram) > 1e12:
        raise EstimationError("cleaned regressors are (near-)collinear after cross-fitting")
    beta = np.linalg.solve(gram, rhs)
    omega = gram / y_arr.size
    residual = y_arr - sum(b * xk for b, xk in zip(beta, xs)) - effects_full
    return CorrectedFit(
        beta=beta,
        omega=omega,
        residual=residual,
        eta=eta_full,
        beta_tilde=np.mean(fold_prelims, axis=0),
        split=plan,
        fold_beta_tilde=fold_prelims,
    )
