"""Least-squares interactive fixed-effects estimation on a flattened tensor.

The estimator alternates two exact minimization steps on the mode-``n``
flattening of the data: a pooled-OLS update of the slope coefficients given
the current low-rank component, and a truncated-SVD update of the low-rank
component given the slopes.  Because every iteration only needs the top
eigenvectors of the residual's row Gram matrix, the loop works with
precomputed ``N_n x N_n`` cross-Gram blocks instead of re-flattening the data
each pass; the reported loadings, factors, and residual are recomputed from
one genuine thin SVD at the best slope vector seen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError, RankError, TensorShapeError
from .tensor_ops import (
    SVD_ZERO_RTOL,
    as_tensor,
    check_dim,
    flatten,
    hosvd_truncate,
    unflatten,
)

GRAM_COND_LIMIT = 1e12


def _regressor_list(x, shape) -> list[np.ndarray]:
    """Normalize the regressor argument to a list of tensors shaped like Y."""
    if isinstance(x, np.ndarray) and x.shape == tuple(shape):
        xs = [x]
    else:
        xs = list(x)
    out = []
    for k, xk in enumerate(xs):
        arr = as_tensor(xk, name=f"regressor {k + 1}")
        if arr.shape != tuple(shape):
            raise TensorShapeError(
                f"regressor {k + 1} has shape {arr.shape}, expected {tuple(shape)}"
            )
        out.append(arr)
    if not out:
        raise TensorShapeError("need at least one regressor")
    return out


def _solve_gram(gram: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, bool]:
    """Solve the K x K normal equations, falling back to a pseudo-inverse.

    Returns the solution and a flag that is True when the Gram matrix was too
    ill-conditioned for a plain solve.
    """
    if not np.all(np.isfinite(gram)) or np.linalg.norm(gram) == 0.0:
        raise EstimationError("regressor Gram matrix is zero or non-finite")
    if np.linalg.cond(gram) < GRAM_COND_LIMIT:
        return np.linalg.solve(gram, rhs), False
    return np.linalg.pinv(gram) @ rhs, True


@dataclass
class FactorFit:
    """Result of the alternating least-squares interactive-effects fit.

    ``loadings`` (rows of the flattening) carry the singular-value scale;
    ``factors`` (columns) are orthonormal, so the estimated low-rank component
    is ``loadings @ factors.T`` in the flattened geometry.  ``residual`` is the
    full-shape tensor left after removing both the regression part and the
    low-rank part.  ``objective`` is the sum of squared discarded singular
    values of the defactored residual — the quantity the alternation descends.
    """

    beta: np.ndarray
    loadings: np.ndarray
    factors: np.ndarray
    residual: np.ndarray
    flatten_dim: int
    n_factors: int
    iterations: int
    converged: bool
    objective: float
    objective_trace: list[float] = field(default_factory=list)
    gram_flagged: bool = False

    @property
    def low_rank(self) -> np.ndarray:
        """The estimated interactive-effect component, in tensor shape."""
        mat = self.loadings @ self.factors.T
        return unflatten(mat, self.flatten_dim, self.residual.shape)


def fit_factor_model(
    y,
    x,
    flatten_dim: int = 1,
    n_factors: int = 1,
    *,
    tol: float = 1e-9,
    max_iter: int = 1000,
) -> FactorFit:
    """Alternating least squares for slopes plus a low-rank component.

    Parameters
    ----------
    y : array_like
        Outcome tensor, order >= 2.
    x : array_like or sequence of array_like
        Regressor tensor(s), each shaped like ``y``.
    flatten_dim : int
        1-indexed mode whose flattening carries the low-rank component.
    n_factors : int
        Number of factors kept in the SVD step.  Zero reduces the fit to
        pooled OLS.
    tol : float
        Relative slope-change threshold that stops the alternation.
    max_iter : int
        Iteration cap; hitting it marks the fit as non-converged.

    Returns
    -------
    FactorFit
        The slope vector of the objective-minimizing iterate seen, with the
        matching loadings, factors, and residual.
    """
    y_arr = as_tensor(y, name="outcome", min_order=2)
    xs = _regressor_list(x, y_arr.shape)
    flatten_dim = check_dim(flatten_dim, y_arr.ndim)
    a = flatten(y_arr, flatten_dim)
    bs = [flatten(xk, flatten_dim) for xk in xs]
    n_rows = a.shape[0]
    max_rank = min(a.shape)
    if not 0 <= n_factors <= max_rank:
        raise RankError(f"n_factors {n_factors} out of range [0, {max_rank}]")

    n_reg = len(bs)
    gram = np.empty((n_reg, n_reg))
    rhs = np.empty(n_reg)
    for k, bk in enumerate(bs):
        rhs[k] = np.vdot(bk, a)
        for l in range(k, n_reg):
            gram[k, l] = gram[l, k] = np.vdot(bk, bs[l])
    beta, flagged = _solve_gram(gram, rhs)

    if n_factors == 0:
        resid_mat = a - np.einsum("k,kij->ij", beta, np.stack(bs))
        objective = float(np.vdot(resid_mat, resid_mat))
        return FactorFit(
            beta=beta,
            loadings=np.zeros((n_rows, 0)),
            factors=np.zeros((a.shape[1], 0)),
            residual=unflatten(resid_mat, flatten_dim, y_arr.shape),
            flatten_dim=flatten_dim,
            n_factors=0,
            iterations=0,
            converged=True,
            objective=objective,
            objective_trace=[objective],
            gram_flagged=flagged,
        )

    # Cross-Gram blocks: everything the SVD step needs about the residual's
    # row space, assembled once.
    g_aa = a @ a.T
    g_ab = [a @ bk.T for bk in bs]
    g_bb = [[bs[k] @ bs[l].T for l in range(n_reg)] for k in range(n_reg)]

    def residual_row_gram(b: np.ndarray) -> np.ndarray:
        s = g_aa.copy()
        for k in range(n_reg):
            s -= b[k] * (g_ab[k] + g_ab[k].T)
            for l in range(n_reg):
                s += b[k] * b[l] * g_bb[k][l]
        return 0.5 * (s + s.T)

    def tail_energy(b: np.ndarray) -> tuple[float, np.ndarray]:
        s = residual_row_gram(b)
        eigvals, eigvecs = np.linalg.eigh(s)
        top = eigvals[-n_factors:]
        basis = eigvecs[:, -n_factors:]
        return max(float(np.trace(s) - np.sum(top)), 0.0), basis

    best_beta = beta.copy()
    best_objective = np.inf
    trace: list[float] = []
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        objective, basis = tail_energy(beta)
        trace.append(objective)
        if objective < best_objective:
            best_objective = objective
            best_beta = beta.copy()
        # Pooled OLS against the data net of the current low-rank component:
        # inner products with the projected residual only need the r x M
        # images of the flattenings under the current basis.
        t_a = basis.T @ a
        t_b = [basis.T @ bk for bk in bs]
        proj_resid = t_a - np.einsum("k,kij->ij", beta, np.stack(t_b))
        low_rank_part = np.array([np.vdot(t_b[k], proj_resid) for k in range(n_reg)])
        new_beta, step_flagged = _solve_gram(gram, rhs - low_rank_part)
        flagged = flagged or step_flagged
        delta = np.linalg.norm(new_beta - beta)
        scale = max(np.linalg.norm(beta), 1.0)
        beta = new_beta
        if delta <= tol * scale:
            converged = True
            break

    final_objective, _ = tail_energy(beta)
    trace.append(final_objective)
    if final_objective < best_objective:
        best_objective = final_objective
        best_beta = beta.copy()

    # One honest thin SVD at the winning slope vector: the Gram eigenbasis is
    # only a device for the loop, reported quantities come from the residual
    # itself.
    resid_mat = a - np.einsum("k,kij->ij", best_beta, np.stack(bs))
    u, s, vh = np.linalg.svd(resid_mat, full_matrices=False)
    if s.size:
        s = np.where(s < SVD_ZERO_RTOL * s[0], 0.0, s)
    loadings = u[:, :n_factors] * s[:n_factors]
    factors = vh[:n_factors].T
    defactored = resid_mat - loadings @ factors.T
    return FactorFit(
        beta=best_beta,
        loadings=loadings,
        factors=factors,
        residual=unflatten(defactored, flatten_dim, y_arr.shape),
        flatten_dim=flatten_dim,
        n_factors=n_factors,
        iterations=iterations,
        converged=converged,
        objective=float(np.sum(s[n_factors:] ** 2)),
        objective_trace=trace,
        gram_flagged=flagged,
    )


def defactored_regressors(fit: FactorFit, x) -> list[np.ndarray]:
    """Project regressors off the fitted loading and factor spaces.

    Returns the regressor tensors with both the estimated loading span (rows)
    and factor span (columns) of the flattening swept out — the quantities
    whose Gram matrix scales the factor estimator's sampling variance.
    """
    xs = _regressor_list(x, fit.residual.shape)

    def annihilator(mat: np.ndarray) -> np.ndarray:
        n = mat.shape[0]
        if mat.shape[1] == 0:
            return np.eye(n)
        u, s, _ = np.linalg.svd(mat, full_matrices=False)
        keep = s > SVD_ZERO_RTOL * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
        basis = u[:, keep]
        return np.eye(n) - basis @ basis.T

    m_load = annihilator(fit.loadings)
    m_fact = annihilator(fit.factors)
    out = []
    for xk in xs:
        mat = m_load @ flatten(xk, fit.flatten_dim) @ m_fact
        out.append(unflatten(mat, fit.flatten_dim, fit.residual.shape))
    return out


@dataclass
class ProxySet:
    """Per-dimension proxy columns for the latent loadings.

    ``columns[n]`` holds the ``N_n x r_n`` proxy matrix for dimension ``n``
    (1-indexed): leading left singular vectors of the mode-``n`` flattening of
    a preliminary residual, scaled by their singular values and then column-
    standardized to unit sample variance.  ``source`` records where the
    residual came from.
    """

    columns: dict[int, np.ndarray]
    source: str = "residual-svd"

    def for_dim(self, dim: int) -> np.ndarray:
        if dim not in self.columns:
            raise RankError(f"no proxies extracted for dimension {dim}")
        return self.columns[dim]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(sorted(self.columns))


def residual_proxies(residual, ranks, dims=None, *, source: str = "residual-svd") -> ProxySet:
    """Extract standardized loading proxies from a preliminary residual.

    Parameters
    ----------
    residual : array_like
        Outcome net of the preliminary regression part (the low-rank signal
        should dominate it).
    ranks : int or sequence of int
        Proxy columns per dimension; a scalar applies to every dimension.
    dims : sequence of int, optional
        1-indexed dimensions to extract for (default: all).
    """
    arr = as_tensor(residual, name="residual", min_order=2)
    order = arr.ndim
    dims = tuple(range(1, order + 1)) if dims is None else tuple(check_dim(d, order) for d in dims)
    if np.isscalar(ranks):
        rank_map = {d: int(ranks) for d in dims}
    else:
        ranks = tuple(int(r) for r in ranks)
        if len(ranks) != len(dims):
            raise RankError(f"{len(ranks)} ranks given for {len(dims)} dimensions")
        rank_map = dict(zip(dims, ranks))

    columns: dict[int, np.ndarray] = {}
    for d in dims:
        mat = flatten(arr, d)
        max_rank = min(mat.shape)
        r = rank_map[d]
        if not 1 <= r <= max_rank:
            raise RankError(f"proxy rank {r} out of range [1, {max_rank}] for dimension {d}")
        if mat.shape[0] < 2:
            raise EstimationError(f"dimension {d} has fewer than 2 units; cannot standardize")
        u, s, _ = np.linalg.svd(mat, full_matrices=False)
        cols = u[:, :r] * s[:r]
        sd = cols.std(axis=0, ddof=1)
        if np.any(sd <= 0.0) or not np.all(np.isfinite(sd)):
            raise EstimationError(
                f"degenerate proxies in dimension {d}: zero-variance singular direction "
                "(is the preliminary residual exactly low-rank or zero?)"
            )
        columns[d] = cols / sd
    return ProxySet(columns=columns, source=source)


def low_rank_effects(residual, ranks) -> np.ndarray:
    """Multilinear low-rank estimate of the interactive-effect component.

    Truncated HOSVD of the preliminary residual at the given per-dimension
    ranks; used both on its own and inside the orthogonalized estimator.
    """
    return hosvd_truncate(residual, ranks)
