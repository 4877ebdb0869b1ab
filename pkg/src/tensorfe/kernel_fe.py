"""Kernel-weighted within transforms built from loading proxies.

Each dimension of the panel gets an ``N_n x N_n`` weight matrix whose row
``i`` averages over units that look similar to ``i`` in proxy space; the
within transform subtracts those local averages mode by mode.  The slope
coefficient then comes from pooled OLS on the transformed data, which
differences out low-rank interactive effects without estimating them.

Weight rows are normalized including the own-unit term, so rows always sum to
one.  A unit with (numerically) no neighbours gets weight one on itself and a
zero row in the plain projection — it simply drops out of the transformed
data, which is flagged rather than treated as an error unless *every* unit in
a dimension is isolated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeightsError, EstimationError, RankError, TensorShapeError
from .factor import ProxySet
from .tensor_ops import as_tensor, check_dim, mode_product, vec

KERNEL_FAMILIES = ("gaussian", "indicator")
PROJECTION_VARIANTS = ("plain", "optimal")
COLUMN_SPACE_RTOL = 1e-10
DESIGN_COND_LIMIT = 1e12


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidth(s) for the proxy distances.

    ``bandwidth`` may be a single positive float (shared by every dimension),
    a tuple indexed by dimension, or a dict keyed by 1-indexed dimension.
    """

    family: str = "gaussian"
    bandwidth: float | tuple[float, ...] | dict[int, float] = 0.1

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {KERNEL_FAMILIES}")
        values = (
            self.bandwidth.values()
            if isinstance(self.bandwidth, dict)
            else self.bandwidth
            if isinstance(self.bandwidth, (tuple, list))
            else (self.bandwidth,)
        )
        for h in values:
            if not (np.isfinite(h) and h > 0):
                raise ValueError(f"bandwidths must be positive and finite, got {h!r}")

    def bandwidth_for(self, dim: int) -> float:
        if isinstance(self.bandwidth, dict):
            try:
                return float(self.bandwidth[dim])
            except KeyError:
                raise RankError(f"no bandwidth specified for dimension {dim}") from None
        if isinstance(self.bandwidth, (tuple, list)):
            if dim > len(self.bandwidth):
                raise RankError(f"no bandwidth specified for dimension {dim}")
            return float(self.bandwidth[dim - 1])
        return float(self.bandwidth)


def kernel_eval(family, u) -> np.ndarray:
    """Evaluate a kernel family at (nonnegative) scaled distances.

    ``gaussian`` is ``exp(-u^2)``; ``indicator`` is ``1`` strictly inside the
    unit interval and ``0`` at or beyond it.
    """
    if isinstance(family, KernelSpec):
        family = family.family
    u = np.asarray(u, dtype=np.float64)
    if family == "gaussian":
        return np.exp(-(u**2))
    if family == "indicator":
        return (np.abs(u) < 1.0).astype(np.float64)
    raise ValueError(f"unknown kernel family {family!r}; choose from {KERNEL_FAMILIES}")


def _pairwise_distances(u: np.ndarray) -> np.ndarray:
    """Euclidean distances between the rows of a proxy matrix.

    Single-column proxies take the absolute-difference path so that the
    per-column estimator and the vector-norm estimator agree exactly when
    there is one proxy column.
    """
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] == 1:
        col = u[:, 0]
        return np.abs(col[:, None] - col[None, :])
    diff = u[:, None, :] - u[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _normalize_rows(kmat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize a kernel matrix; return weights and isolated-row indices."""
    n = kmat.shape[0]
    row_sums = kmat.sum(axis=1)
    # The self term k(0) = 1 keeps every row sum >= 1 for both families.
    weights = kmat / row_sums[:, None]
    off_diag_mass = row_sums - np.diag(kmat)
    degenerate = np.flatnonzero(off_diag_mass <= n * np.finfo(np.float64).eps)
    return weights, degenerate


@dataclass
class WeightSet:
    """Row-stochastic kernel weight matrices, one per dimension."""

    weights: dict[int, np.ndarray]
    degenerate_rows: dict[int, np.ndarray]
    spec: KernelSpec

    def for_dim(self, dim: int) -> np.ndarray:
        if dim not in self.weights:
            raise RankError(f"no weights built for dimension {dim}")
        return self.weights[dim]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(sorted(self.weights))


def kernel_weights(proxies, spec: KernelSpec, dims=None) -> WeightSet:
    """Build per-dimension weight matrices from proxy distances.

    ``W[i, j]`` is the kernel evaluated at the scaled proxy distance between
    units ``i`` and ``j``, normalized so each row (self term included) sums to
    one.  Raises when every unit of some dimension is isolated — the within
    transform would annihilate that entire dimension.
    """
    columns = proxies.columns if isinstance(proxies, ProxySet) else dict(proxies)
    if dims is not None:
        missing = [d for d in dims if d not in columns]
        if missing:
            raise RankError(f"no proxies available for dimension(s) {missing}")
        columns = {d: columns[d] for d in dims}
    if not columns:
        raise RankError("no proxy columns supplied")

    weights: dict[int, np.ndarray] = {}
    degenerate: dict[int, np.ndarray] = {}
    for d in sorted(columns):
        u = as_tensor(columns[d], name=f"proxies for dimension {d}")
        if u.ndim == 1:
            u = u[:, None]
        if u.ndim != 2:
            raise TensorShapeError(f"proxies for dimension {d} must be a matrix")
        h = spec.bandwidth_for(d)
        kmat = kernel_eval(spec.family, _pairwise_distances(u) / h)
        w, iso = _normalize_rows(kmat)
        if iso.size == u.shape[0]:
            raise DegenerateWeightsError(
                f"all {u.shape[0]} units of dimension {d} are isolated at bandwidth {h}; "
                "the within transform would remove every observation"
            )
        weights[d] = w
        degenerate[d] = iso
    return WeightSet(weights=weights, degenerate_rows=degenerate, spec=spec)


@dataclass
class ProjectionSet:
    """Per-dimension within-transform matrices and which variant built them."""

    mats: dict[int, np.ndarray]
    variant: str = "plain"

    def for_dim(self, dim: int) -> np.ndarray:
        if dim not in self.mats:
            raise RankError(f"no projection built for dimension {dim}")
        return self.mats[dim]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(sorted(self.mats))


def within_projections(weight_set: WeightSet, variant: str = "plain") -> ProjectionSet:
    """Turn weight matrices into within-transform matrices.

    ``plain`` subtracts the weighted neighbourhood average: ``I - W``.
    ``optimal`` removes the whole column space of ``W`` (the projector uses
    the left singular vectors of ``W`` above ``1e-10`` of its top singular
    value), which is idempotent and annihilates anything the weights can
    express — including the plain transform's target.  When ``W`` has full
    column rank this leaves the zero map, faithfully signalling that the
    weights carry no usable within-variation.
    """
    if variant not in PROJECTION_VARIANTS:
        raise ValueError(f"unknown projection variant {variant!r}; choose from {PROJECTION_VARIANTS}")
    mats: dict[int, np.ndarray] = {}
    for d, w in weight_set.weights.items():
        n = w.shape[0]
        if variant == "plain":
            mats[d] = np.eye(n) - w
        else:
            u, s, _ = np.linalg.svd(w)
            keep = s > COLUMN_SPACE_RTOL * s[0] if s.size and s[0] > 0 else np.zeros(0, dtype=bool)
            basis = u[:, : int(np.sum(keep))]
            mats[d] = np.eye(n) - basis @ basis.T
    return ProjectionSet(mats=mats, variant=variant)


def weighted_within(t, projections: ProjectionSet) -> np.ndarray:
    """Apply the per-dimension within matrices as successive mode products."""
    out = as_tensor(t)
    for d in projections.dims:
        check_dim(d, out.ndim)
        out = mode_product(out, projections.mats[d], d)
    return out


def smoothed_effects(resid, projections: ProjectionSet) -> np.ndarray:
    """Implied fixed-effect estimate: the part the within transform removes.

    Applied to a preliminary residual (outcome net of the regression part)
    this is the kernel estimate of the interactive effects — the weighted
    neighbourhood structure the transform would subtract.  Its estimation
    noise shrinks with growing neighbourhoods, so downstream users get an
    effects estimate whose error is of the same order as the slope CLT term
    rather than exactly inside the regressors' structural span.
    """
    arr = as_tensor(resid)
    return arr - weighted_within(arr, projections)


def standard_within(t, dims=None) -> np.ndarray:
    """Classical within transform: demean along every (requested) dimension.

    The centering operators commute, so composing them is the usual
    inclusion–exclusion multi-way fixed-effects sweep (for three dimensions,
    the familiar eight-term formula).
    """
    out = as_tensor(t, min_order=2)
    dims = range(1, out.ndim + 1) if dims is None else [check_dim(d, out.ndim) for d in dims]
    for d in dims:
        out = out - out.mean(axis=d - 1, keepdims=True)
    return out


def _pooled_ols(y_t: np.ndarray, x_t: list[np.ndarray], context: str) -> np.ndarray:
    z = np.column_stack([vec(xk) for xk in x_t])
    gram = z.T @ z
    if np.linalg.norm(gram) == 0.0:
        raise EstimationError(f"{context}: transformed regressors are identically zero")
    if np.linalg.cond(gram) > DESIGN_COND_LIMIT:
        raise EstimationError(f"{context}: transformed regressors are (near-)collinear")
    return np.linalg.solve(gram, z.T @ vec(y_t))


@dataclass
class KernelFeFit:
    """Pooled OLS on kernel-within-transformed data."""

    beta: np.ndarray
    y_within: np.ndarray
    x_within: list[np.ndarray]
    projections: ProjectionSet
    degenerate_rows: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def residual(self) -> np.ndarray:
        out = self.y_within.copy()
        for bk, xk in zip(self.beta, self.x_within):
            out -= bk * xk
        return out


def kernel_fe_estimate(y, x, projections: ProjectionSet, *, weight_set: WeightSet | None = None) -> KernelFeFit:
    """Slope estimate from pooled OLS after the kernel within transform.

    ``projections`` typically comes from :func:`within_projections`; passing
    the originating :class:`WeightSet` forwards its degenerate-row diagnostic
    into the fit.
    """
    y_arr = as_tensor(y, name="outcome", min_order=2)
    xs = x if isinstance(x, (list, tuple)) else [x]
    xs = [as_tensor(xk, name=f"regressor {k + 1}") for k, xk in enumerate(xs)]
    for k, xk in enumerate(xs):
        if xk.shape != y_arr.shape:
            raise TensorShapeError(f"regressor {k + 1} has shape {xk.shape}, expected {y_arr.shape}")
    y_t = weighted_within(y_arr, projections)
    x_t = [weighted_within(xk, projections) for xk in xs]
    beta = _pooled_ols(y_t, x_t, "kernel within estimate")
    return KernelFeFit(
        beta=beta,
        y_within=y_t,
        x_within=x_t,
        projections=projections,
        degenerate_rows=dict(weight_set.degenerate_rows) if weight_set is not None else {},
    )


@dataclass
class IterativeKernelFit:
    """Pooled OLS after per-proxy-column within sweeps.

    ``column_weights[(dim, m)]`` is the weight matrix built from the ``m``-th
    proxy column (1-indexed) of that dimension; the composed transform for a
    dimension multiplies the matching ``I - W`` factors in column order.
    """

    beta: np.ndarray
    y_within: np.ndarray
    x_within: list[np.ndarray]
    column_weights: dict[tuple[int, int], np.ndarray]
    degenerate_rows: dict[tuple[int, int], np.ndarray]
    composed: ProjectionSet


def iterative_kernel_fe(y, x, proxies, spec: KernelSpec, dims=None) -> IterativeKernelFit:
    """Kernel-weighted estimate sweeping one proxy column at a time.

    Instead of one weight matrix per dimension built from vector proxy
    distances, each proxy column gets its own weights from scalar distances
    (|difference| / bandwidth) and contributes one ``I - W`` factor; a
    dimension's transform is the product of its column factors.  With a single
    proxy column per dimension this reproduces :func:`kernel_fe_estimate`
    exactly.
    """
    y_arr = as_tensor(y, name="outcome", min_order=2)
    xs = x if isinstance(x, (list, tuple)) else [x]
    xs = [as_tensor(xk, name=f"regressor {k + 1}") for k, xk in enumerate(xs)]
    for k, xk in enumerate(xs):
        if xk.shape != y_arr.shape:
            raise TensorShapeError(f"regressor {k + 1} has shape {xk.shape}, expected {y_arr.shape}")

    columns = proxies.columns if isinstance(proxies, ProxySet) else dict(proxies)
    if dims is not None:
        missing = [d for d in dims if d not in columns]
        if missing:
            raise RankError(f"no proxies available for dimension(s) {missing}")
        columns = {d: columns[d] for d in dims}

    column_weights: dict[tuple[int, int], np.ndarray] = {}
    degenerate: dict[tuple[int, int], np.ndarray] = {}
    composed: dict[int, np.ndarray] = {}
    for d in sorted(columns):
        u = as_tensor(columns[d], name=f"proxies for dimension {d}")
        if u.ndim == 1:
            u = u[:, None]
        h = spec.bandwidth_for(d)
        n = u.shape[0]
        transform = np.eye(n)
        for m in range(u.shape[1]):
            kmat = kernel_eval(spec.family, _pairwise_distances(u[:, m]) / h)
            w, iso = _normalize_rows(kmat)
            if iso.size == n:
                raise DegenerateWeightsError(
                    f"all units of dimension {d} are isolated in proxy column {m + 1} "
                    f"at bandwidth {h}"
                )
            column_weights[(d, m + 1)] = w
            degenerate[(d, m + 1)] = iso
            transform = (np.eye(n) - w) @ transform
        composed[d] = transform

    projections = ProjectionSet(mats=composed, variant="plain")
    y_t = weighted_within(y_arr, projections)
    x_t = [weighted_within(xk, projections) for xk in xs]
    beta = _pooled_ols(y_t, x_t, "iterative kernel within estimate")
    return IterativeKernelFit(
        beta=beta,
        y_within=y_t,
        x_within=x_t,
        column_weights=column_weights,
        degenerate_rows=degenerate,
        composed=projections,
    )
