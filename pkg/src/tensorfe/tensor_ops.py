"""Dense tensor primitives: flattening, mode products, CP/Tucker helpers.

Conventions (frozen; every routine in the package relies on them):

* Dimensions are 1-indexed in all public APIs, matching the usual panel
  notation where "dimension 1" is the first index of the array.
* ``vec`` linearizes with dimension 1 fastest (Fortran order).
* ``flatten(t, n)`` puts mode ``n`` on the rows; its columns run over the
  remaining dimensions in the cyclic order ``n+1, ..., d, 1, ..., n-1`` with
  the first-listed dimension varying fastest.

Singular values below ``1e-12`` times the largest one are treated as exact
zeros wherever a decomposition is computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RankError, TensorShapeError

SVD_ZERO_RTOL = 1e-12


def as_tensor(t, name: str = "tensor", min_order: int = 1) -> np.ndarray:
    """Coerce to a float64 ndarray and validate order and finiteness."""
    arr = np.asarray(t, dtype=np.float64)
    if arr.ndim < min_order:
        raise TensorShapeError(
            f"{name} must have at least {min_order} dimension(s), got {arr.ndim}"
        )
    if arr.size and not np.all(np.isfinite(arr)):
        raise TensorShapeError(f"{name} contains non-finite entries")
    return arr


def check_dim(dim: int, order: int) -> int:
    """Validate a 1-indexed dimension against a tensor order."""
    if not isinstance(dim, (int, np.integer)) or isinstance(dim, bool):
        raise RankError(f"dimension index must be an integer, got {dim!r}")
    if not 1 <= dim <= order:
        raise RankError(f"dimension index {dim} out of range for order-{order} tensor")
    return int(dim)


def vec(t) -> np.ndarray:
    """Linearize a tensor with dimension 1 varying fastest."""
    return as_tensor(t).reshape(-1, order="F")


def _cyclic_perm(dim: int, order: int) -> tuple[int, ...]:
    # 0-based axis order (n, n+1, ..., d-1, 0, ..., n-2) for 1-indexed dim n;
    # axis n-1 leads, the rest follow cyclically.
    n = dim - 1
    return (n,) + tuple(range(n + 1, order)) + tuple(range(n))


def flatten(t, dim: int) -> np.ndarray:
    """Mode-``dim`` flattening with cyclic column order.

    Row ``i`` collects every cell whose ``dim``-th index is ``i``.  The columns
    enumerate the other dimensions cyclically starting *after* ``dim``, with
    the first-listed dimension varying fastest, so for a 3-D tensor
    ``flatten(t, 2)`` has its columns ordered by (dim-3, dim-1) with dim 3
    fastest.

    Parameters
    ----------
    t : array_like
        Input tensor of order >= 1.
    dim : int
        1-indexed mode to put on the rows.
    """
    arr = as_tensor(t)
    dim = check_dim(dim, arr.ndim)
    perm = _cyclic_perm(dim, arr.ndim)
    return np.transpose(arr, perm).reshape(arr.shape[dim - 1], -1, order="F")


def unflatten(m, dim: int, shape) -> np.ndarray:
    """Invert :func:`flatten`: rebuild the tensor of the given shape."""
    mat = as_tensor(m, name="matrix")
    if mat.ndim != 2:
        raise TensorShapeError(f"expected a matrix, got order-{mat.ndim} array")
    shape = tuple(int(s) for s in shape)
    dim = check_dim(dim, len(shape))
    n_rows = shape[dim - 1]
    n_cols = int(np.prod(shape)) // n_rows if n_rows else 0
    if mat.shape != (n_rows, n_cols):
        raise TensorShapeError(
            f"matrix shape {mat.shape} incompatible with tensor shape {shape} "
            f"flattened along dimension {dim}"
        )
    perm = _cyclic_perm(dim, len(shape))
    permuted_shape = tuple(shape[p] for p in perm)
    arr = mat.reshape(permuted_shape, order="F")
    return np.transpose(arr, np.argsort(perm))


def mode_product(t, mat, dim: int) -> np.ndarray:
    """Multiply a tensor along one mode: contract ``mat``'s columns with it.

    The result replaces the size of mode ``dim`` by ``mat.shape[0]``; it is
    the tensor whose mode-``dim`` flattening equals ``mat @ flatten(t, dim)``.
    """
    arr = as_tensor(t)
    dim = check_dim(dim, arr.ndim)
    m = as_tensor(mat, name="matrix")
    if m.ndim != 2:
        raise TensorShapeError(f"mode factor must be a matrix, got order {m.ndim}")
    if m.shape[1] != arr.shape[dim - 1]:
        raise TensorShapeError(
            f"matrix with {m.shape[1]} columns cannot act on dimension {dim} "
            f"of size {arr.shape[dim - 1]}"
        )
    out = np.tensordot(m, arr, axes=(1, dim - 1))
    return np.moveaxis(out, 0, dim - 1)


def cp_compose(factor_matrices) -> np.ndarray:
    """Sum of rank-one outer products from per-dimension loading matrices.

    ``factor_matrices[n]`` has shape ``(N_{n+1}, L)``; component ``l`` of the
    result is the outer product of the ``l``-th columns, and the output is the
    sum over all ``L`` components.
    """
    mats = [as_tensor(m, name=f"factor matrix {i + 1}") for i, m in enumerate(factor_matrices)]
    if not mats:
        raise TensorShapeError("need at least one factor matrix")
    for i, m in enumerate(mats):
        if m.ndim != 2:
            raise TensorShapeError(f"factor matrix {i + 1} must be 2-D, got {m.ndim}-D")
    widths = {m.shape[1] for m in mats}
    if len(widths) != 1:
        raise TensorShapeError(f"factor matrices disagree on component count: {sorted(widths)}")
    letters = "abcdefghijklmnopqrstuvw"
    if len(mats) > len(letters):
        raise TensorShapeError("too many dimensions for cp_compose")
    spec = ",".join(f"{letters[i]}z" for i in range(len(mats)))
    out_spec = "".join(letters[: len(mats)])
    return np.einsum(f"{spec}->{out_spec}", *mats)


@dataclass
class TruncatedSvd:
    """Leading singular triplets of a matrix, plus the discarded tail.

    ``u`` is ``(rows, k)``, ``s`` the leading singular values (descending,
    exact zeros where the raw values fall below ``1e-12 * s[0]``), ``v`` is
    ``(cols, k)`` so ``u @ diag(s) @ v.T`` is the rank-``k`` approximation.
    ``tail`` holds the discarded singular values, making the approximation
    error ``sqrt(sum(tail**2))`` available without a second decomposition.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    tail: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def residual_norm_sq(self) -> float:
        return float(np.sum(self.tail**2))

    def compose(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def _clean_singular_values(s: np.ndarray) -> np.ndarray:
    if s.size:
        s = np.where(s < SVD_ZERO_RTOL * s[0], 0.0, s)
    return s


def truncated_svd(m, k: int) -> TruncatedSvd:
    """Rank-``k`` truncated SVD (best approximation in Frobenius norm)."""
    mat = as_tensor(m, name="matrix")
    if mat.ndim != 2:
        raise TensorShapeError(f"expected a matrix, got order-{mat.ndim} array")
    max_rank = min(mat.shape)
    if not 0 <= k <= max_rank:
        raise RankError(f"rank {k} out of range [0, {max_rank}] for shape {mat.shape}")
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    s = _clean_singular_values(s)
    return TruncatedSvd(u=u[:, :k], s=s[:k], v=vh[:k].T, tail=s[k:])


def _leading_left_vectors(mat: np.ndarray, k: int) -> np.ndarray:
    u, s, _ = np.linalg.svd(mat, full_matrices=False)
    return u[:, :k]


@dataclass
class Hosvd:
    """Higher-order SVD: orthonormal mode bases plus the projected core."""

    core: np.ndarray
    bases: list[np.ndarray]
    ranks: tuple[int, ...]

    def compose(self) -> np.ndarray:
        out = self.core
        for i, basis in enumerate(self.bases):
            out = mode_product(out, basis, i + 1)
        return out


def _check_ranks(ranks, shape) -> tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(shape):
        raise RankError(f"{len(ranks)} ranks given for an order-{len(shape)} tensor")
    for r, n in zip(ranks, shape):
        if not 0 <= r <= n:
            raise RankError(f"rank {r} out of range [0, {n}]")
    return ranks


def hosvd(t, ranks) -> Hosvd:
    """Higher-order SVD truncated to the given multilinear ranks.

    Each mode basis is the leading left singular vectors of that mode's
    flattening of the *original* tensor; the core is the tensor multiplied by
    all the transposed bases.
    """
    arr = as_tensor(t)
    ranks = _check_ranks(ranks, arr.shape)
    bases = [_leading_left_vectors(flatten(arr, n + 1), r) for n, r in enumerate(ranks)]
    core = arr
    for n, basis in enumerate(bases):
        core = mode_product(core, basis.T, n + 1)
    return Hosvd(core=core, bases=bases, ranks=ranks)


def hosvd_truncate(t, ranks) -> np.ndarray:
    """Multilinear projection of ``t`` onto its leading HOSVD subspaces.

    Equivalent to composing :func:`hosvd`; any zero rank yields the zero
    tensor.  This is an orthogonal projection in vec space, a fact the
    orthogonalized estimators rely on.
    """
    arr = as_tensor(t)
    ranks = _check_ranks(ranks, arr.shape)
    if min(ranks) == 0:
        return np.zeros_like(arr)
    out = arr
    for n, r in enumerate(ranks):
        if r == arr.shape[n]:
            continue  # projection onto a full basis is the identity
        basis = _leading_left_vectors(flatten(arr, n + 1), r)
        out = mode_product(out, basis @ basis.T, n + 1)
    return out


@dataclass
class MultilinearRank:
    """Per-dimension ranks of the mode flattenings, with their spectra."""

    ranks: tuple[int, ...]
    spectra: list[np.ndarray]


def multilinear_rank(t, rel_tol: float = 1e-8) -> MultilinearRank:
    """Numerical rank of every mode flattening.

    A singular value counts toward the rank when it exceeds ``rel_tol`` times
    the largest singular value of the same flattening; an all-zero flattening
    has rank 0.
    """
    arr = as_tensor(t)
    ranks, spectra = [], []
    for n in range(1, arr.ndim + 1):
        s = np.linalg.svd(flatten(arr, n), compute_uv=False)
        spectra.append(s)
        top = s[0] if s.size else 0.0
        ranks.append(0 if top == 0.0 else int(np.sum(s > rel_tol * top)))
    return MultilinearRank(ranks=tuple(ranks), spectra=spectra)
