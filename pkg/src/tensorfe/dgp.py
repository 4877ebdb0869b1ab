"""Simulation designs for the Monte-Carlo harness.

Both designs share the same skeleton: a CP-form interactive-effect component,
a regressor that co-moves with it through a lag-shifted copy of the factor
structure, and an error that is heteroskedastic conditional on the
regressor's idiosyncratic part and autocorrelated along every dimension
through a short moving-average window.

``growing``
    All factor loadings iid normal (two components by default); the regressor
    loads on both the contemporaneous and the lagged factor structure, with
    the lag weight set by ``rho``.  The effect component's strength grows
    with the panel, which is exactly the regime where naive within-type
    transforms stay biased.

``fixed``
    Dimension 1 has rank-one loadings (unit effect ``a_i`` times component
    effect ``b_l``) and as many components as dimension-1 units; the effect
    and lag components are rescaled to unit sample variance so signal and
    noise stay comparable at every panel size.

Randomness is fully determined by the supplied seed: draws happen in a fixed
order (per-dimension loadings with one presample row each, then the
idiosyncratic regressor part over the lag-extended grid, then the error
innovations, then the cross-section relabelings).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TensorShapeError
from .tensor_ops import cp_compose

DESIGNS = ("growing", "fixed")


@dataclass(frozen=True)
class DgpConfig:
    """Which design to draw from, at what size.

    ``n_components`` overrides the design's component count (default: 2 for
    ``growing``, the size of dimension 1 for ``fixed``).  ``rho`` scales the
    lagged factor term of the growing design's regressor and is ignored by
    the fixed design.  ``permute_cross_sections`` relabels the units of the
    first two dimensions after construction (jointly across all delivered
    tensors), hiding the cross-section correlation structure from
    adjacency-based variance estimators without changing any estimator's
    point distribution.
    """

    design: str = "growing"
    dims: tuple[int, ...] = (30, 30, 30)
    rho: float = 1.0
    n_components: int | None = None
    beta_true: float = 1.0
    permute_cross_sections: bool = True

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}; choose from {DESIGNS}")
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 2 or any(n < 2 for n in dims):
            raise TensorShapeError(f"need at least two dimensions of size >= 2, got {dims}")
        if self.design == "growing" and len(dims) != 3:
            raise TensorShapeError("the growing design is specified for 3-D panels only")
        if self.n_components is not None and self.n_components < 1:
            raise ValueError(f"n_components must be >= 1, got {self.n_components}")

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def resolved_components(self) -> int:
        if self.n_components is not None:
            return int(self.n_components)
        return 2 if self.design == "growing" else self.dims[0]


@dataclass
class DgpDraw:
    """One simulated panel: outcome, regressors, and the true components."""

    outcome: np.ndarray
    regressors: list[np.ndarray]
    effects: np.ndarray
    noise: np.ndarray
    beta_true: np.ndarray
    config: DgpConfig
    seed_entropy: tuple[int, ...] = field(default_factory=tuple)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.outcome.shape


def _rng_from(seed) -> tuple[np.random.Generator, tuple[int, ...]]:
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence([int(seed)])
    entropy = tuple(int(e) for e in np.atleast_1d(ss.entropy)) if ss.entropy is not None else ()
    return np.random.default_rng(ss), entropy


def _moving_average_error(rng: np.random.Generator, dims: tuple[int, ...]) -> np.ndarray:
    """Heteroskedastic, multi-dimensionally autocorrelated error.

    Innovations live on the lag-extended grid with standard deviation
    ``min(2, |idiosyncratic regressor part|)`` cell by cell (variance
    ``min(4, .^2)``); the error sums the innovations over every 0/1 lag
    combination, scaled by ``1/sqrt(2)``.

    Returns the interior idiosyncratic part alongside the error.
    """
    ext_shape = tuple(n + 1 for n in dims)
    idio_ext = rng.standard_normal(ext_shape)
    innovations = rng.standard_normal(ext_shape) * np.minimum(2.0, np.abs(idio_ext))
    err = np.zeros(dims)
    for shifts in itertools.product((0, 1), repeat=len(dims)):
        window = tuple(slice(1 - s, n + 1 - s) for s, n in zip(shifts, dims))
        err += innovations[window]
    err /= math.sqrt(2.0)
    interior = tuple(slice(1, None) for _ in dims)
    return idio_ext[interior], err


def _relabel_cross_sections(rng: np.random.Generator, tensors: list[np.ndarray]) -> list[np.ndarray]:
    """Jointly relabel the first two dimensions of every tensor.

    One uniform permutation per dimension, shared across tensors: the panel's
    content is unchanged (every estimator sees the same cells), but index
    adjacency no longer reveals which units are correlated — the
    "unknown cross-correlation structure" regime that lag-based variance
    estimators cannot exploit.
    """
    out = tensors
    for axis in (0, 1):
        perm = rng.permutation(out[0].shape[axis])
        out = [np.take(t, perm, axis=axis) for t in out]
    return out


def draw_growing(config: DgpConfig, seed=0) -> DgpDraw:
    """One draw from the growing design.

    Effects are a two-component (by default) CP tensor with iid normal
    loadings; the regressor is ``2 * effects - rho * lagged + idio`` where
    ``lagged`` replaces every loading column by the sum of itself and its
    one-step lag (each loading matrix carries one presample row).
    """
    if config.design != "growing":
        raise ValueError(f"config is for the {config.design!r} design")
    rng, entropy = _rng_from(seed)
    dims = config.dims
    n_comp = config.resolved_components

    loadings = [rng.standard_normal((n + 1, n_comp)) for n in dims]
    effects = cp_compose([m[1:] for m in loadings])
    lagged = cp_compose([m[1:] + m[:-1] for m in loadings])
    idio, err = _moving_average_error(rng, dims)
    x = 2.0 * effects - config.rho * lagged + idio
    y = config.beta_true * x + effects + err
    if config.permute_cross_sections:
        y, x, effects, err = _relabel_cross_sections(rng, [y, x, effects, err])
    return DgpDraw(
        outcome=y,
        regressors=[x],
        effects=effects,
        noise=err,
        beta_true=np.array([config.beta_true]),
        config=config,
        seed_entropy=entropy,
    )


def draw_fixed(config: DgpConfig, seed=0) -> DgpDraw:
    """One draw from the fixed design.

    Dimension 1's loading matrix is rank one (outer product of a unit effect
    and a component effect); the other dimensions' loadings are iid normal.
    Both the effect component and the lag-shifted component are rescaled to
    unit sample variance before entering the regressor, so the regressor
    decomposes into three equally-scaled parts: effects, lagged structure,
    and idiosyncratic noise.
    """
    if config.design != "fixed":
        raise ValueError(f"config is for the {config.design!r} design")
    rng, entropy = _rng_from(seed)
    dims = config.dims
    n_comp = config.resolved_components

    unit_effects = rng.standard_normal(dims[0] + 1)
    comp_effects = rng.standard_normal(n_comp)
    loadings = [np.outer(unit_effects, comp_effects)]
    loadings += [rng.standard_normal((n + 1, n_comp)) for n in dims[1:]]

    effects_raw = cp_compose([m[1:] for m in loadings])
    effects = effects_raw / np.std(effects_raw, ddof=1)
    lagged_raw = cp_compose([m[1:] + m[:-1] for m in loadings])
    lagged = lagged_raw / np.std(lagged_raw, ddof=1)
    idio, err = _moving_average_error(rng, dims)
    x = effects + lagged + idio
    y = config.beta_true * x + effects + err
    if config.permute_cross_sections:
        y, x, effects, err = _relabel_cross_sections(rng, [y, x, effects, err])
    return DgpDraw(
        outcome=y,
        regressors=[x],
        effects=effects,
        noise=err,
        beta_true=np.array([config.beta_true]),
        config=config,
        seed_entropy=entropy,
    )


def draw(config: DgpConfig, seed=0) -> DgpDraw:
    """Dispatch on ``config.design``."""
    return draw_growing(config, seed) if config.design == "growing" else draw_fixed(config, seed)
