"""Scalar liquidity commonality across assets.

Aligns per-asset liquidity series into a slice-by-asset panel, extracts a
small number of market factors (PCA on the correlation matrix, or a
projection-pursuit ICA with a log-cosh contrast) and measures how much of
each asset's variation the factors explain by per-asset regressions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import errors
from .lob import LiquiditySeries

DEFAULT_N_FACTORS = 3
PCA = "pca"
ICA = "ica"

# E[G(nu)] for G(x) = log cosh x and nu standard normal, by Gauss-Hermite
# quadrature; the constant in the negentropy approximation
# J(y) ~ (E[G(y)] - E[G(nu)])^2.
_GH_X, _GH_W = np.polynomial.hermite.hermgauss(96)
GAUSS_LOGCOSH = float(np.sum(_GH_W * np.log(np.cosh(math.sqrt(2.0) * _GH_X)))
                      / math.sqrt(math.pi))
del _GH_X, _GH_W


@dataclass
class CrossSection:
    """Aligned panel of liquidity values: one row per time slice, one
    column per asset. Rows with any missing value are dropped on build."""

    values: np.ndarray
    assets: tuple[str, ...]
    times_ms: np.ndarray
    dropped_slices: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.times_ms = np.asarray(self.times_ms, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("panel must be 2-d")
        if self.values.shape[1] != len(self.assets):
            raise ValueError("column count does not match asset names")
        if self.values.shape[0] != len(self.times_ms):
            raise ValueError("row count does not match time stamps")

    @property
    def n_slices(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_series(cls, series: dict[str, LiquiditySeries],
                    diff: bool = False) -> "CrossSection":
        """Align same-clock series into a panel, listwise-dropping NaN rows.

        With ``diff=True`` the panel holds first differences, the usual
        guard against common trends inflating comovement.
        """
        if not series:
            raise ValueError("no series given")
        assets = tuple(sorted(series))
        ref = series[assets[0]].times_ms
        cols = []
        for name in assets:
            s = series[name]
            if len(s.times_ms) != len(ref) or not np.array_equal(s.times_ms, ref):
                raise ValueError(f"series {name!r} is not on the common clock")
            cols.append(np.asarray(s.values, dtype=float))
        panel = np.column_stack(cols)
        times = np.asarray(ref, dtype=float)
        if diff:
            panel = np.diff(panel, axis=0)
            times = times[1:]
        keep = ~np.any(np.isnan(panel), axis=1)
        dropped = int(np.sum(~keep))
        return cls(values=panel[keep], assets=assets, times_ms=times[keep],
                   dropped_slices=dropped)


def _standardize(panel: np.ndarray, assets) -> tuple[np.ndarray, list[int]]:
    """Center/scale columns; returns kept column indices (constants dropped)."""
    mean = panel.mean(axis=0)
    sd = panel.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(mean), 1.0)
    keep = [j for j in range(panel.shape[1]) if sd[j] > 1e-12 * scale[j]]
    dropped = [assets[j] for j in range(panel.shape[1]) if j not in keep]
    if dropped:
        warnings.warn(f"constant columns dropped: {', '.join(dropped)}",
                      errors.ConstantColumn, stacklevel=3)
    if len(keep) < 2:
        raise errors.DegenerateDistribution(
            "fewer than two non-constant assets in the panel")
    Z = (panel[:, keep] - mean[keep]) / sd[keep]
    return Z, keep


@dataclass
class FactorSet:
    """Common factor series extracted from a panel."""

    method: str
    factors: np.ndarray              # (T, k) factor score series
    strength: np.ndarray             # eigenvalues (pca) or negentropies (ica)
    loadings: np.ndarray | None      # (n_kept, k) for pca, None for ica
    kept_assets: tuple[str, ...]

    @property
    def n_factors(self) -> int:
        return self.factors.shape[1]


def pca_factors(panel: CrossSection, n_factors: int = DEFAULT_N_FACTORS) -> FactorSet:
    """Leading principal-component score series of the standardized panel.

    Columns are standardized so the decomposition is of the correlation
    matrix; eigenvalues then sum to the number of (kept) assets. Component
    signs are fixed by requiring a non-negative loading sum.
    """
    if n_factors < 1:
        raise ValueError("n_factors must be >= 1")
    if panel.n_slices < n_factors + 1:
        raise errors.TooFewObservations(
            f"need more than {n_factors} aligned slices, got {panel.n_slices}")
    Z, keep = _standardize(panel.values, panel.assets)
    if len(keep) < n_factors + 1:
        raise errors.TooFewObservations(
            f"only {len(keep)} usable assets for {n_factors} factors")
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    eigvals = s ** 2 / (Z.shape[0] - 1)
    V = Vt.T[:, :n_factors]
    for k in range(n_factors):
        tot = V[:, k].sum()
        if tot < -1e-12 or (abs(tot) <= 1e-12 and V[np.argmax(np.abs(V[:, k])), k] < 0):
            V[:, k] = -V[:, k]
    scores = Z @ V
    return FactorSet(method=PCA, factors=scores, strength=eigvals[:n_factors],
                     loadings=V, kept_assets=tuple(panel.assets[j] for j in keep))


def _whiten(Z: np.ndarray) -> tuple[np.ndarray, int]:
    """Rotate/scale to unit-covariance coordinates, dropping null directions."""
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * s[0]))
    T = Z.shape[0]
    Wt = Z @ Vt.T[:, :rank] / s[:rank] * math.sqrt(T - 1)
    return Wt, rank


def _negentropy(source: np.ndarray) -> float:
    return float((np.mean(np.log(np.cosh(source))) - GAUSS_LOGCOSH) ** 2)


def ica_factors(panel: CrossSection, n_factors: int = DEFAULT_N_FACTORS,
                n_extract: int | None = None, seed: int = 0,
                max_iter: int = 500, tol: float = 1e-6, restarts: int = 5,
                degenerate_threshold: float = 1e-3) -> FactorSet:
    """Projection-pursuit factors: deflationary fixed-point ICA.

    After whitening, directions are extracted one at a time by the tanh
    fixed-point iteration (log-cosh contrast), each orthogonalized against
    the ones before it. More directions than requested are extracted
    (``min(8, rank)`` by default) and the ``n_factors`` with the highest
    approximate negentropy are returned, most non-Gaussian first. Sources
    have unit sample variance; signs make each source's skewness
    non-negative.
    """
    if n_factors < 1:
        raise ValueError("n_factors must be >= 1")
    if panel.n_slices < n_factors + 1:
        raise errors.TooFewObservations(
            f"need more than {n_factors} aligned slices, got {panel.n_slices}")
    Z, keep = _standardize(panel.values, panel.assets)
    if len(keep) < n_factors + 1:
        raise errors.TooFewObservations(
            f"only {len(keep)} usable assets for {n_factors} factors")
    Wt, rank = _whiten(Z)
    if rank < n_factors:
        raise errors.TooFewObservations(
            f"panel rank {rank} below requested {n_factors} factors")
    if n_extract is None:
        n_extract = min(8, rank)
    n_extract = min(max(n_extract, n_factors), rank)

    rng = np.random.default_rng(seed)
    basis = np.zeros((rank, n_extract))
    for comp in range(n_extract):
        converged = False
        endpoints = []
        for _ in range(restarts):
            w = rng.standard_normal(rank)
            w -= basis[:, :comp] @ (basis[:, :comp].T @ w)
            norm = np.linalg.norm(w)
            if norm < 1e-12:
                continue
            w /= norm
            for _ in range(max_iter):
                proj = Wt @ w
                g = np.tanh(proj)
                w_new = Wt.T @ g / len(proj) - np.mean(1.0 - g ** 2) * w
                w_new -= basis[:, :comp] @ (basis[:, :comp].T @ w_new)
                norm = np.linalg.norm(w_new)
                if norm < 1e-12:
                    break
                w_new /= norm
                done = abs(float(w_new @ w)) > 1.0 - tol
                w = w_new
                if done:
                    converged = True
                    break
            if converged:
                break
            endpoints.append(w)
        if not converged:
            # on an exactly Gaussian direction the fixed-point update is
            # pure sampling noise, so there is no direction to converge to;
            # keep the least-Gaussian endpoint (it ranks last anyway, the
            # final contrast check flags a fully degenerate panel). A
            # direction with real structure that still oscillates is a
            # genuine failure.
            scores = [_negentropy(Wt @ e) for e in endpoints]
            if not endpoints or max(scores) >= degenerate_threshold:
                raise errors.NonConvergence(
                    f"component {comp + 1} did not converge in {restarts} restarts")
            w = endpoints[int(np.argmax(scores))]
        basis[:, comp] = w

    sources = Wt @ basis
    ngs = np.array([_negentropy(sources[:, k]) for k in range(n_extract)])
    order = np.argsort(ngs)[::-1][:n_factors]
    sources = sources[:, order]
    ngs = ngs[order]
    for k in range(n_factors):
        skew = float(np.mean(sources[:, k] ** 3))
        if skew < -1e-12 or (abs(skew) <= 1e-12
                             and sources[np.argmax(np.abs(sources[:, k])), k] < 0):
            sources[:, k] = -sources[:, k]
    if ngs[0] < degenerate_threshold:
        warnings.warn(
            f"all extracted directions look nearly Gaussian (max negentropy "
            f"{ngs[0]:.2e}); factor ranking is weakly identified",
            errors.DegenerateContrast, stacklevel=2)
    return FactorSet(method=ICA, factors=sources, strength=ngs, loadings=None,
                     kept_assets=tuple(panel.assets[j] for j in keep))


@dataclass
class FactorRegression:
    """Per-asset OLS of liquidity on the common factors."""

    method: str
    assets: tuple[str, ...]
    r2: np.ndarray                 # per asset
    coefficients: np.ndarray       # (n_assets, n_factors)
    intercepts: np.ndarray
    factors: FactorSet = field(repr=False)

    def median_r2(self) -> float:
        return float(np.median(self.r2))

    def r2_by_asset(self) -> dict[str, float]:
        return {a: float(v) for a, v in zip(self.assets, self.r2)}


def factor_regression(panel: CrossSection, factors: FactorSet) -> FactorRegression:
    """Regress each asset's series on the factor series (with intercept).

    R-squared is the usual centered one; an asset with (numerically) no
    variance gets 0.
    """
    T, n = panel.values.shape
    F = factors.factors
    if F.shape[0] != T:
        raise ValueError("factor series length does not match the panel")
    X = np.column_stack([np.ones(T), F])
    r2 = np.empty(n)
    coefs = np.empty((n, F.shape[1]))
    icpts = np.empty(n)
    for j in range(n):
        y = panel.values[:, j]
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ beta
        sst = float(np.sum((y - y.mean()) ** 2))
        sse = float(resid @ resid)
        r2[j] = 1.0 - sse / sst if sst > 0 else 0.0
        icpts[j] = beta[0]
        coefs[j] = beta[1:]
    return FactorRegression(method=factors.method, assets=panel.assets,
                            r2=r2, coefficients=coefs, intercepts=icpts,
                            factors=factors)


def commonality(panel: CrossSection, method: str = PCA,
                n_factors: int = DEFAULT_N_FACTORS, **ica_kwargs) -> FactorRegression:
    """Factor extraction plus per-asset regressions in one call."""
    if method == PCA:
        fs = pca_factors(panel, n_factors=n_factors)
    elif method == ICA:
        fs = ica_factors(panel, n_factors=n_factors, **ica_kwargs)
    else:
        raise ValueError(f"unknown method {method!r}")
    return factor_regression(panel, fs)
