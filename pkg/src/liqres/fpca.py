"""Functional principal components and concurrent functional regression.

Works on collections of :class:`~liqres.fda.FunctionalCurve` sharing one
basis. The covariance eigenproblem is solved exactly in coefficient space
through the basis Gram matrix, so no evaluation grid is involved; the
concurrent regression is fit by penalized least squares on a quadrature
grid over the common domain.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors
from .fda import (BsplineBasis, FunctionalCurve, basis_integrals, eval_basis,
                  gram_matrix, penalty_matrix)

DEFAULT_N_COMPONENTS = 3
DEFAULT_BETA_LAMBDA = 1e-2
DEFAULT_GRID_POINTS = 101


def _common_basis(curves) -> BsplineBasis:
    basis = curves[0].basis
    for c in curves[1:]:
        if c.basis != basis:
            raise errors.SharedBasisViolation(
                "all curves must share one basis")
    return basis


def _coefficient_matrix(curves) -> np.ndarray:
    return np.vstack([c.coefficients for c in curves])


def _matrix_sqrt(W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root of an SPD matrix and its inverse."""
    vals, vecs = np.linalg.eigh(W)
    if vals[0] <= 0:
        raise np.linalg.LinAlgError("Gram matrix not positive definite")
    root = np.sqrt(vals)
    return vecs @ np.diag(root) @ vecs.T, vecs @ np.diag(1.0 / root) @ vecs.T


@dataclass
class FpcaResult:
    """Mean curve, leading eigenfunctions and per-curve scores."""

    mean: FunctionalCurve
    eigenfunctions: list[FunctionalCurve]
    eigenvalues: np.ndarray
    scores: np.ndarray
    total_variance: float

    @property
    def n_components(self) -> int:
        return len(self.eigenfunctions)

    def explained_fraction(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / self.total_variance

    def to_json(self) -> dict:
        return {
            "mean": self.mean.to_json(),
            "eigenfunctions": [f.to_json() for f in self.eigenfunctions],
            "eigenvalues": self.eigenvalues.tolist(),
            "scores": self.scores.tolist(),
            "total_variance": self.total_variance,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FpcaResult":
        return cls(mean=FunctionalCurve.from_json(doc["mean"]),
                   eigenfunctions=[FunctionalCurve.from_json(d)
                                   for d in doc["eigenfunctions"]],
                   eigenvalues=np.asarray(doc["eigenvalues"], dtype=float),
                   scores=np.asarray(doc["scores"], dtype=float),
                   total_variance=float(doc["total_variance"]))


def write_fpca(path: str | Path, result: FpcaResult) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_fpca(path: str | Path) -> FpcaResult:
    with open(path) as fh:
        return FpcaResult.from_json(json.load(fh))


def fpca(curves, n_components: int = DEFAULT_N_COMPONENTS) -> FpcaResult:
    """Functional PCA of curves sharing one B-spline basis.

    With coefficient rows ``c_i`` and Gram matrix ``W``, the covariance
    operator eigenproblem reduces to the symmetric matrix problem
    ``W^{1/2} S W^{1/2} g = rho g`` where ``S`` is the sample covariance of
    the coefficients; eigenfunction coefficients are ``W^{-1/2} g`` and the
    score of curve i on component k is the inner product ``<x_i - mean,
    xi_k>``. Eigenfunctions are orthonormal in the function inner product
    and signed so each integrates to a non-negative value.
    """
    curves = list(curves)
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if len(curves) < n_components + 1:
        raise errors.InsufficientCurves(
            f"need at least {n_components + 1} curves, got {len(curves)}")
    basis = _common_basis(curves)
    C = _coefficient_matrix(curves)
    n = len(curves)
    cbar = C.mean(axis=0)
    Cc = C - cbar
    W = gram_matrix(basis)
    Wh, Whinv = _matrix_sqrt(W)
    S = (Cc.T @ Cc) / (n - 1)
    A = Wh @ S @ Wh
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    total = float(np.sum(np.clip(vals, 0.0, None)))
    if vals[0] <= 1e-12 * max(1.0, total):
        warnings.warn("curve collection has (numerically) no variance",
                      errors.DegenerateEigenstructure, stacklevel=2)

    ints = basis_integrals(basis)
    funcs = []
    coefs = np.empty((n_components, basis.n_basis))
    for k in range(n_components):
        g = Whinv @ vecs[:, k]
        s = float(ints @ g)
        if s < -1e-12 or (abs(s) <= 1e-12 and g[np.argmax(np.abs(g))] < 0):
            g = -g
        coefs[k] = g
        funcs.append(FunctionalCurve(basis=basis, coefficients=g,
                                     metadata={"component": k + 1}))
    scores = Cc @ W @ coefs.T
    mean = FunctionalCurve(basis=basis, coefficients=cbar,
                           metadata={"kind": "mean"})
    return FpcaResult(mean=mean, eigenfunctions=funcs,
                      eigenvalues=np.clip(vals[:n_components], 0.0, None),
                      scores=scores, total_variance=total)


def reconstruct(result: FpcaResult, scores_row: np.ndarray) -> FunctionalCurve:
    """Curve implied by the mean plus scored eigenfunctions."""
    coef = result.mean.coefficients.copy()
    for k, f in enumerate(result.eigenfunctions):
        coef = coef + scores_row[k] * f.coefficients
    return FunctionalCurve(basis=result.mean.basis, coefficients=coef)


def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    w = np.zeros_like(grid)
    d = np.diff(grid)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def default_beta_basis(domain: tuple[float, float] = (1.0, 9.0)) -> BsplineBasis:
    """Cubic basis with five functions for coefficient curves."""
    return BsplineBasis.with_n_basis(5, order=4, domain=domain)


@dataclass
class ConcurrentFit:
    """Pointwise functional regression of responses on covariate curves.

    Model: ``x_t(u) = beta_0(u) + sum_j beta_j(u) z_{t,j}(u) + eps``; the
    intercept is optional (off by default, appropriate when responses are
    centered reconstructions). ``r2`` holds the commonality function
    ``SS_reg / (SS_reg + SS_res)`` on ``grid``.
    """

    beta: list[FunctionalCurve]
    intercept: FunctionalCurve | None
    grid: np.ndarray
    r2: np.ndarray
    ss_reg: np.ndarray
    ss_res: np.ndarray
    r2_classic: np.ndarray
    lambda_beta: float
    n_curves: int
    metadata: dict = field(default_factory=dict)

    def mean_r2(self) -> float:
        return float(np.mean(self.r2))

    def to_json(self) -> dict:
        return {
            "beta": [b.to_json() for b in self.beta],
            "intercept": None if self.intercept is None else self.intercept.to_json(),
            "grid": self.grid.tolist(),
            "r2": self.r2.tolist(),
            "ss_reg": self.ss_reg.tolist(),
            "ss_res": self.ss_res.tolist(),
            "r2_classic": self.r2_classic.tolist(),
            "lambda_beta": self.lambda_beta,
            "n_curves": self.n_curves,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ConcurrentFit":
        inter = doc.get("intercept")
        return cls(beta=[FunctionalCurve.from_json(d) for d in doc["beta"]],
                   intercept=None if inter is None else FunctionalCurve.from_json(inter),
                   grid=np.asarray(doc["grid"], dtype=float),
                   r2=np.asarray(doc["r2"], dtype=float),
                   ss_reg=np.asarray(doc["ss_reg"], dtype=float),
                   ss_res=np.asarray(doc["ss_res"], dtype=float),
                   r2_classic=np.asarray(doc["r2_classic"], dtype=float),
                   lambda_beta=float(doc["lambda_beta"]),
                   n_curves=int(doc["n_curves"]),
                   metadata=doc.get("metadata", {}))


def write_concurrent(path: str | Path, fit: ConcurrentFit) -> None:
    with open(path, "w") as fh:
        json.dump(fit.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_concurrent(path: str | Path) -> ConcurrentFit:
    with open(path) as fh:
        return ConcurrentFit.from_json(json.load(fh))


def concurrent_regress(responses, covariates, lambda_beta: float = DEFAULT_BETA_LAMBDA,
                       beta_basis: BsplineBasis | None = None,
                       grid_points: int = DEFAULT_GRID_POINTS,
                       include_intercept: bool = False,
                       metadata: dict | None = None) -> ConcurrentFit:
    """Fit ``x_t(u) = sum_j beta_j(u) z_{t,j}(u) + eps`` over curves.

    ``responses`` is a length-T curve list; ``covariates`` is T lists of q
    curves each. Coefficient functions live in ``beta_basis`` (five cubic
    B-splines by default) and are estimated by normal equations accumulated
    on a trapezoid grid, with a curvature penalty ``lambda_beta`` on each
    beta block. Requires T >= q + 1; more curves (T >= 6, say) give a
    usably conditioned fit.
    """
    responses = list(responses)
    covariates = [list(z) for z in covariates]
    T = len(responses)
    if T != len(covariates):
        raise ValueError("responses and covariates must have equal length")
    if T == 0:
        raise errors.InsufficientCurves("no curves")
    q = len(covariates[0])
    if any(len(z) != q for z in covariates):
        raise ValueError("ragged covariate lists")
    if q < 1:
        raise ValueError("need at least one covariate")
    if T < q + 1:
        raise errors.InsufficientCurves(
            f"need at least {q + 1} response curves for {q} covariates, got {T}")
    domain_basis = _common_basis(responses + [c for z in covariates for c in z])
    if beta_basis is None:
        beta_basis = default_beta_basis(domain_basis.domain)
    if beta_basis.domain != domain_basis.domain:
        raise errors.SharedBasisViolation(
            "coefficient basis domain must match the curves")
    if grid_points < 2 * beta_basis.n_basis:
        raise ValueError("grid too coarse for the coefficient basis")
    lo, hi = domain_basis.domain
    grid = np.linspace(lo, hi, grid_points)
    w = _trapezoid_weights(grid)
    theta = eval_basis(beta_basis, grid)            # (G, p)
    p = beta_basis.n_basis

    X = np.vstack([r(grid) for r in responses])     # (T, G)
    Z = np.empty((T, q, len(grid)))
    for t in range(T):
        for j in range(q):
            Z[t, j] = covariates[t][j](grid)

    # design rows: for day t and grid point g, the beta_j block is
    # z_{t,j}(u_g) * theta(u_g); an optional trailing 1 carries beta_0.
    ncol = q * p + (1 if include_intercept else 0)
    B = np.empty((T, len(grid), ncol))
    for j in range(q):
        B[:, :, j * p:(j + 1) * p] = Z[:, j, :, None] * theta[None, :, :]
    if include_intercept:
        B[:, :, -1] = 1.0

    P = np.zeros((ncol, ncol))
    Rb = penalty_matrix(beta_basis)
    for j in range(q):
        P[j * p:(j + 1) * p, j * p:(j + 1) * p] = Rb

    M0 = np.einsum("tgi,tgj,g->ij", B, B, w, optimize=True)
    rhs = np.einsum("tgi,tg,g->i", B, X, w, optimize=True)

    lam = max(lambda_beta, 0.0)
    coef = None
    for attempt in range(6):
        A = M0 + lam * P
        try:
            if 1.0 / np.linalg.cond(A) < 1e-13:
                raise np.linalg.LinAlgError
            coef = np.linalg.solve(A, rhs)
            break
        except np.linalg.LinAlgError:
            warnings.warn(
                f"singular concurrent normal equations at lambda={lam:g}; increasing",
                errors.SingularNormalEquations, stacklevel=2)
            lam = max(lam * 10.0, 1e-8)
    if coef is None:
        A = M0 + lam * P + 1e-10 * np.eye(ncol)
        coef = np.linalg.solve(A, rhs)

    fitted = np.einsum("tgi,i->tg", B, coef, optimize=True)
    mu = X.mean(axis=0)
    ss_res = np.sum((X - fitted) ** 2, axis=0)
    ss_reg = np.sum((fitted - mu) ** 2, axis=0)
    ss_tot = np.sum((X - mu) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(ss_reg + ss_res > 0, ss_reg / (ss_reg + ss_res), 0.0)
        r2_classic = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, 0.0)

    beta_curves = [FunctionalCurve(basis=beta_basis,
                                   coefficients=coef[j * p:(j + 1) * p],
                                   metadata={"covariate": j + 1})
                   for j in range(q)]
    intercept = None
    if include_intercept:
        const_basis = BsplineBasis(order=1, domain=domain_basis.domain,
                                   interior_knots=())
        intercept = FunctionalCurve(basis=const_basis,
                                    coefficients=np.array([coef[-1]]),
                                    metadata={"covariate": 0})
    return ConcurrentFit(beta=beta_curves, intercept=intercept, grid=grid,
                         r2=r2, ss_reg=ss_reg, ss_res=ss_res,
                         r2_classic=r2_classic, lambda_beta=lam, n_curves=T,
                         metadata=metadata or {})


def loo_r2(responses, covariates, **kwargs) -> np.ndarray:
    """Leave-one-curve-out commonality: refit T times, score the held-out day.

    Returns the predictive skill score 1 - SSres/SStot on the fit grid,
    clipped below at zero, with SStot taken about the full-sample mean
    curve. Unlike the in-sample ``r2`` (where SStot = SSreg + SSres holds
    by the OLS identity), held-out predictions of structureless data have
    error at least as large as the mean benchmark, so skill sits at zero
    instead of being inflated by prediction variance. Slower than the
    in-sample fit by a factor of T.
    """
    responses = list(responses)
    covariates = [list(z) for z in covariates]
    T = len(responses)
    q = len(covariates[0]) if covariates else 0
    if T < q + 2:
        raise errors.InsufficientCurves(
            "leave-one-out needs one more curve than the plain fit")
    full = concurrent_regress(responses, covariates, **kwargs)
    grid = full.grid
    X = np.vstack([r(grid) for r in responses])
    mu = X.mean(axis=0)
    ss_res = np.zeros_like(grid)
    ss_tot = np.sum((X - mu) ** 2, axis=0)
    for t in range(T):
        keep = [i for i in range(T) if i != t]
        fit_t = concurrent_regress([responses[i] for i in keep],
                                   [covariates[i] for i in keep], **kwargs)
        pred = np.zeros_like(grid)
        for j, b in enumerate(fit_t.beta):
            pred += b(grid) * covariates[t][j](grid)
        if fit_t.intercept is not None:
            pred += fit_t.intercept.coefficients[0]
        ss_res += (X[t] - pred) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        skill = np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, 0.0)
    return np.clip(skill, 0.0, 1.0)
