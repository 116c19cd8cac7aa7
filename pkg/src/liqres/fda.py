"""B-spline bases, roughness-penalized smoothing and GCV diagnostics.

Discrete resilience profiles are represented as smooth functions
``x(u) = sum_k c_k phi_k(u)`` in a cubic B-spline basis over the decile
index domain. Coefficients come from penalized least squares with a
curvature penalty; the penalty matrix and basis Gram matrix are assembled
by per-interval Gauss-Legendre quadrature, which is exact for the
piecewise-polynomial integrands involved.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors

DEFAULT_DOMAIN = (1.0, 9.0)
DEFAULT_SEGMENTS = 4
DEFAULT_LAMBDA = 0.02


@dataclass(frozen=True)
class BsplineBasis:
    """Clamped B-spline basis of ``order`` on ``domain``.

    With ``L`` segments (``L - 1`` strictly increasing interior knots) the
    basis has ``order + L - 1`` functions. Order 4 (cubic) is the default.
    """

    order: int = 4
    domain: tuple[float, float] = DEFAULT_DOMAIN
    interior_knots: tuple[float, ...] = (3.0, 5.0, 7.0)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        lo, hi = self.domain
        if not lo < hi:
            raise ValueError("empty domain")
        ks = self.interior_knots
        if any(not lo < k < hi for k in ks) or any(a >= b for a, b in zip(ks, ks[1:])):
            raise ValueError("interior knots must be strictly increasing inside the domain")

    @classmethod
    def with_segments(cls, order: int = 4, domain: tuple[float, float] = DEFAULT_DOMAIN,
                      segments: int = DEFAULT_SEGMENTS) -> "BsplineBasis":
        """Equally spaced interior knots giving ``segments`` subintervals."""
        lo, hi = domain
        interior = tuple(np.linspace(lo, hi, segments + 1)[1:-1].tolist())
        return cls(order=order, domain=domain, interior_knots=interior)

    @classmethod
    def with_n_basis(cls, n_basis: int, order: int = 4,
                     domain: tuple[float, float] = DEFAULT_DOMAIN) -> "BsplineBasis":
        """Basis with exactly ``n_basis`` functions (equally spaced knots)."""
        segments = n_basis - order + 1
        if segments < 1:
            raise ValueError(f"n_basis must be >= order ({order})")
        return cls.with_segments(order=order, domain=domain, segments=segments)

    @property
    def n_basis(self) -> int:
        return self.order + len(self.interior_knots)

    def knot_vector(self) -> np.ndarray:
        lo, hi = self.domain
        return np.concatenate([
            np.full(self.order, lo), np.asarray(self.interior_knots, dtype=float),
            np.full(self.order, hi)])

    def breakpoints(self) -> np.ndarray:
        lo, hi = self.domain
        return np.concatenate([[lo], np.asarray(self.interior_knots, dtype=float), [hi]])

    def to_json(self) -> dict:
        return {"order": self.order, "range": list(self.domain),
                "knots": list(self.interior_knots)}

    @classmethod
    def from_json(cls, doc: dict) -> "BsplineBasis":
        return cls(order=int(doc["order"]), domain=tuple(doc["range"]),
                   interior_knots=tuple(doc["knots"]))


def _find_span(knots: np.ndarray, degree: int, n_basis: int, u: float) -> int:
    """Index j with knots[j] <= u < knots[j+1], clamped to valid spans."""
    j = int(np.searchsorted(knots, u, side="right")) - 1
    return min(max(j, degree), n_basis - 1)


def _basis_derivs(knots: np.ndarray, span: int, u: float, degree: int,
                  n_der: int) -> np.ndarray:
    """Nonzero basis functions and derivatives at one point.

    Returns ``ders[k, r]``, the k-th derivative of basis function
    ``span - degree + r`` at ``u`` (the classic knot-difference triangle
    algorithm).
    """
    ndu = np.zeros((degree + 1, degree + 1))
    ndu[0, 0] = 1.0
    left = np.zeros(degree + 1)
    right = np.zeros(degree + 1)
    for r in range(1, degree + 1):
        left[r] = u - knots[span + 1 - r]
        right[r] = knots[span + r] - u
        saved = 0.0
        for k in range(r):
            ndu[r, k] = right[k + 1] + left[r - k]
            temp = ndu[k, r - 1] / ndu[r, k]
            ndu[k, r] = saved + right[k + 1] * temp
            saved = left[r - k] * temp
        ndu[r, r] = saved

    ders = np.zeros((n_der + 1, degree + 1))
    ders[0, :] = ndu[:, degree]
    a = np.zeros((2, degree + 1))
    for r in range(degree + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, n_der + 1):
            d = 0.0
            rk = r - k
            pk = degree - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else degree - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    factor = float(degree)
    for k in range(1, n_der + 1):
        ders[k, :] *= factor
        factor *= degree - k
    return ders


def eval_basis(basis: BsplineBasis, u, deriv: int = 0) -> np.ndarray:
    """Matrix of basis (or derivative) values, one row per evaluation point.

    Rows of the value matrix are non-negative and sum to one; at most
    ``order`` entries per row are nonzero. Points outside the domain raise
    :class:`~liqres.errors.OutOfRange`.
    """
    pts = np.atleast_1d(np.asarray(u, dtype=float))
    lo, hi = basis.domain
    tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    if np.any(pts < lo - tol) or np.any(pts > hi + tol):
        raise errors.OutOfRange(f"points outside [{lo}, {hi}]")
    pts = np.clip(pts, lo, hi)
    knots = basis.knot_vector()
    degree = basis.order - 1
    K = basis.n_basis
    if deriv > degree:
        return np.zeros((len(pts), K))
    out = np.zeros((len(pts), K))
    for row, x in enumerate(pts):
        span = _find_span(knots, degree, K, x)
        ders = _basis_derivs(knots, span, x, degree, deriv)
        out[row, span - degree:span + 1] = ders[deriv]
    return out


def _gauss_per_interval(basis: BsplineBasis, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights tiled over the knot spans."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    brk = basis.breakpoints()
    nodes = []
    weights = []
    for a, b in zip(brk[:-1], brk[1:]):
        half = 0.5 * (b - a)
        nodes.append(half * x + 0.5 * (a + b))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


def gram_matrix(basis: BsplineBasis) -> np.ndarray:
    """Exact inner-product matrix ``integral phi phi'`` of the basis."""
    nodes, w = _gauss_per_interval(basis, basis.order)
    phi = eval_basis(basis, nodes)
    return phi.T @ (w[:, None] * phi)


def basis_integrals(basis: BsplineBasis) -> np.ndarray:
    """Exact vector of ``integral phi_k du``."""
    nodes, w = _gauss_per_interval(basis, basis.order)
    return eval_basis(basis, nodes).T @ w


def penalty_matrix(basis: BsplineBasis) -> np.ndarray:
    """Curvature penalty ``R = integral D2 phi' D2 phi du``, exact.

    Second derivatives of order-m splines are piecewise polynomials of
    degree m-3, so ``max(2, m-2)`` Gauss nodes per span integrate every
    entry exactly. R is symmetric PSD and annihilates coefficient vectors
    of linear functions.
    """
    if basis.order < 3:
        raise ValueError("curvature penalty needs order >= 3")
    nodes, w = _gauss_per_interval(basis, max(2, basis.order - 2))
    d2 = eval_basis(basis, nodes, deriv=2)
    R = d2.T @ (w[:, None] * d2)
    return 0.5 * (R + R.T)


@dataclass
class FunctionalCurve:
    """A function represented by basis coefficients."""

    basis: BsplineBasis
    coefficients: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if len(self.coefficients) != self.basis.n_basis:
            raise ValueError("coefficient length does not match the basis")

    def __call__(self, u, deriv: int = 0):
        vals = eval_basis(self.basis, u, deriv=deriv) @ self.coefficients
        return float(vals[0]) if np.isscalar(u) else vals

    def to_json(self) -> dict:
        return {"basis": self.basis.to_json(),
                "coefficients": self.coefficients.tolist(),
                "metadata": self.metadata}

    @classmethod
    def from_json(cls, doc: dict) -> "FunctionalCurve":
        return cls(basis=BsplineBasis.from_json(doc["basis"]),
                   coefficients=np.asarray(doc["coefficients"], dtype=float),
                   metadata=doc.get("metadata", {}))


def write_curve(path: str | Path, curve: FunctionalCurve) -> None:
    with open(path, "w") as fh:
        json.dump(curve.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_curve(path: str | Path) -> FunctionalCurve:
    with open(path) as fh:
        return FunctionalCurve.from_json(json.load(fh))


def smooth_values(u, y, basis: BsplineBasis, lam: float = DEFAULT_LAMBDA,
                  metadata: dict | None = None) -> FunctionalCurve:
    """Penalized least-squares fit of points ``(u, y)`` in the basis.

    Solves ``(Phi'Phi + lam R) c = Phi'y``; the result minimizes squared
    error plus ``lam`` times the integrated squared second derivative.
    A singular system gets its diagonal regularized by 1e-10 with a warning.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    phi = eval_basis(basis, u)
    A = phi.T @ phi
    if lam > 0:
        A = A + lam * penalty_matrix(basis)
    rhs = phi.T @ y
    try:
        if 1.0 / np.linalg.cond(A) < 1e-14:
            raise np.linalg.LinAlgError("ill-conditioned")
        coef = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        warnings.warn("singular smoothing system; diagonal regularized",
                      errors.SingularSystem, stacklevel=2)
        coef = np.linalg.solve(A + 1e-10 * np.eye(len(A)), rhs)
    return FunctionalCurve(basis=basis, coefficients=coef,
                           metadata=metadata or {})


def smooth_lrp(points, basis: BsplineBasis | None = None,
               lam: float = DEFAULT_LAMBDA,
               metadata: dict | None = None) -> FunctionalCurve:
    """Smooth resilience-profile points over the decile-index domain 1..9.

    Profiles are parameterized by decile rank rather than raw threshold so
    curves are commensurable across assets with different measure scales.
    """
    if basis is None:
        basis = BsplineBasis.with_segments()
    return smooth_values(points.decile_index, points.values, basis, lam,
                         metadata=metadata)


@dataclass(slots=True)
class GcvResult:
    lambdas: np.ndarray
    scores: np.ndarray
    dfs: np.ndarray
    best_lambda: float

    def argmin(self) -> int:
        return int(np.argmin(self.scores))


def gcv(u, y, basis: BsplineBasis, lambda_grid) -> GcvResult:
    """Generalized cross-validation scores over a smoothing-parameter grid.

    ``GCV(lam) = n SSE / (n - df)^2`` with ``df`` the trace of the smoother
    hat matrix. A vanishing denominator (saturated fit) reports +inf.
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    grid = np.asarray(list(lambda_grid), dtype=float)
    if grid.size == 0 or np.any(grid < 0):
        raise ValueError("lambda grid must be non-empty and non-negative")
    n = len(y)
    phi = eval_basis(basis, u)
    R = penalty_matrix(basis)
    ptp = phi.T @ phi
    pty = phi.T @ y
    scores = np.empty(len(grid))
    dfs = np.empty(len(grid))
    for i, lam in enumerate(grid):
        A = ptp + lam * R
        try:
            if 1.0 / np.linalg.cond(A) < 1e-14:
                raise np.linalg.LinAlgError
            coef = np.linalg.solve(A, pty)
            df = float(np.trace(np.linalg.solve(A, ptp)))
        except np.linalg.LinAlgError:
            warnings.warn("singular smoothing system; diagonal regularized",
                          errors.SingularSystem, stacklevel=2)
            A = A + 1e-10 * np.eye(len(A))
            coef = np.linalg.solve(A, pty)
            df = float(np.trace(np.linalg.solve(A, ptp)))
        resid = y - phi @ coef
        sse = float(resid @ resid)
        denom = n - df
        dfs[i] = df
        scores[i] = math.inf if denom <= 1e-8 else n * sse / denom ** 2
    return GcvResult(lambdas=grid, scores=scores, dfs=dfs,
                     best_lambda=float(grid[int(np.argmin(scores))]))


def default_lambda_grid(n: int = 33) -> np.ndarray:
    """Log-spaced diagnostic grid from 1e-6 to 1e2."""
    return np.logspace(-6, 2, n)
