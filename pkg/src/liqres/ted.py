"""Threshold exceedance episodes and the per-threshold survival regression.

An episode opens at the first sample where the measure moves above the
threshold (toward less liquidity) and closes at the first later sample at
or below it. Episodes still open at session end (or at a gap in the
series) cannot be timed and are dropped; their count is reported.
Log durations are regressed on the book covariates under Gaussian noise,
which doubles as the accelerated-failure-time model for the durations
themselves. Evaluating the fitted linear predictor at reference covariates
for each decile threshold yields the pointwise resilience profile.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors
from .liquidity import COVARIATE_NAMES, CovariateVector, TedHistory, \
    covariates_from_features, history_covariates
from .lob import LiquiditySeries

N_THRESHOLDS = 9
DECILE_PROBS = np.arange(1, 10) / 10.0


@dataclass(slots=True)
class TedRecord:
    """One completed exceedance episode."""

    start_ms: int
    duration_ms: int
    threshold: float
    threshold_index: int = 0          # 1..9 for decile thresholds
    covariates: CovariateVector | None = None


@dataclass(slots=True)
class ExtractionResult:
    records: list[TedRecord]
    censored: int      # open episodes dropped at session end or data gaps


def extract_teds(series: LiquiditySeries, c: float,
                 threshold_index: int = 0) -> list[TedRecord]:
    """Extract maximal exceedance episodes of ``series`` above ``c``.

    Returns completed episodes only; see :func:`extract_teds_censored` for
    the dropped-count diagnostic. NaN samples break the series into
    independently scanned segments.
    """
    return extract_teds_censored(series, c, threshold_index).records


def extract_teds_censored(series: LiquiditySeries, c: float,
                          threshold_index: int = 0) -> ExtractionResult:
    if not math.isfinite(c):
        raise ValueError("threshold must be finite")
    times = series.times_ms
    values = series.values
    n = len(values)
    records: list[TedRecord] = []
    censored = 0
    start: int | None = None
    for i in range(n):
        v = values[i]
        if not (v == v):  # NaN: unobservable gap, censor any open episode
            if start is not None:
                censored += 1
                start = None
            continue
        if start is None:
            if v > c:
                start = i
        elif v <= c:
            records.append(TedRecord(
                start_ms=int(times[start]),
                duration_ms=int(times[i] - times[start]),
                threshold=float(c), threshold_index=threshold_index))
            start = None
    if start is not None:
        censored += 1
    return ExtractionResult(records=records, censored=censored)


def decile_thresholds(series: LiquiditySeries) -> np.ndarray:
    """Empirical 0.1..0.9 quantiles of the finite sample values.

    Uses linearly interpolated order statistics. Collapsed deciles (ties,
    common for tick-valued measures) are warned about and nudged apart by
    a sub-tick epsilon so downstream consumers see strictly increasing
    thresholds without changing any exceedance set.
    """
    v = series.finite_values()
    if len(np.unique(v)) < 2:
        raise errors.DegenerateDistribution(
            "need at least 2 distinct finite values for decile thresholds")
    q = np.quantile(v, DECILE_PROBS, method="linear")
    if np.any(np.diff(q) <= 0):
        warnings.warn("tied decile thresholds nudged apart",
                      errors.CollapsedThresholds, stacklevel=2)
        eps = 1e-9 * max(1.0, float(np.max(np.abs(q))))
        for j in range(1, len(q)):
            if q[j] <= q[j - 1]:
                q[j] = q[j - 1] + eps
    return q


# -- record assembly over a sampled series -----------------------------------


def build_records(series: LiquiditySeries, thresholds: np.ndarray,
                  features: np.ndarray | None = None) -> list[list[TedRecord]]:
    """Episodes with covariates for each threshold of one asset-day.

    ``features`` is the per-boundary book feature array captured during
    sampling; without it only the measure and history covariates are
    populated (book fields zero).
    """
    times = series.times_ms
    index_of = {int(t): i for i, t in enumerate(times)}
    per_threshold: list[list[TedRecord]] = []
    for j, c in enumerate(thresholds, start=1):
        records = extract_teds(series, float(c), threshold_index=j)
        history = TedHistory()
        for rec in records:
            i = index_of[rec.start_ms]
            row = features[i] if features is not None else (0, 0, 0, 0, 0, 0)
            rec.covariates = covariates_from_features(
                row, history, rec.start_ms, float(series.values[i]),
                session_open_ms=series.session_open_ms)
            history.add(rec.start_ms, rec.duration_ms)
        per_threshold.append(records)
    return per_threshold


# -- lognormal AFT fit --------------------------------------------------------


@dataclass(slots=True)
class SurvivalFit:
    """Least-squares fit of log duration on an intercept plus covariates.

    ``beta`` has one entry per design column (intercept first); columns
    dropped for collinearity keep a zero coefficient and are listed in
    ``dropped``. ``sigma`` is the maximum-likelihood scale (SSE/n);
    ``sigma_unbiased`` divides by the residual degrees of freedom.
    """

    threshold_index: int
    threshold: float
    beta: np.ndarray
    sigma: float
    n_obs: int
    loglik: float
    std_errors: np.ndarray | None = None
    sigma_unbiased: float = math.nan
    dropped: tuple[str, ...] = ()
    median_covariates: np.ndarray | None = None

    @property
    def n_params(self) -> int:
        return len(self.beta)


def _impute_missing(X: np.ndarray) -> np.ndarray:
    """Replace NaNs in each column with the column mean of observed values."""
    X = X.copy()
    for j in range(X.shape[1]):
        col = X[:, j]
        bad = ~np.isfinite(col)
        if bad.any():
            good = col[~bad]
            col[bad] = good.mean() if len(good) else 0.0
    return X


def fit_log_durations(durations_ms: np.ndarray, X: np.ndarray,
                      threshold: float = math.nan,
                      threshold_index: int = 0,
                      column_names: tuple[str, ...] | None = None) -> SurvivalFit:
    """Gaussian MLE of log durations on a design matrix (intercept added).

    Equivalent to ordinary least squares on ``log(duration)``; collinear
    columns are dropped with a warning and reported with zero coefficients.
    """
    durations = np.asarray(durations_ms, dtype=float)
    if np.any(durations <= 0):
        raise ValueError("durations must be positive")
    X = _impute_missing(np.asarray(X, dtype=float))
    n, p = X.shape
    if n < p + 1:
        raise errors.TooFewObservations(f"{n} observations for {p + 1} parameters")
    design = np.column_stack([np.ones(n), X])
    names = ("intercept",) + tuple(column_names or
                                   (f"x{j + 1}" for j in range(p)))

    keep = _independent_columns(design)
    dropped = tuple(names[j] for j in range(design.shape[1]) if j not in keep)
    if dropped:
        warnings.warn(f"dropped collinear columns: {', '.join(dropped)}",
                      errors.RankDeficientDesign, stacklevel=2)
    reduced = design[:, keep]
    k = reduced.shape[1]
    if n < k:
        raise errors.TooFewObservations(f"{n} observations for {k} parameters")

    y = np.log(durations)
    coef, *_ = np.linalg.lstsq(reduced, y, rcond=None)
    resid = y - reduced @ coef
    sse = float(resid @ resid)
    sigma2 = sse / n
    if n == k or sigma2 < 1e-24:
        warnings.warn("saturated fit: residual scale is zero",
                      errors.SaturatedFit, stacklevel=2)
    sigma = math.sqrt(max(sigma2, 0.0))
    # Gaussian log-likelihood of the log durations at the MLE
    if sigma2 > 0:
        loglik = -0.5 * n * (math.log(2 * math.pi * sigma2) + 1.0)
    else:
        loglik = math.inf

    beta = np.zeros(design.shape[1])
    beta[keep] = coef
    se = np.full(design.shape[1], math.nan)
    if n > k and sigma2 > 0:
        xtx_inv = np.linalg.inv(reduced.T @ reduced)
        se[keep] = np.sqrt(sse / (n - k) * np.diag(xtx_inv))
    sigma_unbiased = math.sqrt(sse / (n - k)) if n > k else math.nan
    return SurvivalFit(
        threshold_index=threshold_index, threshold=threshold, beta=beta,
        sigma=sigma, n_obs=n, loglik=loglik, std_errors=se,
        sigma_unbiased=sigma_unbiased, dropped=dropped,
        median_covariates=np.median(X, axis=0))


def _independent_columns(A: np.ndarray) -> list[int]:
    """Greedy maximal set of linearly independent columns (QR with pivoting)."""
    from scipy.linalg import qr
    _, r, piv = qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(A.shape) * np.finfo(float).eps * (diag[0] if len(diag) else 0.0)
    rank = int(np.sum(diag > tol)) if len(diag) else 0
    return sorted(piv[:rank].tolist())


def fit_lognormal_aft(records: list[TedRecord]) -> SurvivalFit:
    """Fit the duration regression for one threshold's records."""
    if not records:
        raise errors.TooFewObservations("no exceedance records")
    X = np.array([r.covariates.as_array() for r in records])
    durations = np.array([r.duration_ms for r in records], dtype=float)
    return fit_log_durations(
        durations, X, threshold=records[0].threshold,
        threshold_index=records[0].threshold_index,
        column_names=COVARIATE_NAMES)


# -- resilience profile points ------------------------------------------------


@dataclass(slots=True)
class LrpPoints:
    """Expected log duration at each decile threshold, at reference covariates."""

    thresholds: np.ndarray          # measure units, strictly increasing
    values: np.ndarray              # expected log duration (log ms)
    reference: str = "median"

    def __post_init__(self):
        if len(self.thresholds) != N_THRESHOLDS or len(self.values) != N_THRESHOLDS:
            raise ValueError(f"expected {N_THRESHOLDS} profile points")
        if np.any(np.diff(self.thresholds) <= 0):
            raise ValueError("thresholds must be strictly increasing")

    @property
    def decile_index(self) -> np.ndarray:
        """Domain used for the functional representation: 1..9."""
        return np.arange(1, N_THRESHOLDS + 1, dtype=float)


def lrp_points(fits: list[SurvivalFit],
               reference: np.ndarray | CovariateVector | None = None) -> LrpPoints:
    """Evaluate each threshold's linear predictor at reference covariates.

    The expected log duration under the fitted model is exactly the linear
    predictor. ``reference=None`` uses each fit's own median covariates.
    """
    if len(fits) != N_THRESHOLDS or any(f is None for f in fits):
        raise errors.MissingFit(
            f"need all {N_THRESHOLDS} per-threshold fits")
    fits = sorted(fits, key=lambda f: f.threshold_index)
    if isinstance(reference, CovariateVector):
        reference = reference.as_array()
    values = np.empty(N_THRESHOLDS)
    for j, fit in enumerate(fits):
        ref = fit.median_covariates if reference is None else np.asarray(reference, dtype=float)
        if ref is None or len(ref) != len(fit.beta) - 1:
            raise ValueError("reference covariates do not match the design")
        values[j] = fit.beta[0] + ref @ fit.beta[1:]
    thresholds = np.array([f.threshold for f in fits])
    return LrpPoints(thresholds=thresholds, values=values,
                     reference="median" if reference is None else "explicit")


# -- persistence ---------------------------------------------------------------


def write_records(path: str | Path, per_threshold: list[list[TedRecord]]) -> None:
    """CSV of all of one asset-day's records across thresholds."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("threshold_index", "threshold", "start_ms",
                         "duration_ms") + COVARIATE_NAMES)
        for records in per_threshold:
            for r in records:
                cov = r.covariates.as_array() if r.covariates else [math.nan] * 10
                writer.writerow((r.threshold_index, repr(float(r.threshold)),
                                 r.start_ms, r.duration_ms)
                                + tuple(repr(float(x)) for x in cov))


def fits_to_json(fits: list[SurvivalFit], points: LrpPoints | None,
                 meta: dict | None = None) -> dict:
    doc = {
        "fits": [
            {
                "threshold_index": f.threshold_index,
                "threshold": f.threshold,
                "beta": f.beta.tolist(),
                "sigma": f.sigma,
                "sigma_unbiased": f.sigma_unbiased,
                "n_obs": f.n_obs,
                "loglik": f.loglik,
                "std_errors": None if f.std_errors is None else f.std_errors.tolist(),
                "dropped": list(f.dropped),
                "median_covariates": None if f.median_covariates is None
                                     else f.median_covariates.tolist(),
            }
            for f in fits
        ],
        "metadata": meta or {},
    }
    if points is not None:
        doc["lrp"] = {
            "thresholds": points.thresholds.tolist(),
            "values": points.values.tolist(),
            "reference": points.reference,
        }
    return doc


def write_fits(path: str | Path, fits: list[SurvivalFit],
               points: LrpPoints | None, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(fits_to_json(fits, points, meta), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_lrp(path: str | Path) -> tuple[LrpPoints, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    lrp = doc["lrp"]
    points = LrpPoints(thresholds=np.asarray(lrp["thresholds"]),
                       values=np.asarray(lrp["values"]),
                       reference=lrp["reference"])
    return points, doc.get("metadata", {})
