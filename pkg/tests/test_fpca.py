"""Functional PCA and concurrent regression tests against dense-grid oracles."""

import math

import numpy as np
import pytest

import liqres.fpca as fp
from liqres import errors
from liqres.fda import (BsplineBasis, FunctionalCurve, basis_integrals,
                        eval_basis, gram_matrix, smooth_values)

from .oracles import fpca_dense, ols_naive, r2_naive

BASIS = BsplineBasis.with_segments()


def curve(coefs, basis=BASIS, **meta):
    return FunctionalCurve(basis=basis, coefficients=np.asarray(coefs, dtype=float),
                           metadata=meta)


def unit_curve(coefs, basis=BASIS):
    """Normalize coefficients so the curve has unit L2 norm on the domain."""
    W = gram_matrix(basis)
    c = np.asarray(coefs, dtype=float)
    return curve(c / math.sqrt(c @ W @ c), basis)


def inner(f, g):
    W = gram_matrix(f.basis)
    return float(f.coefficients @ W @ g.coefficients)


def random_curves(rng, n, basis=BASIS, scale=1.0):
    return [curve(rng.normal(0, scale, size=basis.n_basis), basis)
            for _ in range(n)]


# -- fpca -----------------------------------------------------------------------


def test_rank_one_family(rng):
    xi = unit_curve([0.2, -1.0, 0.5, 0.3, -0.4, 1.0, 0.1])
    mu = curve(rng.normal(size=7))
    a = rng.normal(0, 2.0, size=30)
    curves = [curve(mu.coefficients + ai * xi.coefficients) for ai in a]
    res = fp.fpca(curves, n_components=3)
    assert abs(inner(res.eigenfunctions[0], xi)) > 1 - 1e-6
    assert res.eigenvalues[0] == pytest.approx(np.var(a, ddof=1), rel=1e-8)
    assert res.eigenvalues[1] == pytest.approx(0.0, abs=1e-10)
    # scores reproduce the loadings up to the shared sign
    sign = math.copysign(1.0, inner(res.eigenfunctions[0], xi))
    np.testing.assert_allclose(res.scores[:, 0], sign * (a - a.mean()), atol=1e-8)


def test_identical_curves_degenerate(rng):
    c = curve(rng.normal(size=7))
    curves = [curve(c.coefficients) for _ in range(8)]
    with pytest.warns(errors.DegenerateEigenstructure):
        res = fp.fpca(curves, n_components=3)
    np.testing.assert_allclose(res.eigenvalues, 0.0, atol=1e-12)


def test_eigenvalues_match_dense_grid_oracle(rng):
    curves = random_curves(rng, 40)
    res = fp.fpca(curves, n_components=3)
    dense_vals, dense_funcs, grid = fpca_dense(curves, 3)
    np.testing.assert_allclose(res.eigenvalues, dense_vals, rtol=1e-3)
    # eigenfunctions agree on the grid up to sign
    for k in range(3):
        mine = res.eigenfunctions[k](grid)
        ref = dense_funcs[:, k]
        err = min(np.max(np.abs(mine - ref)), np.max(np.abs(mine + ref)))
        assert err < 1e-2


def test_orthonormality_and_ordering(rng):
    curves = random_curves(rng, 25)
    res = fp.fpca(curves, n_components=4)
    W = gram_matrix(BASIS)
    for j in range(4):
        cj = res.eigenfunctions[j].coefficients
        assert cj @ W @ cj == pytest.approx(1.0, abs=1e-8)
        for k in range(j + 1, 4):
            ck = res.eigenfunctions[k].coefficients
            assert abs(cj @ W @ ck) < 1e-8
    assert np.all(np.diff(res.eigenvalues) <= 1e-12)
    assert np.all(res.eigenvalues >= -1e-10)


def test_eigenvalue_sum_bounded_by_total_variance(rng):
    curves = random_curves(rng, 12)
    res = fp.fpca(curves, n_components=3)
    assert np.sum(res.eigenvalues) <= res.total_variance + 1e-6
    full = fp.fpca(curves, n_components=7)
    assert np.sum(full.eigenvalues) == pytest.approx(full.total_variance, abs=1e-6)


def test_centering_invariance(rng):
    curves = random_curves(rng, 15)
    shift = curve(rng.normal(size=7))
    shifted = [curve(c.coefficients + shift.coefficients) for c in curves]
    a = fp.fpca(curves, n_components=3)
    b = fp.fpca(shifted, n_components=3)
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-8)


def test_sign_convention(rng):
    for seed in range(5):
        curves = random_curves(np.random.default_rng(seed), 20)
        res = fp.fpca(curves, n_components=3)
        v = basis_integrals(BASIS)
        for xi in res.eigenfunctions:
            assert float(v @ xi.coefficients) >= -1e-9


def test_scores_are_centered_inner_products(rng):
    curves = random_curves(rng, 18)
    res = fp.fpca(curves, n_components=3)
    W = gram_matrix(BASIS)
    C = np.vstack([c.coefficients for c in curves])
    Cc = C - C.mean(axis=0)
    for k in range(3):
        expect = Cc @ W @ res.eigenfunctions[k].coefficients
        np.testing.assert_allclose(res.scores[:, k], expect, atol=1e-10)
    # score variance equals the eigenvalue
    np.testing.assert_allclose(np.var(res.scores, axis=0, ddof=1),
                               res.eigenvalues, atol=1e-8)


def test_reconstruction_from_full_scores(rng):
    curves = random_curves(rng, 10)
    res = fp.fpca(curves, n_components=7)
    u = np.linspace(1, 9, 41)
    for i, c in enumerate(curves):
        approx = fp.reconstruct(res, res.scores[i])
        np.testing.assert_allclose(approx(u), c(u), atol=1e-6)


def test_insufficient_and_mismatched_inputs(rng):
    with pytest.raises(errors.InsufficientCurves):
        fp.fpca(random_curves(rng, 3), n_components=3)
    other = BsplineBasis.with_n_basis(8)
    mixed = random_curves(rng, 5) + random_curves(rng, 2, basis=other)
    with pytest.raises(errors.SharedBasisViolation):
        fp.fpca(mixed, n_components=3)


def test_fpca_json_round_trip(tmp_path, rng):
    res = fp.fpca(random_curves(rng, 12), n_components=3)
    p = tmp_path / "f.json"
    fp.write_fpca(p, res)
    back = fp.read_fpca(p)
    np.testing.assert_allclose(back.eigenvalues, res.eigenvalues)
    np.testing.assert_allclose(back.scores, res.scores)
    u = np.linspace(1, 9, 17)
    np.testing.assert_allclose(back.mean(u), res.mean(u))
    for a, b in zip(back.eigenfunctions, res.eigenfunctions):
        np.testing.assert_allclose(a(u), b(u))
    assert back.explained_fraction().sum() == pytest.approx(
        res.explained_fraction().sum())


# -- concurrent regression --------------------------------------------------------


def eigen_family(rng, T, q=3):
    """Per-day orthonormal-ish covariate curves, as FPCA would produce."""
    out = []
    for _ in range(T):
        out.append([unit_curve(rng.normal(size=7)) for _ in range(q)])
    return out


def test_exact_linear_model_recovered(rng):
    covs = eigen_family(rng, T=12)
    responses = [curve(2.0 * day[0].coefficients) for day in covs]
    fit = fp.concurrent_regress(responses, covs, lambda_beta=1e-10)
    grid = fit.grid
    interior = (grid >= 1.5) & (grid <= 8.5)
    b1 = fit.beta[0](grid)
    assert np.max(np.abs(b1[interior] - 2.0)) < 1e-3
    assert np.all(fit.r2[interior] > 0.999)


def test_r2_bounds_on_random_responses(rng):
    covs = eigen_family(rng, T=10)
    responses = random_curves(rng, 10)
    fit = fp.concurrent_regress(responses, covs)
    assert np.all(fit.r2 >= 0.0) and np.all(fit.r2 <= 1.0)
    assert np.all(fit.ss_reg >= 0.0) and np.all(fit.ss_res >= 0.0)
    assert 0.0 <= fit.mean_r2() <= 1.0


def test_constant_curves_match_scalar_ols(rng):
    # all functions constant in u: the functional fit must agree with plain
    # multiple regression of scalars, R2 computed against the day mean
    T = 40
    Z = rng.normal(size=(T, 3))
    y = 1.5 * Z[:, 0] - 0.7 * Z[:, 1] + 0.2 * Z[:, 2] + rng.normal(0, 0.3, T)

    def const(v):
        u = np.linspace(1, 9, 7)
        return smooth_values(u, np.full(7, v), BASIS, lam=0.0)

    responses = [const(v) for v in y]
    covs = [[const(Z[t, j]) for j in range(3)] for t in range(T)]
    fit = fp.concurrent_regress(responses, covs, lambda_beta=1e-12)

    beta, _, resid = ols_naive(Z, y)
    for j in range(3):
        vals = fit.beta[j](fit.grid)
        np.testing.assert_allclose(vals, beta[j], atol=1e-6)
    yhat = Z @ beta
    ss_reg = float(np.sum((yhat - y.mean()) ** 2))
    ss_res = float(resid @ resid)
    expect_r2 = ss_reg / (ss_reg + ss_res)
    np.testing.assert_allclose(fit.r2, expect_r2, atol=1e-6)


def test_pointwise_ols_equivalence_saturated_basis(rng):
    # lambda -> 0 with constant-in-u covariates and spline responses: the
    # per-grid-point OLS solution lies exactly in the beta spline space, so
    # the pooled fit must reproduce it at every grid point
    T = 30
    Z = rng.normal(size=(T, 3))
    u7 = np.linspace(1, 9, 7)

    def const(v):
        return smooth_values(u7, np.full(7, v), BASIS, lam=0.0)

    covs = [[const(Z[t, j]) for j in range(3)] for t in range(T)]
    responses = random_curves(rng, T)
    fit = fp.concurrent_regress(responses, covs, lambda_beta=1e-12,
                                beta_basis=BASIS, grid_points=101)
    Y = np.vstack([r(fit.grid) for r in responses])             # T x G
    B = np.stack([b(fit.grid) for b in fit.beta])               # 3 x G
    for gi in range(0, 101, 7):
        beta_g, _, _ = ols_naive(Z, Y[:, gi])
        np.testing.assert_allclose(B[:, gi], beta_g, atol=1e-6)


def test_grid_doubling_stability(rng):
    covs = eigen_family(rng, T=14)
    responses = [curve(1.2 * d[0].coefficients - 0.5 * d[1].coefficients
                       + 0.1 * rng.normal(size=7)) for d in covs]
    f1 = fp.concurrent_regress(responses, covs, grid_points=101)
    f2 = fp.concurrent_regress(responses, covs, grid_points=201)
    np.testing.assert_allclose(f1.r2, f2.r2[::2], atol=1e-3)


def test_intercept_option(rng):
    covs = eigen_family(rng, T=12)
    responses = [curve(d[0].coefficients + 3.0) for d in covs]
    fit = fp.concurrent_regress(responses, covs, include_intercept=True)
    assert fit.intercept is not None
    mid = fit.intercept(np.array([5.0]))[0]
    assert math.isfinite(mid)


def test_too_few_days(rng):
    covs = eigen_family(rng, T=3)
    with pytest.raises(errors.InsufficientCurves):
        fp.concurrent_regress(random_curves(rng, 3), covs)


def test_singular_normal_equations_escalate(rng):
    # duplicated covariate curves make the normal equations singular;
    # escalation must warn and still return finite coefficients
    base = eigen_family(rng, T=10)
    covs = [[d[0], d[0], d[0]] for d in base]
    responses = [curve(d[0].coefficients) for d in base]
    with pytest.warns(errors.SingularNormalEquations):
        fit = fp.concurrent_regress(responses, covs, lambda_beta=0.0)
    assert all(np.all(np.isfinite(b.coefficients)) for b in fit.beta)
    assert fit.lambda_beta > 0.0


def test_concurrent_json_round_trip(tmp_path, rng):
    covs = eigen_family(rng, T=9)
    responses = random_curves(rng, 9)
    fit = fp.concurrent_regress(responses, covs)
    p = tmp_path / "cf.json"
    fp.write_concurrent(p, fit)
    back = fp.read_concurrent(p)
    np.testing.assert_allclose(back.r2, fit.r2)
    np.testing.assert_allclose(back.grid, fit.grid)
    u = np.linspace(1, 9, 11)
    for a, b in zip(back.beta, fit.beta):
        np.testing.assert_allclose(a(u), b(u))
    assert back.r2_classic == pytest.approx(fit.r2_classic)


def test_loo_r2(rng):
    covs = eigen_family(rng, T=12)
    responses = [curve(2.0 * d[0].coefficients + 0.05 * rng.normal(size=7))
                 for d in covs]
    r2 = fp.loo_r2(responses, covs, lambda_beta=1e-6)
    assert r2.shape == (101,)
    assert np.all((r2 >= 0.0) & (r2 <= 1.0))
