import math

import numpy as np
import pytest

from scerm import (
    ContractViolation,
    FinitePopulation,
    LogisticLoss,
    Sample,
    SquareLoss,
    bias_lambda,
    compute_diagnostics,
    constants_at,
    default_lambda_grid,
    df_lambda,
    dikin_radius,
    estimate_capacity_exponent,
    estimate_source_exponent,
    exact_grad,
    exact_hessian,
    exact_risk,
    make_logistic_population,
    make_source_population,
    minimize_population,
    solve_population,
    t_lambda,
)
from scerm.population import pointwise_bounds, sup_norm_certificate
from scerm.scfun import LOG2


def well_specified_logistic(rng, d=3, n_x=6, scale=1.0):
    """Logistic population whose conditional law is exactly the model's."""
    theta_star = rng.normal(size=d) * 0.5
    xs = rng.normal(size=(n_x, d)) * scale
    base_w = rng.uniform(0.5, 1.5, size=n_x)
    base_w /= base_w.sum()
    atoms, weights = [], []
    for i in range(n_x):
        m = float(xs[i] @ theta_star)
        p = 1.0 / (1.0 + math.exp(-m))
        atoms.append(Sample(features=xs[i], label=1.0))
        weights.append(base_w[i] * p)
        atoms.append(Sample(features=xs[i], label=-1.0))
        weights.append(base_w[i] * (1.0 - p))
    return FinitePopulation(
        atoms=tuple(atoms), weights=np.asarray(weights), loss=LogisticLoss()
    ), theta_star


# -- exact oracle examples -----------------------------------------------------


def test_p1_exact_risk(p1):
    assert exact_risk(p1, np.zeros(1), 0.0) == pytest.approx(1.0, abs=0)


def test_p1_exact_hessian(p1):
    np.testing.assert_allclose(exact_hessian(p1, np.zeros(1), 0.0), [[1.0]], atol=0)


def test_p2_hessian_at_log3(p2):
    h = exact_hessian(p2, np.array([math.log(3.0)]), 0.0)
    np.testing.assert_allclose(h, [[0.1875]], atol=1e-14)


def test_exact_hessian_ridge_eigenvalues(p2):
    lam = 0.3
    h = exact_hessian(p2, np.zeros(1), lam)
    assert np.linalg.eigvalsh(h)[0] >= lam - 1e-12


def test_p1_minimizers(p1):
    assert minimize_population(p1, 0.0) == pytest.approx([1.0], abs=1e-10)
    assert minimize_population(p1, 1.0) == pytest.approx([0.5], abs=1e-10)


def test_p2_minimizer(p2):
    assert minimize_population(p2, 0.0) == pytest.approx([math.log(3.0)], abs=1e-9)


def test_p1_bias(p1):
    sol = solve_population(p1, [1.0, 3.0])
    assert bias_lambda(p1, sol, 1.0) == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-12)
    assert bias_lambda(p1, sol, 3.0) == pytest.approx(1.5, abs=1e-12)


def test_p1_df(p1):
    sol = solve_population(p1, [1.0])
    assert df_lambda(p1, sol, 1.0) == pytest.approx(0.5, abs=1e-12)


def test_p2_df_bartlett_value(p2):
    sol = solve_population(p2, [3.0 / 16.0])
    assert df_lambda(p2, sol, 3.0 / 16.0) == pytest.approx(0.5, abs=1e-10)


def test_df_vanishes_at_huge_lambda(p2):
    sol = solve_population(p2, [])
    _, b2 = pointwise_bounds(p2, sol.theta_star)
    lam = 1e6 * b2
    assert df_lambda(p2, sol, lam) < 1e-4 * p2.dim


def test_dikin_square_infinite(p1):
    assert dikin_radius(p1, np.array([0.3]), 0.5) == math.inf


def test_dikin_p2_value(p2):
    sol = solve_population(p2, [])
    r = dikin_radius(p2, sol.theta_star, 1.0 / 16.0)
    assert r == pytest.approx(0.5, abs=1e-9)


def test_dikin_scaling_at_huge_lambda(p2):
    sol = solve_population(p2, [])
    lam = 1e6
    assert dikin_radius(p2, sol.theta_star, lam) / math.sqrt(lam) == pytest.approx(1.0, rel=1e-6)


def test_dikin_lower_bound_sqrt_lambda_over_r(p2):
    sol = solve_population(p2, [])
    r_cert = sup_norm_certificate(p2)
    for lam in (1e-3, 0.1, 2.0):
        assert dikin_radius(p2, sol.theta_star, lam) >= math.sqrt(lam) / r_cert - 1e-12


def test_t_lambda_square_zero(p1):
    sol = solve_population(p1, [0.25])
    assert t_lambda(p1, sol, 0.25) == 0.0


def test_t_lambda_p2(p2):
    lam = 0.01
    sol = solve_population(p2, [lam])
    expect = abs(float(sol.theta_for(lam)[0]) - math.log(3.0))
    assert t_lambda(p2, sol, lam) == pytest.approx(expect, rel=1e-9)


def test_t_lambda_vanishes_small_lambda(p2):
    grid = [1e-3, 1e-5, 1e-7]
    sol = solve_population(p2, grid)
    vals = [t_lambda(p2, sol, lam) for lam in grid]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-5


def test_lambda_contracts(p1):
    sol = solve_population(p1, [])
    for fn in (bias_lambda, df_lambda):
        with pytest.raises(ContractViolation):
            fn(p1, sol, 0.0)
    with pytest.raises(ContractViolation):
        dikin_radius(p1, np.zeros(1), -1.0)


# -- solution invariants ----------------------------------------------------------


def test_gradient_norms_at_solutions(p2):
    grid = [0.5, 0.1, 0.01]
    sol = solve_population(p2, grid)
    assert np.linalg.norm(exact_grad(p2, sol.theta_star, 0.0)) <= 1e-10
    for lam in grid:
        assert np.linalg.norm(exact_grad(p2, sol.theta_for(lam), lam)) <= 1e-9


def test_monotone_shrinkage(rng):
    pop, _ = well_specified_logistic(rng)
    grid = [2.0 ** -k for k in range(0, 10)]
    sol = solve_population(pop, grid)
    star_norm = np.linalg.norm(sol.theta_star)
    for lam in grid:
        assert np.linalg.norm(sol.theta_for(lam)) <= star_norm + 1e-10


def test_bias_monotone_df_antitone(rng):
    pop, _ = well_specified_logistic(rng)
    grid = sorted([2.0 ** -k for k in range(0, 12)])
    sol = solve_population(pop, grid)
    biases = [bias_lambda(pop, sol, lam) for lam in grid]
    dfs = [df_lambda(pop, sol, lam) for lam in grid]
    assert all(b <= a + 1e-12 for a, b in zip(biases[1:], biases))  # increasing in lambda
    assert all(b >= a - 1e-12 for a, b in zip(dfs[1:], dfs))  # decreasing in lambda


def test_bias_and_df_global_bounds(rng):
    pop, _ = well_specified_logistic(rng)
    sol = solve_population(pop, [])
    b1_star, _ = pointwise_bounds(pop, sol.theta_star)
    star_norm = np.linalg.norm(sol.theta_star)
    for lam in (1e-4, 1e-2, 0.5, 4.0):
        assert bias_lambda(pop, sol, lam) <= math.sqrt(lam) * star_norm + 1e-12
        assert df_lambda(pop, sol, lam) <= min(pop.dim, b1_star**2 / lam) + 1e-10


# -- closed-form identities ---------------------------------------------------------


def unit_noise_square_population(rng, d=4, n_x=6):
    """y = theta*.Phi +- 1, so E[resid^2|x] = 1 and the ridge identities hold."""
    theta_star = rng.normal(size=d)
    xs = rng.normal(size=(n_x, d))
    base_w = rng.uniform(0.5, 1.5, size=n_x)
    base_w /= base_w.sum()
    atoms, weights = [], []
    for i in range(n_x):
        mean = float(xs[i] @ theta_star)
        for eps in (1.0, -1.0):
            atoms.append(Sample(features=xs[i], label=mean + eps))
            weights.append(base_w[i] / 2.0)
    pop = FinitePopulation(atoms=tuple(atoms), weights=np.asarray(weights), loss=SquareLoss())
    return pop, theta_star


def test_square_closed_forms(rng):
    pop, theta_star = unit_noise_square_population(rng)
    sol = solve_population(pop, [])
    np.testing.assert_allclose(sol.theta_star, theta_star, atol=1e-9)
    cov = exact_hessian(pop, theta_star, 0.0)
    for lam in (1e-3, 0.05, 0.7, 3.0):
        cov_lam = cov + lam * np.eye(pop.dim)
        bias_expect = lam * math.sqrt(theta_star @ np.linalg.solve(cov_lam, theta_star))
        df_expect = float(np.trace(np.linalg.solve(cov_lam, cov)))
        assert abs(bias_lambda(pop, sol, lam) - bias_expect) < 1e-10
        assert abs(df_lambda(pop, sol, lam) - df_expect) < 1e-10


def test_bartlett_identity_and_df(rng):
    pop, _ = well_specified_logistic(rng)
    sol = solve_population(pop, [])
    grads = pop.sample_set.grads(sol.theta_star)
    outer = (grads.T * pop.weights) @ grads
    h = exact_hessian(pop, sol.theta_star, 0.0)
    np.testing.assert_allclose(outer, h, atol=1e-10)
    for lam in (1e-3, 0.1, 1.0):
        df_expect = float(np.trace(np.linalg.solve(h + lam * np.eye(pop.dim), h)))
        assert abs(df_lambda(pop, sol, lam) - df_expect) < 1e-10


# -- localization bound at grid points -----------------------------------------------


def test_lemma_localization_bound_over_grid(rng):
    pop, _ = well_specified_logistic(rng)
    sol = solve_population(pop, [])
    _, b2_star = pointwise_bounds(pop, sol.theta_star)
    grid = default_lambda_grid(b2_star, 0, 12)
    report = compute_diagnostics(pop, grid)  # raises on violation
    r_cert = sup_norm_certificate(pop)
    star_norm = np.linalg.norm(sol.theta_star)
    for i in range(report.lambda_grid.size):
        if report.bias[i] <= report.dikin[i] / 2.0:
            assert report.t_lambda[i] <= LOG2 + 1e-12
        else:
            assert report.t_lambda[i] <= 2.0 * r_cert * star_norm + 1e-12


# -- constants -------------------------------------------------------------------------


def test_constants_at_zero_t(p1):
    sol = solve_population(p1, [0.5])
    c = constants_at(p1, sol, 0.5)
    assert c.t_lambda == 0.0
    assert c.t_tilde == 0.0
    assert c.branch == "universal"
    # 2 psi(log 2) evaluated numerically
    assert c.k_bias == pytest.approx(1.277347880233289, abs=1e-12)
    assert c.shift1 == 1.0
    assert c.shift2 == 2.0


def test_basic_constants_bounds(p1):
    sol = solve_population(p1, [0.5])
    c = constants_at(p1, sol, 0.5)
    assert c.k_var_basic == pytest.approx(3.1492233334330244, abs=1e-12)
    assert c.k_var_basic <= 4.0
    assert c.bern_basic <= 4.0
    assert c.c_bias_basic <= 2.0
    assert c.c_var_basic <= 84.0


def test_constants_universal_branch_bounds(rng):
    from scerm.population import _constants_from_t

    # at t = log 2 (the universal branch's worst case) the paper's numeric caps hold
    c = _constants_from_t(0.1, LOG2, 0.5)
    assert c.k_bias <= 4.0
    assert c.k_var == pytest.approx(6.454822555520439, abs=1e-12)
    assert c.k_var <= 7.0
    assert c.shift1 <= 2.0
    assert c.shift2 <= 5.0
    assert c.n_factor_hessian <= 5184.0
    assert c.n_factor_variance <= 1024.0
    assert c.c_bias <= 6.0
    assert c.c_var <= 414.0


def test_constants_exponential_bounds(rng):
    from scerm.population import _constants_from_t

    for tla in rng.uniform(0.0, 3.0, size=25):
        c = _constants_from_t(0.1, tla, 1.0)
        assert c.k_bias <= 2.0 * math.exp(3.0 * tla) + 1e-9
        assert c.k_var <= 8.0 * math.exp(2.0 * tla) + 1e-9
        assert c.shift2 <= 2.0 * math.exp(1.5 * tla) + 1e-9
        assert c.c_bias <= 6.0 * math.exp(2.0 * tla) + 1e-9
        assert c.c_var <= 256.0 * math.exp(3.0 * tla) + 1e-9
        assert c.n_factor_variance <= 256.0 * math.exp(2.0 * tla) + 1e-9


# -- synthetic constructions -------------------------------------------------------------


def test_source_population_structure():
    pop = make_source_population(d=8, r=0.5, alpha=2.0, seed=3)
    meta = pop.meta
    cov = exact_hessian(pop, np.zeros(8), 0.0)
    np.testing.assert_allclose(cov, np.diag(meta.hess_eigenvalues), atol=1e-12)
    np.testing.assert_allclose(meta.hess_eigenvalues,
                               np.arange(1, 9, dtype=float) ** -2.0, atol=0)
    # theta* = C^r v with ||v|| = 1
    v = meta.theta_star / meta.hess_eigenvalues**0.5
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
    # population minimizer is theta*
    np.testing.assert_allclose(minimize_population(pop, 0.0), meta.theta_star, atol=1e-10)


def test_source_population_bias_bound_r_half():
    pop = make_source_population(d=16, r=0.5, alpha=2.0, seed=0)
    sol = solve_population(pop, [])
    cov = sol.hessian_at_star
    # r = 1/2: Bias_lam / lam <= ||C^{-1/2} theta*|| = ||v|| = 1
    for lam in (1e-4, 1e-2, 0.5):
        assert bias_lambda(pop, sol, lam) / lam <= 1.0 + 1e-10
    del cov


def test_source_population_r_zero():
    pop = make_source_population(d=16, r=0.0, alpha=1.5, seed=1)
    meta = pop.meta
    # H^0 = I: theta* = v, unit norm
    assert np.linalg.norm(meta.theta_star) == pytest.approx(1.0, abs=1e-12)
    sol = solve_population(pop, [])
    for lam in (1e-3, 0.1, 1.0):
        assert bias_lambda(pop, sol, lam) <= math.sqrt(lam) * 1.0 + 1e-12


def test_source_population_capacity_q():
    pop = make_source_population(d=32, r=0.5, alpha=2.0, seed=2)
    meta = pop.meta
    sol = solve_population(pop, [])
    for lam in np.geomspace(1e-4, 1.0, 9):
        assert df_lambda(pop, sol, lam) <= meta.capacity_q * lam ** (-1.0 / meta.alpha) + 1e-9


def test_source_population_df_capacity_slope_example():
    # d=64, alpha=2: df at lambda and lambda/16 differ by at most ~ a factor 4
    pop = make_source_population(d=64, r=0.5, alpha=2.0, seed=5)
    sol = solve_population(pop, [])
    lam = 2.0**-6
    ratio = df_lambda(pop, sol, lam / 16.0) / df_lambda(pop, sol, lam)
    assert ratio <= 4.3


def test_source_population_validation():
    with pytest.raises(ContractViolation):
        make_source_population(d=1, r=0.5, alpha=2.0, seed=0)
    with pytest.raises(ContractViolation):
        make_source_population(d=8, r=0.8, alpha=2.0, seed=0)
    with pytest.raises(ContractViolation):
        make_source_population(d=8, r=0.5, alpha=0.5, seed=0)


def test_source_slopes_recovered_within_tolerance():
    # measured bias and df slopes over the df-gated central window match the
    # prescribed exponents within 0.1
    for (d, r, alpha) in [(64, 0.5, 2.0), (64, 0.25, 2.0), (128, 0.4, 1.5)]:
        pop = make_source_population(d=d, r=r, alpha=alpha, seed=9)
        grid = 2.0 ** -np.arange(2, int(alpha * math.log2(d)) + 2)
        report = compute_diagnostics(pop, grid)
        assert abs(report.fitted_r.slope - (1 + 2 * r) / 2) <= 0.1, (d, r, alpha)
        assert abs(-1.0 / report.fitted_alpha.value - (-1.0 / alpha)) <= 0.1 / alpha or \
            abs(report.fitted_alpha.slope - (-1.0 / alpha)) <= 0.1, (d, r, alpha)


def test_exponent_recovery_spec_grid():
    pop = make_source_population(d=64, r=0.5, alpha=2.0, seed=11)
    grid = 2.0 ** -np.arange(4, 15)
    report = compute_diagnostics(pop, grid)
    assert 0.4 <= report.fitted_r.value <= 0.6
    assert 1.7 <= report.fitted_alpha.value <= 2.3


def test_capacity_estimate_flags_finite_dimension(p1):
    grid = 2.0 ** -np.arange(0, 14)
    report = compute_diagnostics(p1, grid)
    # d = 1: df saturates at 1, slope -> 0, alpha_hat flagged as large
    assert report.fitted_alpha.value > 10 or math.isinf(report.fitted_alpha.value)


def test_estimators_reject_degenerate_grid(p1):
    report = compute_diagnostics(p1, [0.5, 0.25], fit_exponents=False)
    with pytest.raises(ContractViolation):
        estimate_source_exponent(report)
    with pytest.raises(ContractViolation):
        estimate_capacity_exponent(report)


def test_logistic_population_construction():
    pop = make_logistic_population(d=8, alpha=1.0, seed=4)
    meta = pop.meta
    sol = solve_population(pop, [])
    np.testing.assert_allclose(sol.theta_star, meta.theta_star, atol=1e-9)
    h = exact_hessian(pop, sol.theta_star, 0.0)
    np.testing.assert_allclose(h, np.diag(meta.hess_eigenvalues), atol=1e-10)
    # well-specified: Bartlett holds
    grads = pop.sample_set.grads(sol.theta_star)
    outer = (grads.T * pop.weights) @ grads
    np.testing.assert_allclose(outer, h, atol=1e-10)


def test_default_lambda_grid_respects_cap():
    grid = default_lambda_grid(0.2, 0, 16)
    assert np.all(grid <= 0.2)
    assert np.all(grid > 0)


def test_population_validation():
    z = Sample(features=np.array([1.0]), label=0.0)
    with pytest.raises(ContractViolation):
        FinitePopulation(atoms=(z,), weights=np.array([0.5]), loss=SquareLoss())
    with pytest.raises(ContractViolation):
        FinitePopulation(atoms=(z, z), weights=np.array([1.5, -0.5]), loss=SquareLoss())
    with pytest.raises(ContractViolation):
        FinitePopulation(atoms=(), weights=np.array([]), loss=SquareLoss())
