"""Monte Carlo verification of the statistical guarantees.

Three regimes are supported, matching the summary table of convergence
rates:

    none             lambda ~ sqrt(log(2/delta)/n)     excess ~ n^{-1/2}
    source           lambda ~ n^{-1/(2+2r)}            excess ~ n^{-(1+2r)/(2+2r)}
    source_capacity  lambda ~ n^{-alpha/(1+a(1+2r))}   excess ~ n^{-a(1+2r)/(a(1+2r)+1)}

``lambda_schedule`` evaluates the corollaries' prescriptions literally (their
constants are very conservative at desk scale, hence the clamp to (0, B2*]
and the ``lambda_override`` hook on plans); ``run_rate_experiment`` draws
i.i.d. multinomial samples from a finite population, solves the regularized
ERM per cell, and compares exact excess risks against the refined
bias/variance bound evaluated with the exact per-lambda constants.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NonConvergenceError
from .linalg import add_ridge, chol_factor, gen_eigmax, inv_norm
from .losses import SampleSet
from .population import (
    FinitePopulation,
    PopulationSolution,
    ScConstants,
    bias_lambda,
    constants_at,
    df_lambda,
    dikin_radius,
    exact_risk,
    pointwise_bounds,
    solve_population,
)
from .solver import SolverConfig, newton_minimize

__all__ = [
    "REGIMES",
    "RateParams",
    "ExperimentPlan",
    "CellResult",
    "RateReport",
    "ConcentrationReport",
    "lambda_schedule",
    "theoretical_rate",
    "rate_constants",
    "anchored_lambdas",
    "run_rate_experiment",
    "hessian_premise_n",
    "hessian_concentration_experiment",
    "gradient_premise_n",
    "gradient_concentration_experiment",
]

REGIMES = ("none", "source", "source_capacity")


@dataclass(frozen=True)
class RateParams:
    """Constants feeding the schedules and thresholds.

    b1_ball/b2_ball are sups over the ||theta*||-ball (slow-rate regime),
    b1_star/b2_star the values at theta*; cert_radius is R, source_norm is
    the source-condition norm L, capacity_q the capacity constant Q.
    """

    delta: float
    b1_ball: float | None = None
    b2_ball: float | None = None
    b1_star: float | None = None
    b2_star: float | None = None
    cert_radius: float | None = None
    theta_norm: float | None = None
    source_norm: float | None = None
    capacity_q: float | None = None
    r: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if not 0.0 < self.delta <= 0.5:
            raise ContractViolation("delta must lie in (0, 0.5]")


def _require(params: RateParams, names) -> None:
    missing = [n for n in names if getattr(params, n) is None]
    if missing:
        raise ContractViolation(f"rate params missing {missing} for this regime")


@dataclass(frozen=True)
class ScheduledLambda:
    value: float
    clamped: bool
    raw: float


def lambda_schedule(regime: str, n: int, params: RateParams) -> ScheduledLambda:
    """The corollary's lambda for sample size n, clamped to (0, B2*].

    none:            16 B1_ball max(1, R) sqrt(log(2/delta)/n)
    source:          (256 (B1*/L)^2 / n)^{1/(2+2r)}
    source_capacity: (256 (Q/L)^2 / n)^{alpha/(1+alpha(1+2r))}
    """
    if n < 1:
        raise ContractViolation("n must be >= 1")
    if regime == "none":
        _require(params, ("b1_ball", "cert_radius", "b2_ball"))
        raw = 16.0 * params.b1_ball * max(1.0, params.cert_radius) * math.sqrt(
            math.log(2.0 / params.delta) / n
        )
        cap = params.b2_ball
    elif regime == "source":
        _require(params, ("b1_star", "source_norm", "r", "b2_star"))
        c0 = 256.0 * (params.b1_star / params.source_norm) ** 2
        raw = (c0 / n) ** (1.0 / (2.0 + 2.0 * params.r))
        cap = params.b2_star
    elif regime == "source_capacity":
        _require(params, ("capacity_q", "source_norm", "r", "alpha", "b2_star"))
        c0 = 256.0 * (params.capacity_q / params.source_norm) ** 2
        beta = params.alpha / (1.0 + params.alpha * (1.0 + 2.0 * params.r))
        raw = (c0 / n) ** beta
        cap = params.b2_star
    else:
        raise ContractViolation(f"unknown regime {regime!r}")
    if raw > cap:
        return ScheduledLambda(value=cap, clamped=True, raw=raw)
    return ScheduledLambda(value=raw, clamped=False, raw=raw)


def theoretical_rate(regime: str, r: float | None = None, alpha: float | None = None) -> float:
    """Exponent gamma of the optimal excess-risk rate n^-gamma."""
    if regime == "none":
        return 0.5
    if regime == "source":
        if r is None:
            raise ContractViolation("source regime needs r")
        return (2.0 * r + 1.0) / (2.0 * r + 2.0)
    if regime == "source_capacity":
        if r is None or alpha is None:
            raise ContractViolation("source_capacity regime needs r and alpha")
        return alpha * (1.0 + 2.0 * r) / (alpha * (1.0 + 2.0 * r) + 1.0)
    raise ContractViolation(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class RateConstants:
    c0: float
    c1: float
    n_threshold: float
    gamma: float
    lambda0: float | None = None
    lambda1: float | None = None


def rate_constants(regime: str, params: RateParams) -> RateConstants:
    """The corollaries' constants evaluated literally, plus the sample
    threshold N. N is reported, not enforced: at desk scale it is far above
    any n in the grids while the rates themselves already manifest.
    """
    delta = params.delta
    log2d = math.log(2.0 / delta)
    if regime == "none":
        _require(params, ("b1_ball", "b2_ball", "cert_radius", "theta_norm"))
        rmax = max(1.0, params.cert_radius)
        c0 = 16.0 * params.b1_ball * rmax
        c1 = 48.0 * params.b1_ball * rmax * max(1.0, params.theta_norm**2)
        a = params.b2_ball / params.b1_ball
        n_thr = max(
            36.0 * a * a * math.log(6.0 * a * a / delta) ** 2,
            256.0 / (a * a) * log2d,
            512.0 * max((params.theta_norm * params.cert_radius) ** 2, 1.0) * log2d,
        )
        return RateConstants(c0=c0, c1=c1, n_threshold=n_thr, gamma=0.5)

    if regime == "source":
        _require(params, ("b1_star", "source_norm", "r"))
        q, alpha = params.b1_star, 1.0
    elif regime == "source_capacity":
        _require(params, ("capacity_q", "source_norm", "r", "alpha"))
        q, alpha = params.capacity_q, params.alpha
    else:
        raise ContractViolation(f"unknown regime {regime!r}")

    _require(params, ("b2_star", "cert_radius"))
    r, ell = params.r, params.source_norm
    gamma = alpha * (1.0 + 2.0 * r) / (alpha * (1.0 + 2.0 * r) + 1.0)
    beta = 1.0 / (1.0 + 2.0 * r + 1.0 / alpha)
    c0 = 256.0 * (q / ell) ** 2
    c1 = 8.0 * 256.0**gamma * (q**gamma * ell ** (1.0 - gamma)) ** 2

    if params.cert_radius == 0.0:
        lambda0 = 1.0
    elif r > 0.0:
        lambda0 = min((2.0 * ell * params.cert_radius * log2d) ** (-1.0 / r), 1.0)
    else:
        raise ContractViolation(
            "sample threshold unavailable: r = 0 with a nonzero certificate radius"
        )
    q_star = params.b1_star / math.sqrt(params.b2_star) if params.b1_star else None
    lambda1 = min((q / q_star) ** (2.0 * alpha), 1.0) if q_star else 1.0
    lam_floor = min(params.b2_star, lambda0, lambda1)
    a = params.b2_star * ell ** (2.0 * beta) / q ** (2.0 * beta)
    n_thr = max(
        256.0 * q * q / (ell * ell) * lam_floor ** (-1.0 / beta),
        (1296.0 / (1.0 - beta) * a * math.log(5184.0 / (1.0 - beta) * a * a / delta))
        ** (1.0 / (1.0 - beta)),
    )
    return RateConstants(
        c0=c0, c1=c1, n_threshold=n_thr, gamma=gamma, lambda0=lambda0, lambda1=lambda1
    )


def anchored_lambdas(n_grid, exponent: float, anchor: float, n_anchor: int) -> tuple:
    """Desk-scale schedule lambda_n = anchor * (n/n_anchor)^-exponent.

    Keeps the corollary's decay exponent while pinning the level inside the
    population's spectral range, where the rates are actually observable.
    """
    if anchor <= 0:
        raise ContractViolation("anchor must be positive")
    return tuple(anchor * (n / n_anchor) ** (-exponent) for n in n_grid)


# -- experiment plan / report -----------------------------------------------------

@dataclass(frozen=True)
class ExperimentPlan:
    population: FinitePopulation
    regime: str
    n_grid: tuple
    replicates: int
    delta: float
    seed: int
    params: RateParams | None = None
    lambda_override: tuple | None = None
    burn_in: int = 1

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ContractViolation(f"unknown regime {self.regime!r}")
        grid = tuple(int(n) for n in self.n_grid)
        if len(grid) < 1 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ContractViolation("n_grid must be nonempty and strictly increasing")
        if self.replicates < 1:
            raise ContractViolation("replicates must be >= 1")
        if not 0.0 < self.delta <= 0.5:
            raise ContractViolation("delta must lie in (0, 0.5]")
        if self.lambda_override is not None:
            over = tuple(float(x) for x in self.lambda_override)
            if len(over) != len(grid) or any(x <= 0 for x in over):
                raise ContractViolation("lambda_override must give one positive lambda per n")
            object.__setattr__(self, "lambda_override", over)
        object.__setattr__(self, "n_grid", grid)


@dataclass(frozen=True)
class CellResult:
    n: int
    replicate: int
    lam: float
    excess_risk: float
    bound_rhs: float
    guard_ok: bool
    seed: int
    solved: bool


@dataclass(frozen=True)
class RateReport:
    regime: str
    n_grid: tuple
    replicates: int
    delta: float
    seed: int
    cells: tuple
    lambdas: tuple
    mean_excess: tuple
    fitted_exponent: float
    theoretical_exponent: float | None
    violation_freq: tuple
    guard_met: tuple
    solver_failures: int
    clamped: tuple


def _cell_seed(base: int, n_index: int, replicate: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(base), int(n_index), int(replicate)])
    return np.random.default_rng(ss), int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class _LambdaContext:
    """Per-lambda population quantities entering the theorem's RHS and guards."""

    lam: float
    bias: float
    df: float
    q_star_sq: float
    radius: float
    consts: ScConstants

    def bound_rhs(self, n: int, delta: float) -> float:
        log2d = math.log(2.0 / delta)
        dfq = max(self.df, self.q_star_sq)
        return self.consts.c_bias * self.bias**2 + self.consts.c_var * dfq * log2d / n

    def guard(self, n: int, delta: float, b2_star: float) -> bool:
        log2d = math.log(2.0 / delta)
        n1 = self.consts.n_factor_hessian * (b2_star / self.lam) * math.log(
            8.0 * self.consts.shift1**2 * b2_star / (self.lam * delta)
        )
        if math.isinf(self.radius):
            n2 = 0.0
        else:
            n2 = (
                self.consts.n_factor_variance
                * max(self.df, self.q_star_sq)
                / self.radius**2
                * log2d
            )
        return n >= n1 and n >= n2


def _solve_cell(sset, weights, lam, config):
    try:
        res = newton_minimize(sset, weights, lam, config)
        return res.theta_hat, True
    except NonConvergenceError:
        return None, False


def _run_cell(args):
    (pop, lam, n, n_index, replicate, base_seed, config) = args
    rng, cell_seed = _cell_seed(base_seed, n_index, replicate)
    counts = rng.multinomial(n, pop.weights)
    mask = counts > 0
    emp_weights = counts[mask] / float(n)
    sub = [pop.atoms[i] for i in np.nonzero(mask)[0]]
    sset = SampleSet(pop.loss, sub)
    theta_hat, solved = _solve_cell(sset, emp_weights, lam, config)
    return (n_index, replicate, cell_seed, theta_hat, solved)


def run_rate_experiment(plan: ExperimentPlan, solver_config: SolverConfig | None = None,
                        jobs: int = 1) -> RateReport:
    """Draw-solve-measure over the full (n, replicate) grid.

    Each cell draws n atoms i.i.d. by weight (multinomial counts over the
    finite support), solves the regularized ERM at the scheduled lambda, and
    records the exact excess risk together with the refined bound's RHS and
    guard status. Cells are independent; aggregation is keyed by (n,
    replicate) so the report is order-independent and reproducible.
    """
    pop = plan.population
    config = solver_config or SolverConfig()

    # Per-n lambda and its population context (shared across replicates).
    lambdas = []
    clamped = []
    if plan.lambda_override is not None:
        lambdas = list(plan.lambda_override)
        clamped = [False] * len(lambdas)
    else:
        if plan.params is None:
            raise ContractViolation("plan needs params unless lambda_override is given")
        for n in plan.n_grid:
            sched = lambda_schedule(plan.regime, n, plan.params)
            lambdas.append(sched.value)
            clamped.append(sched.clamped)

    sol = solve_population(pop, sorted(set(lambdas)))
    theta_star = sol.theta_star
    risk_star = exact_risk(pop, theta_star, 0.0)
    b1_star, b2_star = pointwise_bounds(pop, theta_star)
    q_star_sq = b1_star**2 / b2_star if b2_star > 0 else 0.0

    contexts = {}
    for lam in set(lambdas):
        contexts[lam] = _LambdaContext(
            lam=lam,
            bias=bias_lambda(pop, sol, lam),
            df=df_lambda(pop, sol, lam),
            q_star_sq=q_star_sq,
            radius=dikin_radius(pop, sol.theta_star, lam),
            consts=constants_at(pop, sol, lam),
        )

    tasks = [
        (pop, lambdas[ni], n, ni, rep, plan.seed, config)
        for ni, n in enumerate(plan.n_grid)
        for rep in range(plan.replicates)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_run_cell, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))
    else:
        raw = [_run_cell(t) for t in tasks]
    raw.sort(key=lambda item: (item[0], item[1]))

    cells = []
    failures = 0
    for n_index, replicate, cell_seed, theta_hat, solved in raw:
        n = plan.n_grid[n_index]
        lam = lambdas[n_index]
        ctx = contexts[lam]
        if solved:
            excess = exact_risk(pop, theta_hat, 0.0) - risk_star
        else:
            excess = math.nan
            failures += 1
        cells.append(
            CellResult(
                n=n,
                replicate=replicate,
                lam=lam,
                excess_risk=excess,
                bound_rhs=ctx.bound_rhs(n, plan.delta),
                guard_ok=ctx.guard(n, plan.delta, b2_star),
                seed=cell_seed,
                solved=solved,
            )
        )

    mean_excess = []
    violation = []
    guard_met = []
    for ni, n in enumerate(plan.n_grid):
        group = [c for c in cells if c.n == n and c.solved]
        if not group:
            mean_excess.append(math.nan)
            violation.append(math.nan)
            guard_met.append(False)
            continue
        mean_excess.append(float(np.mean([c.excess_risk for c in group])))
        violation.append(float(np.mean([c.excess_risk > c.bound_rhs for c in group])))
        guard_met.append(all(c.guard_ok for c in group))

    burn = min(plan.burn_in, len(plan.n_grid) - 2) if len(plan.n_grid) > 2 else 0
    xs = np.log(np.asarray(plan.n_grid, dtype=float)[burn:])
    ys = np.log(np.maximum(np.asarray(mean_excess)[burn:], 1e-300))
    ok = np.isfinite(ys)
    if ok.sum() >= 2:
        a = np.vstack([xs[ok], np.ones(int(ok.sum()))]).T
        coef, *_ = np.linalg.lstsq(a, ys[ok], rcond=None)
        fitted = float(-coef[0])
    else:
        fitted = math.nan

    if plan.regime == "none":
        theo = theoretical_rate("none")
    elif plan.params is not None and plan.params.r is not None:
        theo = theoretical_rate(plan.regime, plan.params.r, plan.params.alpha)
    else:
        meta = pop.meta
        theo = (
            theoretical_rate(plan.regime, meta.r, meta.alpha)
            if meta is not None and meta.r is not None
            else None
        )

    return RateReport(
        regime=plan.regime,
        n_grid=plan.n_grid,
        replicates=plan.replicates,
        delta=plan.delta,
        seed=plan.seed,
        cells=tuple(cells),
        lambdas=tuple(lambdas),
        mean_excess=tuple(mean_excess),
        fitted_exponent=fitted,
        theoretical_exponent=theo,
        violation_freq=tuple(violation),
        guard_met=tuple(guard_met),
        solver_failures=failures,
        clamped=tuple(clamped),
    )


# -- concentration experiments -------------------------------------------------------

@dataclass(frozen=True)
class ConcentrationReport:
    kind: str
    n: int
    replicates: int
    delta: float
    premise_n: float
    premise_ok: bool
    successes: int
    frequency: float
    threshold: float
    skipped: bool
    outcomes: tuple

    @property
    def passed(self) -> bool:
        return self.skipped or self.frequency >= self.threshold


def _binomial_threshold(p: float, replicates: int) -> float:
    sigma = math.sqrt(p * (1.0 - p) / replicates)
    return p - 3.0 * sigma


def hessian_premise_n(pop: FinitePopulation, theta, lam: float, delta: float) -> float:
    """Sample size above which the two-sided Hessian equivalence is guaranteed:
    24 B2(theta)/lambda * log(8 B2(theta)/(lambda delta))."""
    _, b2 = pointwise_bounds(pop, theta)
    return 24.0 * b2 / lam * math.log(8.0 * b2 / (lam * delta))


def hessian_concentration_experiment(pop: FinitePopulation, theta, lam: float, n: int,
                                     replicates: int, delta: float,
                                     seed: int = 0) -> ConcentrationReport:
    """Monte Carlo frequency of H_lambda(theta) <= 2 Hhat_lambda(theta).

    The event is tested through the largest generalized eigenvalue of
    (H_lambda, Hhat_lambda). When n is below the lemma's premise the
    experiment is marked skipped (frequencies still reported).
    """
    if lam <= 0:
        raise ContractViolation("lambda must be positive")
    theta = np.asarray(theta, dtype=float)
    premise = hessian_premise_n(pop, theta, lam, delta)
    premise_ok = n >= premise
    h_lam = add_ridge(pop.sample_set.weighted_hess(pop.weights, theta), lam)
    outcomes = []
    for rep in range(replicates):
        rng, _ = _cell_seed(seed, 0, rep)
        counts = rng.multinomial(n, pop.weights)
        w = counts / float(n)
        h_hat = add_ridge(pop.sample_set.weighted_hess(w, theta), lam)
        ratio = gen_eigmax(h_lam, h_hat)
        outcomes.append(bool(ratio <= 2.0 + 1e-12))
    successes = int(sum(outcomes))
    return ConcentrationReport(
        kind="hessian",
        n=n,
        replicates=replicates,
        delta=delta,
        premise_n=premise,
        premise_ok=premise_ok,
        successes=successes,
        frequency=successes / replicates,
        threshold=_binomial_threshold(1.0 - delta, replicates),
        skipped=not premise_ok,
        outcomes=tuple(outcomes),
    )


def gradient_premise_n(pop: FinitePopulation, sol: PopulationSolution, lam: float,
                       delta: float, k: float) -> float:
    """Premise n >= k^2 shift2^2 (B2*/lambda) log(2/delta) of the empirical
    gradient concentration bound."""
    consts = constants_at(pop, sol, lam)
    _, b2_star = pointwise_bounds(pop, sol.theta_star)
    return k * k * consts.shift2**2 * (b2_star / lam) * math.log(2.0 / delta)


def gradient_concentration_experiment(pop: FinitePopulation, lam: float, n: int,
                                      replicates: int, delta: float, k: float = 4.0,
                                      seed: int = 0) -> ConcentrationReport:
    """Monte Carlo frequency of the empirical-gradient concentration bound

        ||grad Lhat_lam(t*_lam)||_{H_lam^{-1}(t*_lam)}
            <= (2 sqrt(3)/k) Bias_lam
               + 2 shift1 sqrt((df_lam v Q*^2) log(2/delta) / n).
    """
    if lam <= 0:
        raise ContractViolation("lambda must be positive")
    if k < 4.0:
        raise ContractViolation("the bound requires k >= 4")
    sol = solve_population(pop, [lam])
    theta_lam = sol.theta_for(lam)
    factor = chol_factor(add_ridge(pop.sample_set.weighted_hess(pop.weights, theta_lam), lam))
    bias = bias_lambda(pop, sol, lam)
    df = df_lambda(pop, sol, lam)
    b1_star, b2_star = pointwise_bounds(pop, sol.theta_star)
    q_star_sq = b1_star**2 / b2_star
    consts = constants_at(pop, sol, lam)
    premise = gradient_premise_n(pop, sol, lam, delta, k)
    premise_ok = n >= premise

    log2d = math.log(2.0 / delta)
    rhs = (2.0 * math.sqrt(3.0) / k) * bias + 2.0 * consts.shift1 * math.sqrt(
        max(df, q_star_sq) * log2d / n
    )
    outcomes = []
    for rep in range(replicates):
        rng, _ = _cell_seed(seed, 1, rep)
        counts = rng.multinomial(n, pop.weights)
        w = counts / float(n)
        g_hat = pop.sample_set.weighted_grad(w, theta_lam) + lam * theta_lam
        lhs = inv_norm(factor, g_hat)
        outcomes.append(bool(lhs <= rhs))
    successes = int(sum(outcomes))
    return ConcentrationReport(
        kind="gradient",
        n=n,
        replicates=replicates,
        delta=delta,
        premise_n=premise,
        premise_ok=premise_ok,
        successes=successes,
        frequency=successes / replicates,
        threshold=_binomial_threshold(1.0 - delta, replicates),
        skipped=not premise_ok,
        outcomes=tuple(outcomes),
    )
