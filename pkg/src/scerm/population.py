"""Exact-expectation oracle over finitely supported distributions.

A ``FinitePopulation`` is a weighted list of atoms, so every expectation —
risk, gradient, Hessian, bias, degrees of freedom, Dikin radius — is a finite
sum computed exactly. Populations therefore serve as ground truth when
checking inequalities and convergence rates against Monte Carlo draws.

Diagnostic quantities at a regularization level lambda:

    Bias   = lambda * || (H(t*) + lambda I)^{-1/2} t* ||
    df     = E || (H(t*) + lambda I)^{-1/2} grad l_Z(t*) ||^2
    1/r    = sup over atoms and certificate vectors of ||g||_{H_lambda^{-1}}
    t_lam  = sup over atoms of the certificate factor at direction t*_lam - t*
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import scfun
from .errors import ContractViolation
from .linalg import add_ridge, chol_factor, inv_norm, inv_quad_rows
from .losses import LossModel, LogisticLoss, Sample, SampleSet, SquareLoss
from .solver import SolverConfig, newton_minimize

__all__ = [
    "FinitePopulation",
    "PopulationSolution",
    "DiagnosticsReport",
    "ScConstants",
    "ExponentFit",
    "ConstructionMeta",
    "exact_risk",
    "exact_grad",
    "exact_hessian",
    "minimize_population",
    "solve_population",
    "bias_lambda",
    "df_lambda",
    "dikin_radius",
    "t_lambda",
    "pointwise_bounds",
    "constants_at",
    "default_lambda_grid",
    "compute_diagnostics",
    "estimate_source_exponent",
    "estimate_capacity_exponent",
    "make_source_population",
    "make_logistic_population",
]

_POP_SOLVE_TOL = 1e-12


@dataclass(frozen=True)
class ConstructionMeta:
    """Ground-truth attributes of a synthetically constructed population."""

    kind: str
    theta_star: np.ndarray
    hess_eigenvalues: np.ndarray
    r: float | None = None
    alpha: float | None = None
    source_norm: float | None = None
    capacity_q: float | None = None


@dataclass(frozen=True)
class FinitePopulation:
    """Finitely supported distribution: atoms, strictly positive weights, loss."""

    atoms: tuple
    weights: np.ndarray
    loss: LossModel
    meta: ConstructionMeta | None = None

    def __post_init__(self):
        atoms = tuple(self.atoms)
        w = np.asarray(self.weights, dtype=float)
        if len(atoms) == 0:
            raise ContractViolation("population needs at least one atom")
        if w.shape != (len(atoms),):
            raise ContractViolation("weights and atoms disagree in length")
        if np.any(w <= 0):
            raise ContractViolation("weights must be strictly positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ContractViolation(f"weights sum to {w.sum()!r}, not 1")
        d = atoms[0].dim
        if any(z.dim != d for z in atoms):
            raise ContractViolation("atoms disagree on feature dimension")
        w = np.array(w)
        w.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", w)

    @cached_property
    def sample_set(self) -> SampleSet:
        return SampleSet(self.loss, self.atoms)

    @property
    def dim(self) -> int:
        return self.atoms[0].dim

    @classmethod
    def from_single(cls, loss: LossModel, z: Sample) -> "FinitePopulation":
        return cls(atoms=(z,), weights=np.array([1.0]), loss=loss)


def exact_risk(pop: FinitePopulation, theta, lam: float = 0.0) -> float:
    if lam < 0:
        raise ContractViolation("lambda must be nonnegative")
    theta = np.asarray(theta, dtype=float)
    return pop.sample_set.weighted_value(pop.weights, theta) + 0.5 * lam * float(theta @ theta)


def exact_grad(pop: FinitePopulation, theta, lam: float = 0.0) -> np.ndarray:
    if lam < 0:
        raise ContractViolation("lambda must be nonnegative")
    theta = np.asarray(theta, dtype=float)
    return pop.sample_set.weighted_grad(pop.weights, theta) + lam * theta


def exact_hessian(pop: FinitePopulation, theta, lam: float = 0.0) -> np.ndarray:
    if lam < 0:
        raise ContractViolation("lambda must be nonnegative")
    h = pop.sample_set.weighted_hess(pop.weights, np.asarray(theta, dtype=float))
    return add_ridge(h, lam) if lam else h


def minimize_population(pop: FinitePopulation, lam: float,
                        config: SolverConfig | None = None) -> np.ndarray:
    """Minimizer of the exact regularized population risk.

    lam = 0 is allowed for populations whose unregularized minimum is
    attained (the synthetic constructions below guarantee it); failure to
    converge there surfaces as NonConvergenceError.
    """
    config = config or SolverConfig(tol=_POP_SOLVE_TOL)
    res = newton_minimize(pop.sample_set, pop.weights, lam, config)
    return res.theta_hat


@dataclass(frozen=True)
class PopulationSolution:
    """theta*, its Hessian, and regularized minimizers on a lambda grid."""

    population: FinitePopulation
    theta_star: np.ndarray
    hessian_at_star: np.ndarray
    theta_lambda: dict

    def theta_for(self, lam: float) -> np.ndarray:
        try:
            return self.theta_lambda[lam]
        except KeyError:
            return minimize_population(self.population, lam)


def solve_population(pop: FinitePopulation, lambda_grid=(),
                     config: SolverConfig | None = None) -> PopulationSolution:
    config = config or SolverConfig(tol=_POP_SOLVE_TOL)
    theta_star = minimize_population(pop, 0.0, config)
    per_lambda = {}
    for lam in lambda_grid:
        lam = float(lam)
        if lam <= 0:
            raise ContractViolation("lambda grid entries must be positive")
        per_lambda[lam] = minimize_population(pop, lam, config)
    return PopulationSolution(
        population=pop,
        theta_star=theta_star,
        hessian_at_star=exact_hessian(pop, theta_star, 0.0),
        theta_lambda=per_lambda,
    )


def _hlam_factor(sol: PopulationSolution, lam: float):
    return chol_factor(add_ridge(sol.hessian_at_star, lam))


def bias_lambda(pop: FinitePopulation, sol: PopulationSolution, lam: float) -> float:
    """lambda * ||theta*||_{H_lambda(theta*)^{-1}}; always <= sqrt(lambda)||theta*||."""
    if lam <= 0:
        raise ContractViolation("bias_lambda requires lambda > 0")
    return lam * inv_norm(_hlam_factor(sol, lam), sol.theta_star)


def df_lambda(pop: FinitePopulation, sol: PopulationSolution, lam: float) -> float:
    """Exact degrees of freedom E ||grad l_Z(theta*)||^2_{H_lambda^{-1}(theta*)}."""
    if lam <= 0:
        raise ContractViolation("df_lambda requires lambda > 0")
    grads = pop.sample_set.grads(sol.theta_star)
    quads = inv_quad_rows(_hlam_factor(sol, lam), grads)
    return float(pop.weights @ quads)


def dikin_radius(pop: FinitePopulation, theta, lam: float) -> float:
    """Inverse of the largest H_lambda^{-1/2}-norm of a certificate vector.

    Returns inf when every certificate vector is zero (square loss).
    """
    if lam <= 0:
        raise ContractViolation("dikin_radius requires lambda > 0")
    rows = pop.sample_set.certificate_rows()
    if rows.shape[0] == 0:
        return math.inf
    factor = chol_factor(exact_hessian(pop, theta, lam))
    sup_sq = float(np.max(inv_quad_rows(factor, rows)))
    if sup_sq == 0.0:
        return math.inf
    return 1.0 / math.sqrt(sup_sq)


def t_lambda(pop: FinitePopulation, sol: PopulationSolution, lam: float) -> float:
    """Certificate seminorm of theta*_lambda - theta*, exact sup over atoms."""
    if lam <= 0:
        raise ContractViolation("t_lambda requires lambda > 0")
    direction = sol.theta_for(lam) - sol.theta_star
    return float(np.max(pop.sample_set.sc_factors(direction)))


def pointwise_bounds(pop: FinitePopulation, theta) -> tuple[float, float]:
    """Exact B1(theta) = sup ||grad l_z||, B2(theta) = sup Tr(hess l_z) over atoms."""
    sset = pop.sample_set
    theta = np.asarray(theta, dtype=float)
    return float(np.max(sset.grad_norms(theta))), float(np.max(sset.trace_hess(theta)))


# -- constants -----------------------------------------------------------------

_BERN_FACTOR = 2.0 * math.sqrt(2.0) * (1.0 + 1.0 / (2.0 * math.sqrt(3.0)))
_K_VAR_BASIC = (1.0 + scfun.psi(scfun.LOG2)) / scfun.phi_lower(scfun.LOG2) ** 2


@dataclass(frozen=True)
class ScConstants:
    """All lambda-dependent constants of the refined decomposition, plus the
    universal constants of the simplified analysis.

    ``branch`` records whether t_tilde = Bias/r_lambda(theta*) fell in the
    universal regime (<= 1/2, hence t_lambda <= log 2) or the exponential one.
    """

    lam: float
    t_lambda: float
    t_tilde: float
    branch: str
    k_bias: float
    k_var: float
    shift1: float
    shift2: float
    c_bias: float
    c_var: float
    n_factor_hessian: float
    n_factor_variance: float
    # simplified-setting constants (independent of lambda)
    k_var_basic: float = _K_VAR_BASIC
    bern_basic: float = _BERN_FACTOR
    c_bias_basic: float = 1.0 + _K_VAR_BASIC / 8.0
    c_var_basic: float = 2.0 * _K_VAR_BASIC * _BERN_FACTOR**2


def _constants_from_t(lam: float, tla: float, t_tilde: float) -> ScConstants:
    log2 = scfun.LOG2
    psi_shift = scfun.psi(tla + log2)
    phl_t = scfun.phi_lower(tla)
    phl_log2 = scfun.phi_lower(log2)
    e_t = math.exp(tla)
    shift1 = math.exp(tla / 2.0)
    shift2 = shift1 * (1.0 + e_t)
    k_bias = 2.0 * psi_shift / phl_t**2
    k_var = 2.0 * psi_shift * e_t / phl_log2**2
    c_bias = psi_shift * (2.0 / phl_t + e_t / phl_log2**2)
    c_var = 64.0 * psi_shift * e_t**2 / phl_log2**2
    tri1 = 576.0 * shift1**2 * shift2**2 * max(0.5, t_tilde) ** 2
    tri2 = 256.0 * shift1**4
    return ScConstants(
        lam=lam,
        t_lambda=tla,
        t_tilde=t_tilde,
        branch="universal" if t_tilde <= 0.5 else "exponential",
        k_bias=k_bias,
        k_var=k_var,
        shift1=shift1,
        shift2=shift2,
        c_bias=c_bias,
        c_var=c_var,
        n_factor_hessian=tri1,
        n_factor_variance=tri2,
    )


def constants_at(pop: FinitePopulation, sol: PopulationSolution, lam: float) -> ScConstants:
    """Evaluate every decomposition constant at the exact t_lambda and
    t_tilde = Bias_lambda / r_lambda(theta*) of this population."""
    tla = t_lambda(pop, sol, lam)
    radius = dikin_radius(pop, sol.theta_star, lam)
    bias = bias_lambda(pop, sol, lam)
    t_tilde = 0.0 if math.isinf(radius) else bias / radius
    return _constants_from_t(lam, tla, t_tilde)


# -- diagnostics over a lambda grid ---------------------------------------------

@dataclass(frozen=True)
class ExponentFit:
    value: float
    slope: float
    residual: float
    n_points: int


@dataclass(frozen=True)
class DiagnosticsReport:
    population_dim: int
    lambda_grid: np.ndarray
    bias: np.ndarray
    df: np.ndarray
    dikin: np.ndarray
    t_lambda: np.ndarray
    constants: tuple
    fitted_r: ExponentFit | None = None
    fitted_alpha: ExponentFit | None = None


def default_lambda_grid(b2_star: float, k_min: int = 0, k_max: int = 16) -> np.ndarray:
    """Geometric grid {2^-k} intersected with (0, B2*]."""
    grid = 2.0 ** -np.arange(k_min, k_max + 1, dtype=float)
    return grid[grid <= b2_star]


def compute_diagnostics(pop: FinitePopulation, lambda_grid,
                        config: SolverConfig | None = None,
                        fit_exponents: bool = True) -> DiagnosticsReport:
    """Bias, df, Dikin radius, t_lambda and constants on a lambda grid.

    The localization bound on t_lambda (t <= log 2 when Bias <= r/2, else
    t <= 2 R ||theta*||) is asserted at every grid point; a violation would
    falsify the implementation and raises immediately.
    """
    grid = np.sort(np.asarray(lambda_grid, dtype=float))[::-1]
    if grid.size == 0 or np.any(grid <= 0):
        raise ContractViolation("lambda grid must be nonempty and positive")
    sol = solve_population(pop, grid, config)
    sup = sup_norm_certificate(pop)
    theta_norm = float(np.linalg.norm(sol.theta_star))
    bias = np.array([bias_lambda(pop, sol, lam) for lam in grid])
    df = np.array([df_lambda(pop, sol, lam) for lam in grid])
    dik = np.array([dikin_radius(pop, sol.theta_star, lam) for lam in grid])
    tla = np.array([t_lambda(pop, sol, lam) for lam in grid])
    for i, lam in enumerate(grid):
        if bias[i] <= dik[i] / 2.0:
            bound = scfun.LOG2
        else:
            bound = 2.0 * sup * theta_norm
        if tla[i] > bound + 1e-9 * max(1.0, bound):
            raise ContractViolation(
                f"localization bound violated at lambda={lam}: t={tla[i]}, bound={bound}"
            )
    consts = tuple(
        _constants_from_t(lam, tla[i], 0.0 if math.isinf(dik[i]) else bias[i] / dik[i])
        for i, lam in enumerate(grid)
    )
    report = DiagnosticsReport(
        population_dim=pop.dim,
        lambda_grid=grid,
        bias=bias,
        df=df,
        dikin=dik,
        t_lambda=tla,
        constants=consts,
    )
    if fit_exponents and grid.size >= 3:
        report = DiagnosticsReport(
            **{**report.__dict__,
               "fitted_r": estimate_source_exponent(report),
               "fitted_alpha": estimate_capacity_exponent(report)},
        )
    return report


def sup_norm_certificate(pop: FinitePopulation) -> float:
    """R = sup over atoms of the largest certificate-vector norm."""
    return float(np.max(pop.sample_set.sc_sup_norms()))


def _loglog_fit(lams, values):
    x = np.log(np.asarray(lams, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    a = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


def _fit_window(report: DiagnosticsReport) -> np.ndarray:
    """Grid points clear of both spectral edges, located through df itself:
    df near the dimension means lambda fell below the spectrum, df near zero
    means lambda sits above it. Falls back to the central half by index."""
    d = report.population_dim
    mask = (report.df >= 2.0) & (report.df <= d / 4.0)
    if mask.sum() >= 3:
        return mask
    n = report.lambda_grid.size
    q = n // 4
    mask = np.zeros(n, dtype=bool)
    mask[q:n - q] = True
    if mask.sum() < 3:
        mask[:] = True
    return mask


def _check_grid(report: DiagnosticsReport):
    if np.unique(report.lambda_grid).size < 3:
        raise ContractViolation("exponent fit needs at least 3 distinct lambda values")


def estimate_source_exponent(report: DiagnosticsReport) -> ExponentFit:
    """Source exponent from the slope of log Bias vs log lambda.

    Bias ~ lambda^{(1+2r)/2}, so r_hat = slope - 1/2.
    """
    _check_grid(report)
    mask = _fit_window(report)
    slope, resid = _loglog_fit(report.lambda_grid[mask], np.maximum(report.bias[mask], 1e-300))
    return ExponentFit(value=slope - 0.5, slope=slope, residual=resid, n_points=int(mask.sum()))


def estimate_capacity_exponent(report: DiagnosticsReport) -> ExponentFit:
    """Capacity exponent from the slope of log df vs log lambda.

    df ~ lambda^{-1/alpha}, so alpha_hat = -1/slope; a flat fit (finite
    dimension saturating) reports alpha_hat = inf.
    """
    _check_grid(report)
    mask = _fit_window(report)
    slope, resid = _loglog_fit(report.lambda_grid[mask], np.maximum(report.df[mask], 1e-300))
    alpha = math.inf if slope >= -1e-6 else -1.0 / slope
    return ExponentFit(value=alpha, slope=slope, residual=resid, n_points=int(mask.sum()))


# -- synthetic constructions -----------------------------------------------------

def _capacity_constant(eigs: np.ndarray, alpha: float) -> float:
    lams = np.geomspace(min(eigs.min() * 1e-3, 1.0), 1.0, 400)
    df = (eigs[None, :] / (eigs[None, :] + lams[:, None])).sum(axis=1)
    return float(np.max(df * lams ** (1.0 / alpha)))


def make_source_population(d: int, r: float, alpha: float, seed: int) -> FinitePopulation:
    """Square-loss population with prescribed source and capacity exponents.

    The covariance is exactly diagonal with eigenvalues j^-alpha: direction j
    is carried by atoms +-s_j e_j of total probability q_j with
    q_j s_j^2 = j^-alpha. The direction probabilities are importance-weighted
    toward the top of the spectrum (q_j proportional to the square root of
    the eigenvalue), so finite draws rarely miss the directions that dominate
    the excess risk; missing a tail direction costs next to nothing. theta* =
    C^r v for a unit-norm v with decaying coordinates, and labels are
    theta*.Phi plus independent +-1 noise, so the population minimizer is
    theta* and df equals Tr(C (C + lambda)^{-1}) exactly. v's coordinate
    decay is j^-1/2 (the profile whose bias slope is exactly (1+2r)/2 for
    r < 1/2) and j^-3/4 at r = 1/2, where any summable profile gives slope 1
    and the faster decay suppresses the edge terms.
    """
    if d < 2:
        raise ContractViolation("source population needs d >= 2")
    if not 0.0 <= r <= 0.5:
        raise ContractViolation("r must lie in [0, 0.5] (source condition range)")
    if alpha < 1.0:
        raise ContractViolation("alpha must be >= 1 (capacity condition range)")
    rng = np.random.default_rng(seed)
    j = np.arange(1, d + 1, dtype=float)
    eigs = j**-alpha
    s_exp = 1.5 if r > 0.499 else 1.0
    v = j ** (-s_exp / 2.0)
    v /= np.linalg.norm(v)
    v *= rng.choice([-1.0, 1.0], size=d)
    theta_star = eigs**r * v
    probs = np.sqrt(eigs)
    probs /= probs.sum()
    scales = np.sqrt(eigs / probs)

    atoms = []
    weights = []
    for jj in range(d):
        phi = np.zeros(d)
        for sign_phi in (1.0, -1.0):
            phi_j = phi.copy()
            phi_j[jj] = sign_phi * scales[jj]
            mean = theta_star[jj] * sign_phi * scales[jj]
            for eps in (1.0, -1.0):
                atoms.append(Sample(features=phi_j, label=mean + eps))
                weights.append(probs[jj] / 4.0)
    weights = np.asarray(weights)
    weights /= weights.sum()
    meta = ConstructionMeta(
        kind="source",
        theta_star=theta_star,
        hess_eigenvalues=eigs,
        r=r,
        alpha=alpha,
        source_norm=1.0,
        capacity_q=_capacity_constant(eigs, alpha),
    )
    return FinitePopulation(atoms=tuple(atoms), weights=weights, loss=SquareLoss(), meta=meta)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def make_logistic_population(d: int, alpha: float, seed: int,
                             top_curvature: float = 0.25,
                             coeff_scale: float = 0.1) -> FinitePopulation:
    """Well-specified logistic population with a prescribed Hessian spectrum.

    Feature atoms are +-s_j e_j and labels are drawn from the true
    conditional P(y=+1 | x) = sigmoid(theta* . x) folded into atom weights,
    so theta* is the exact risk minimizer and the Bartlett identity holds.
    The margins m_j solve sigma(m)sigma(-m)m^2 = d h_j a_j^2 so that
    H(theta*) is diagonal with h_j = top_curvature * j^-alpha while
    theta*_j^2 = coeff_scale / j (a no-source coefficient profile: the bias
    exponent stays at the slow-rate value 1/2).
    """
    if d < 1:
        raise ContractViolation("d must be >= 1")
    if alpha < 0:
        raise ContractViolation("alpha must be nonnegative")
    rng = np.random.default_rng(seed)
    j = np.arange(1, d + 1, dtype=float)
    h = top_curvature * j**-alpha
    a2 = coeff_scale / j
    kappa = d * h * a2
    # g(m) = sigma(m)sigma(-m)m^2 increases on [0, 2.39] up to ~0.4395
    if np.any(kappa > 0.43):
        raise ContractViolation(
            "spectrum/coefficient profile infeasible: reduce top_curvature * coeff_scale * d"
        )
    margins = np.array([_bisect_margin(k) for k in kappa])
    theta_star = np.sqrt(a2) * rng.choice([-1.0, 1.0], size=d)
    scales = margins / np.abs(theta_star)

    atoms = []
    weights = []
    base = 1.0 / (2 * d)
    for jj in range(d):
        for sign_phi in (1.0, -1.0):
            phi = np.zeros(d)
            phi[jj] = sign_phi * scales[jj]
            m = theta_star[jj] * phi[jj]
            p_plus = float(_sigmoid(m))
            atoms.append(Sample(features=phi, label=1.0))
            weights.append(base * p_plus)
            atoms.append(Sample(features=phi, label=-1.0))
            weights.append(base * (1.0 - p_plus))
    meta = ConstructionMeta(
        kind="logistic",
        theta_star=theta_star,
        hess_eigenvalues=h,
        r=None,
        alpha=alpha,
        source_norm=None,
        capacity_q=None,
    )
    return FinitePopulation(
        atoms=tuple(atoms), weights=np.asarray(weights), loss=LogisticLoss(), meta=meta
    )


def _bisect_margin(kappa: float) -> float:
    """Solve sigma(m)sigma(-m)m^2 = kappa on [0, 2.39]."""
    if kappa <= 0:
        return 0.0

    def g(m):
        s = 1.0 / (1.0 + math.exp(-m))
        return s * (1.0 - s) * m * m - kappa

    lo, hi = 0.0, 2.39
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
