"""Damped Newton minimizer for ridge-regularized (empirical or population) risk.

The ridge term makes the objective strongly convex for lambda > 0, so the
Newton step (H(theta) + lambda I) p = -grad always exists; a backtracking
line search guards the damped phase and the decrement

    sqrt(grad^T (H + lambda I)^{-1} grad)

doubles as the convergence certificate. On quadratic objectives (square loss)
the first full step is exact and the solver stops after one iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NonConvergenceError
from .linalg import chol_factor, chol_solve
from .losses import LossModel, SampleSet

__all__ = ["SolverConfig", "SolveResult", "solve_erm", "decrement", "newton_minimize"]


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 200
    ls_shrink: float = 0.5
    ls_sufficient: float = 1e-4
    ls_max_halvings: int = 60
    # below this decrement the predicted decrease dec^2/2 is unmeasurable in
    # double precision, so backtracking would be driven by rounding noise;
    # the full Newton step is taken undamped there
    pure_newton_below: float = 1e-4

    def __post_init__(self):
        if self.tol <= 0:
            raise ContractViolation("tol must be positive")
        if self.max_iter < 1:
            raise ContractViolation("max_iter must be >= 1")


@dataclass(frozen=True)
class SolveResult:
    theta_hat: np.ndarray
    decrement_trace: tuple
    iterations: int
    converged: bool


def _as_weights(weights, m):
    w = np.asarray(weights, dtype=float)
    if w.shape != (m,):
        raise ContractViolation(f"weights have shape {w.shape}, expected ({m},)")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ContractViolation("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ContractViolation("weights must have positive total mass")
    if abs(total - 1.0) > 1e-9:
        raise ContractViolation("weights must sum to 1")
    return w


def newton_minimize(sset: SampleSet, weights, lam: float, config: SolverConfig | None = None,
                    theta0: np.ndarray | None = None) -> SolveResult:
    """Minimize the weighted regularized risk over a stacked sample set.

    lam may be 0 here (population minimizers under an attainment guarantee);
    the public ``solve_erm`` enforces lam > 0. Raises NonConvergenceError,
    carrying the decrement trace, on iteration exhaustion, a failed line
    search, or a singular Hessian at lam = 0.
    """
    config = config or SolverConfig()
    if lam < 0:
        raise ContractViolation("lambda must be nonnegative")
    w = _as_weights(weights, len(sset))
    d = sset.dim
    theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)
    trace: list[float] = []

    def objective(t):
        return sset.weighted_value(w, t) + 0.5 * lam * float(t @ t)

    for _ in range(config.max_iter):
        g = sset.weighted_grad(w, theta) + lam * theta
        h = sset.weighted_hess(w, theta)
        h[np.diag_indices_from(h)] += lam
        try:
            factor = chol_factor(h)
        except ContractViolation as exc:
            raise NonConvergenceError(
                f"regularized Hessian not positive definite (lambda={lam}): {exc}", trace
            ) from exc
        step = -chol_solve(factor, g)
        gdotp = float(g @ step)
        dec = float(np.sqrt(max(-gdotp, 0.0)))
        trace.append(dec)
        if dec <= config.tol:
            theta.setflags(write=False)
            return SolveResult(theta, tuple(trace), len(trace) - 1, True)
        if dec < config.pure_newton_below:
            theta = theta + step
            continue
        f0 = objective(theta)
        t = 1.0
        accepted = False
        for _ in range(config.ls_max_halvings):
            cand = theta + t * step
            if objective(cand) <= f0 + config.ls_sufficient * t * gdotp:
                accepted = True
                break
            t *= config.ls_shrink
        if not accepted:
            raise NonConvergenceError("backtracking line search stalled", trace)
        theta = cand
    raise NonConvergenceError(
        f"no convergence to decrement {config.tol} within {config.max_iter} iterations", trace
    )


def solve_erm(samples, weights, loss: LossModel, lam: float,
              config: SolverConfig | None = None) -> SolveResult:
    """Unique minimizer of sum_i w_i l_{z_i}(theta) + lam/2 ||theta||^2, lam > 0."""
    if lam <= 0:
        raise ContractViolation("solve_erm requires lambda > 0")
    sset = samples if isinstance(samples, SampleSet) else SampleSet(loss, samples)
    return newton_minimize(sset, weights, lam, config)


def decrement(samples, weights, loss: LossModel, lam: float, theta) -> float:
    """Newton decrement sqrt(grad^T (H_hat + lam I)^{-1} grad) at theta."""
    if lam <= 0:
        raise ContractViolation("decrement requires lambda > 0")
    sset = samples if isinstance(samples, SampleSet) else SampleSet(loss, samples)
    w = _as_weights(weights, len(sset))
    theta = np.asarray(theta, dtype=float)
    g = sset.weighted_grad(w, theta) + lam * theta
    h = sset.weighted_hess(w, theta)
    h[np.diag_indices_from(h)] += lam
    factor = chol_factor(h)
    return float(np.sqrt(max(g @ chol_solve(factor, g), 0.0)))
