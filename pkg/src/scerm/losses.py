"""Catalog of generalized self-concordant losses.

Each loss supplies per-sample value / gradient / Hessian together with the
certificate factor

    sc_factor(z, k) = sup over the certificate vectors g of z of |k . g|,

which bounds the directional third derivative by sc_factor * (Hessian
quadratic form). The certificate vectors are {0} for the square loss,
{3 Phi(x)} and {2 Phi(x)} for the two Huber variants, {y Phi(x)} for the
logistic loss and {2 Phi(x, y')} over the label set for the softmax GLM.

A ``SampleSet`` stacks many samples into dense arrays so that population
sums and empirical risks are single BLAS calls; the per-sample operations are
thin wrappers over the same code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DomainError

__all__ = [
    "Sample",
    "LossModel",
    "SquareLoss",
    "HuberSqrtLoss",
    "HuberLogCoshLoss",
    "LogisticLoss",
    "SoftmaxGLMLoss",
    "SampleSet",
    "SupConstants",
    "eval_loss",
    "grad_loss",
    "hess_loss",
    "sc_factor",
    "sup_constants",
    "LOSS_KINDS",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Sample:
    """One observation z = (features, label).

    For the scalar losses ``features`` is the representation Phi(x) of shape
    (d,) and ``label`` is a real number (for the logistic loss it must be
    +1 or -1). For the softmax GLM ``features`` holds one d-vector per label,
    shape (n_labels, d), and ``label`` is the observed label index.
    """

    features: np.ndarray
    label: float

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim not in (1, 2) or feats.shape[-1] < 1:
            raise ContractViolation(f"features must be (d,) or (n_labels, d), got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise DomainError("features contain non-finite entries")
        if not np.isfinite(self.label):
            raise DomainError("label is non-finite")
        if feats.ndim == 2:
            idx = int(self.label)
            if idx != self.label or not 0 <= idx < feats.shape[0]:
                raise ContractViolation(
                    f"GLM label index {self.label} outside [0, {feats.shape[0]})"
                )
        object.__setattr__(self, "features", _readonly(feats))

    @property
    def dim(self) -> int:
        return self.features.shape[-1]

    @property
    def is_glm(self) -> bool:
        return self.features.ndim == 2


def _check_theta(theta: np.ndarray, d: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (d,):
        raise ContractViolation(f"parameter has shape {theta.shape}, expected ({d},)")
    if not np.all(np.isfinite(theta)):
        raise DomainError("parameter contains non-finite entries")
    return theta


class LossModel:
    """Base class; concrete losses define the scalar link or the GLM sums."""

    kind: str = ""
    is_glm: bool = False

    # -- per-sample interface -------------------------------------------------
    def value(self, z: Sample, theta: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, z: Sample, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess(self, z: Sample, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sc_factor(self, z: Sample, k: np.ndarray) -> float:
        raise NotImplementedError

    def sc_sup_norm(self, z: Sample) -> float:
        """sup over certificate vectors of ||g|| (exact for every kind)."""
        raise NotImplementedError

    def validate_sample(self, z: Sample) -> None:
        if z.is_glm != self.is_glm:
            raise ContractViolation(
                f"{self.kind} expects {'GLM' if self.is_glm else 'scalar'} samples"
            )

    def __repr__(self):
        return f"{type(self).__name__}()"


class _ScalarLoss(LossModel):
    """Losses of the form l_z(theta) = f(theta . Phi(x); y).

    Subclasses provide vectorized ``_f``, ``_fp``, ``_fpp`` (value and the
    first two derivatives in the margin u = theta . Phi) plus the constant
    ``sc_coef`` with certificate set {sc_coef * Phi(x)} (sign irrelevant).
    """

    sc_coef: float = 0.0

    def _f(self, u, y):
        raise NotImplementedError

    def _fp(self, u, y):
        raise NotImplementedError

    def _fpp(self, u, y):
        raise NotImplementedError

    def value(self, z, theta):
        self.validate_sample(z)
        theta = _check_theta(theta, z.dim)
        return float(self._f(z.features @ theta, z.label))

    def grad(self, z, theta):
        self.validate_sample(z)
        theta = _check_theta(theta, z.dim)
        return float(self._fp(z.features @ theta, z.label)) * z.features

    def hess(self, z, theta):
        self.validate_sample(z)
        theta = _check_theta(theta, z.dim)
        c = float(self._fpp(z.features @ theta, z.label))
        return c * np.outer(z.features, z.features)

    def sc_factor(self, z, k):
        self.validate_sample(z)
        k = _check_theta(k, z.dim)
        return self.sc_coef * abs(float(k @ z.features))

    def sc_sup_norm(self, z):
        self.validate_sample(z)
        return self.sc_coef * float(np.linalg.norm(z.features))


class SquareLoss(_ScalarLoss):
    """l = (y - u)^2 / 2; quadratic, certificate set {0}."""

    kind = "square"
    sc_coef = 0.0

    def _f(self, u, y):
        return 0.5 * (y - u) ** 2

    def _fp(self, u, y):
        return u - y

    def _fpp(self, u, y):
        return np.ones_like(np.asarray(u, dtype=float))


class HuberSqrtLoss(_ScalarLoss):
    """l = sqrt(1 + (y-u)^2) - 1."""

    kind = "huber_sqrt"
    sc_coef = 3.0

    def _f(self, u, y):
        t = y - u
        return np.sqrt(1.0 + t * t) - 1.0

    def _fp(self, u, y):
        t = y - u
        return -t / np.sqrt(1.0 + t * t)

    def _fpp(self, u, y):
        t = y - u
        return (1.0 + t * t) ** -1.5


class HuberLogCoshLoss(_ScalarLoss):
    """l = log cosh(y - u), written as |t| + log1p(e^{-2|t|}) - log 2."""

    kind = "huber_logcosh"
    sc_coef = 2.0

    def _f(self, u, y):
        t = np.abs(y - u)
        return t + np.log1p(np.exp(-2.0 * t)) - np.log(2.0)

    def _fp(self, u, y):
        return -np.tanh(y - u)

    def _fpp(self, u, y):
        return np.cosh(y - u) ** -2.0


def _log1pexp(x):
    """log(1 + e^x), overflow-safe for large |x|."""
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class LogisticLoss(_ScalarLoss):
    """l = log(1 + e^{-y u}) with labels y in {-1, +1}."""

    kind = "logistic"
    sc_coef = 1.0

    def validate_sample(self, z):
        super().validate_sample(z)
        if z.label not in (-1.0, 1.0):
            raise ContractViolation(f"logistic label must be +1 or -1, got {z.label}")

    def _f(self, u, y):
        return _log1pexp(-y * np.asarray(u, dtype=float))

    def _fp(self, u, y):
        return -y * _sigmoid(-y * np.asarray(u, dtype=float))

    def _fpp(self, u, y):
        m = y * np.asarray(u, dtype=float)
        return _sigmoid(m) * _sigmoid(-m)


class SoftmaxGLMLoss(LossModel):
    """Negative conditional log-likelihood of a softmax model over a finite
    label set with a priori measure mu:

        l = -theta . Phi(x, y) + log sum_{y'} mu(y') exp(theta . Phi(x, y'))

    evaluated through a max-shifted log-sum-exp. Certificate set
    {2 Phi(x, y') : y' in labels}.
    """

    kind = "softmax_glm"
    is_glm = True

    def __init__(self, base_measure):
        mu = np.asarray(base_measure, dtype=float)
        if mu.ndim != 1 or mu.size < 2:
            raise ContractViolation("base_measure must be a vector of >= 2 weights")
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise ContractViolation("base_measure weights must be positive and finite")
        self.base_measure = _readonly(mu)
        self.n_labels = mu.size

    def __repr__(self):
        return f"SoftmaxGLMLoss(base_measure={self.base_measure.tolist()})"

    def validate_sample(self, z):
        super().validate_sample(z)
        if z.features.shape[0] != self.n_labels:
            raise ContractViolation(
                f"sample has {z.features.shape[0]} label rows, base measure has {self.n_labels}"
            )

    def _scores(self, feats, theta):
        # log mu(y') + theta . Phi(x, y'), shape (n_labels,)
        return feats @ theta + np.log(self.base_measure)

    def _probs_logz(self, feats, theta):
        s = self._scores(feats, theta)
        smax = s.max()
        es = np.exp(s - smax)
        zsum = es.sum()
        return es / zsum, smax + np.log(zsum)

    def value(self, z, theta):
        self.validate_sample(z)
        theta = _check_theta(theta, z.dim)
        _, logz = self._probs_logz(z.features, theta)
        return float(logz - z.features[int(z.label)] @ theta)

    def grad(self, z, theta):
        self.validate_sample(z)
        theta = _check_theta(theta, z.dim)
        p, _ = self._probs_logz(z.features, theta)
        return p @ z.features - z.features[int(z.label)]

    def hess(self, z, theta):
        self.validate_sample(z)
        theta = _check_theta(theta, z.dim)
        p, _ = self._probs_logz(z.features, theta)
        mean = p @ z.features
        h = (z.features.T * p) @ z.features - np.outer(mean, mean)
        return 0.5 * (h + h.T)

    def sc_factor(self, z, k):
        self.validate_sample(z)
        k = _check_theta(k, z.dim)
        return 2.0 * float(np.max(np.abs(z.features @ k)))

    def sc_sup_norm(self, z):
        self.validate_sample(z)
        return 2.0 * float(np.max(np.linalg.norm(z.features, axis=1)))


LOSS_KINDS = {
    "square": SquareLoss,
    "huber_sqrt": HuberSqrtLoss,
    "huber_logcosh": HuberLogCoshLoss,
    "logistic": LogisticLoss,
    "softmax_glm": SoftmaxGLMLoss,
}


# -- spec-level functional surface --------------------------------------------

def eval_loss(loss: LossModel, z: Sample, theta) -> float:
    return loss.value(z, theta)


def grad_loss(loss: LossModel, z: Sample, theta) -> np.ndarray:
    return loss.grad(z, theta)


def hess_loss(loss: LossModel, z: Sample, theta) -> np.ndarray:
    return loss.hess(z, theta)


def sc_factor(loss: LossModel, z: Sample, k) -> float:
    return loss.sc_factor(z, k)


# -- stacked representation ----------------------------------------------------

class SampleSet:
    """Immutable stack of samples sharing one loss, with vectorized sums.

    Scalar losses stack features into X (m, d) and labels into y (m,);
    the softmax GLM stacks features into (m, n_labels, d) and label indices
    into (m,). Weighted risks, gradients and Hessians over the stack are
    exact finite sums.
    """

    def __init__(self, loss: LossModel, samples):
        samples = tuple(samples)
        if not samples:
            raise ContractViolation("empty sample list")
        for z in samples:
            loss.validate_sample(z)
        d = samples[0].dim
        if any(z.dim != d for z in samples):
            raise ContractViolation("samples disagree on feature dimension")
        self.loss = loss
        self.samples = samples
        self.dim = d
        if loss.is_glm:
            shapes = {z.features.shape for z in samples}
            if len(shapes) != 1:
                raise ContractViolation("GLM samples disagree on label-set size")
            self.features = _readonly(np.stack([z.features for z in samples]))
            self.labels = np.array([int(z.label) for z in samples])
            self.labels.setflags(write=False)
        else:
            self.features = _readonly(np.stack([z.features for z in samples]))
            self.labels = _readonly(np.array([z.label for z in samples]))

    def __len__(self):
        return len(self.samples)

    # -- scalar-loss internals
    def _margins(self, theta):
        return self.features @ theta

    def values(self, theta) -> np.ndarray:
        """Per-sample loss values, shape (m,)."""
        theta = _check_theta(theta, self.dim)
        loss = self.loss
        if not loss.is_glm:
            return np.asarray(loss._f(self._margins(theta), self.labels), dtype=float)
        s = self.features @ theta + np.log(loss.base_measure)[None, :]
        smax = s.max(axis=1)
        logz = smax + np.log(np.exp(s - smax[:, None]).sum(axis=1))
        picked = np.take_along_axis(
            self.features @ theta, self.labels[:, None], axis=1
        ).ravel()
        return logz - picked

    def grads(self, theta) -> np.ndarray:
        """Per-sample gradients, shape (m, d)."""
        theta = _check_theta(theta, self.dim)
        loss = self.loss
        if not loss.is_glm:
            fp = np.asarray(loss._fp(self._margins(theta), self.labels), dtype=float)
            return fp[:, None] * self.features
        p = self._glm_probs(theta)
        mean = np.einsum("ml,mld->md", p, self.features)
        picked = self.features[np.arange(len(self)), self.labels]
        return mean - picked

    def _glm_probs(self, theta):
        s = self.features @ theta + np.log(self.loss.base_measure)[None, :]
        s -= s.max(axis=1, keepdims=True)
        es = np.exp(s)
        return es / es.sum(axis=1, keepdims=True)

    def weighted_value(self, weights, theta) -> float:
        return float(weights @ self.values(theta))

    def weighted_grad(self, weights, theta) -> np.ndarray:
        loss = self.loss
        theta = _check_theta(theta, self.dim)
        if not loss.is_glm:
            fp = np.asarray(loss._fp(self._margins(theta), self.labels), dtype=float)
            return (weights * fp) @ self.features
        return weights @ self.grads(theta)

    def weighted_hess(self, weights, theta) -> np.ndarray:
        loss = self.loss
        theta = _check_theta(theta, self.dim)
        if not loss.is_glm:
            fpp = np.asarray(loss._fpp(self._margins(theta), self.labels), dtype=float)
            h = (self.features.T * (weights * fpp)) @ self.features
        else:
            p = self._glm_probs(theta)
            wp = weights[:, None] * p
            h = np.einsum("ml,mld,mle->de", wp, self.features, self.features)
            means = np.einsum("ml,mld->md", p, self.features)
            h -= np.einsum("m,md,me->de", weights, means, means)
        return 0.5 * (h + h.T)

    def trace_hess(self, theta) -> np.ndarray:
        """Per-sample Tr(hessian), shape (m,)."""
        loss = self.loss
        theta = _check_theta(theta, self.dim)
        if not loss.is_glm:
            fpp = np.asarray(loss._fpp(self._margins(theta), self.labels), dtype=float)
            return fpp * np.einsum("md,md->m", self.features, self.features)
        p = self._glm_probs(theta)
        sq = np.einsum("mld,mld->ml", self.features, self.features)
        means = np.einsum("ml,mld->md", p, self.features)
        return np.einsum("ml,ml->m", p, sq) - np.einsum("md,md->m", means, means)

    def grad_norms(self, theta) -> np.ndarray:
        return np.linalg.norm(self.grads(theta), axis=1)

    def sc_factors(self, k) -> np.ndarray:
        """Per-sample sup over certificate vectors of |k . g|, shape (m,)."""
        loss = self.loss
        k = _check_theta(k, self.dim)
        if not loss.is_glm:
            return loss.sc_coef * np.abs(self.features @ k)
        return 2.0 * np.max(np.abs(self.features @ k), axis=1)

    def sc_sup_norms(self) -> np.ndarray:
        loss = self.loss
        if not loss.is_glm:
            return loss.sc_coef * np.linalg.norm(self.features, axis=1)
        return 2.0 * np.max(np.linalg.norm(self.features, axis=2), axis=1)

    def certificate_rows(self) -> np.ndarray:
        """All certificate vectors stacked row-wise (empty for the square loss)."""
        loss = self.loss
        if not loss.is_glm:
            if loss.sc_coef == 0.0:
                return np.zeros((0, self.dim))
            return loss.sc_coef * self.features
        return 2.0 * self.features.reshape(-1, self.dim)


# -- sup constants over a parameter ball ---------------------------------------

@dataclass(frozen=True)
class SupConstants:
    """Bounds B1 >= sup ||grad||, B2 >= sup Tr(hess) over the ball, R exact.

    ``exact`` records whether B1/B2 came from a closed form (scalar losses)
    or from the deterministic evaluation grid (softmax GLM).
    """

    b1: float
    b2: float
    r: float
    exact: bool


_GRID_DIRECTIONS = 64
_GRID_RADII = 32


def sup_constants(loss: LossModel, support, radius: float) -> SupConstants:
    """Derivative bounds over {||theta|| <= radius} and the certificate radius R.

    Scalar losses use exact closed forms: the square and Huber losses restrict
    the residual/margin to its exact range over the ball, the logistic loss
    uses its global Lipschitz and curvature bounds sup||Phi|| and
    sup||Phi||^2/4 (valid for every radius). The softmax GLM falls back to a
    deterministic grid of 64 directions x 32 radii and is flagged estimated.
    """
    support = tuple(support)
    if not support:
        raise ContractViolation("empty support")
    if radius < 0:
        raise ContractViolation("radius must be nonnegative")
    sset = SampleSet(loss, support)
    r_cert = float(np.max(sset.sc_sup_norms())) if len(support) else 0.0

    if not loss.is_glm:
        phi_norms = np.linalg.norm(sset.features, axis=1)
        y = sset.labels
        if isinstance(loss, SquareLoss):
            t_hi = np.abs(y) + radius * phi_norms
            b1 = float(np.max(t_hi * phi_norms))
            b2 = float(np.max(phi_norms**2))
        elif isinstance(loss, LogisticLoss):
            b1 = float(np.max(phi_norms))
            b2 = float(np.max(phi_norms**2)) / 4.0
        else:
            # Huber losses: residual t = y - u ranges over an interval whose
            # extreme |t| values give the exact sups of |psi'| and psi''.
            t_hi = np.abs(y) + radius * phi_norms
            t_lo = np.maximum(np.abs(y) - radius * phi_norms, 0.0)
            if isinstance(loss, HuberSqrtLoss):
                b1 = float(np.max(t_hi / np.sqrt(1.0 + t_hi**2) * phi_norms))
                b2 = float(np.max((1.0 + t_lo**2) ** -1.5 * phi_norms**2))
            else:
                b1 = float(np.max(np.tanh(t_hi) * phi_norms))
                b2 = float(np.max(np.cosh(t_lo) ** -2.0 * phi_norms**2))
        return SupConstants(b1=b1, b2=b2, r=r_cert, exact=True)

    # Softmax GLM: deterministic direction/radius grid.
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((_GRID_DIRECTIONS, sset.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.linspace(0.0, radius, _GRID_RADII)
    b1 = 0.0
    b2 = 0.0
    for u in dirs:
        for rad in radii:
            theta = rad * u
            b1 = max(b1, float(np.max(sset.grad_norms(theta))))
            b2 = max(b2, float(np.max(sset.trace_hess(theta))))
    return SupConstants(b1=b1, b2=b2, r=r_cert, exact=False)
