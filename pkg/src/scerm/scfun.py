"""Scalar auxiliary functions of the self-concordance calculus.

The three functions below appear throughout the inequality checks and the
constants: all are smooth with removable singularities at 0, where the closed
forms are 0/0. Below ``_SERIES_CUTOFF`` each is evaluated by its Taylor
expansion to avoid catastrophic cancellation (the omitted terms are O(t^3) and
well under 1e-13 at the cutoff).

    psi(t)       = (e^t - t - 1) / t^2,   psi(0)       = 1/2
    phi_lower(t) = (1 - e^-t) / t,        phi_lower(0) = 1
    phi_upper(t) = (e^t - 1) / t,         phi_upper(0) = 1
"""

import math

LOG2 = math.log(2.0)

_SERIES_CUTOFF = 1e-4


def psi(t: float) -> float:
    t = float(t)
    if abs(t) < _SERIES_CUTOFF:
        return 0.5 + t / 6.0 + t * t / 24.0
    return (math.expm1(t) - t) / (t * t)


def phi_lower(t: float) -> float:
    t = float(t)
    if abs(t) < _SERIES_CUTOFF:
        return 1.0 - t / 2.0 + t * t / 6.0 - t * t * t / 24.0
    return -math.expm1(-t) / t


def phi_upper(t: float) -> float:
    t = float(t)
    if abs(t) < _SERIES_CUTOFF:
        return 1.0 + t / 2.0 + t * t / 6.0 + t * t * t / 24.0
    return math.expm1(t) / t
