"""Scalar Gaussian algebra shared by the BP and VMP engines.

Every message and belief in the engines is a :class:`Gaussian1D`.  Products
and extrinsic divisions are done in closed form; non-Gaussian messages (the
NLOS bias case) are collapsed back to a Gaussian by moment matching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special

# Engine-produced variances are clamped into [VARIANCE_FLOOR, VARIANCE_CEILING].
VARIANCE_FLOOR = 1e-12
VARIANCE_CEILING = 1e12

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class DegenerateExtrinsic(ArithmeticError):
    """Extrinsic division left no positive precision."""


class MomentMatchFailure(ArithmeticError):
    """Moments of a density could not be computed."""


@dataclass(frozen=True, slots=True)
class Gaussian1D:
    """Scalar Gaussian N(mean, var).  ``var == 0`` denotes a Dirac value."""

    mean: float
    var: float

    def __post_init__(self):
        if not math.isfinite(self.mean) or not (0.0 <= self.var < math.inf):
            raise ValueError(f"invalid Gaussian1D(mean={self.mean!r}, var={self.var!r})")

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    @property
    def precision(self) -> float:
        return math.inf if self.var == 0.0 else 1.0 / self.var

    @property
    def is_dirac(self) -> bool:
        return self.var == 0.0

    def scaled(self, factor: float) -> "Gaussian1D":
        """Distribution of ``factor * X``."""
        return Gaussian1D(factor * self.mean, factor * factor * self.var)


@dataclass(frozen=True, slots=True)
class Belief:
    """Per-node belief triple.  x and y in meters, theta in seconds."""

    x: Gaussian1D
    y: Gaussian1D
    theta: Gaussian1D

    def to_range_units(self, c: float) -> tuple[Gaussian1D, Gaussian1D, Gaussian1D]:
        """Return (x, y, c*theta) with the clock term in meters."""
        return self.x, self.y, self.theta.scaled(c)

    @classmethod
    def from_range_units(cls, triple, c: float) -> "Belief":
        x, y, p = triple
        return cls(x, y, p.scaled(1.0 / c))

    @property
    def mean(self) -> tuple[float, float, float]:
        return self.x.mean, self.y.mean, self.theta.mean


def clamp_variance(g: Gaussian1D) -> Gaussian1D:
    """Apply the engine variance floor and ceiling."""
    if g.var < VARIANCE_FLOOR:
        return Gaussian1D(g.mean, VARIANCE_FLOOR)
    if g.var > VARIANCE_CEILING:
        return Gaussian1D(g.mean, VARIANCE_CEILING)
    return g


def product(msgs: Sequence[Gaussian1D]) -> Gaussian1D:
    """Normalized product of Gaussian densities (precisions add)."""
    if len(msgs) == 0:
        raise ValueError("product of an empty message list")
    prec = 0.0
    info = 0.0
    for g in msgs:
        if g.var == 0.0:
            raise ValueError("Dirac factor in product; substitute the exact value instead")
        prec += 1.0 / g.var
        info += g.mean / g.var
    var = 1.0 / prec
    return Gaussian1D(var * info, var)


def divide(belief: Gaussian1D, factor_msg: Gaussian1D, eps: float = VARIANCE_FLOOR) -> Gaussian1D:
    """Remove ``factor_msg`` from ``belief`` (variable-to-factor message).

    Raises DegenerateExtrinsic when the remaining precision is not positive.
    """
    diff = factor_msg.var - belief.var
    if not diff > eps:
        raise DegenerateExtrinsic(
            f"message variance {factor_msg.var!r} does not exceed belief variance {belief.var!r}"
        )
    var = belief.var * factor_msg.var / diff
    mean = (belief.mean * factor_msg.var - factor_msg.mean * belief.var) / diff
    return Gaussian1D(mean, var)


def mmse_estimate(belief: Gaussian1D) -> float:
    return belief.mean


def moment_match(
    density: Callable[[float], float],
    center: float,
    scale: float,
    *,
    lower: float = -math.inf,
    upper: float = math.inf,
    width: float = 40.0,
    rtol: float = 1e-8,
) -> Gaussian1D:
    """Gaussian with the first two moments of an unnormalized ``density``.

    The integral runs over ``center +- width * scale`` clipped to
    ``[lower, upper]``.  ``scale`` should be the combined standard deviation
    of the density; 40 of them keep exponential tails below 1e-10 mass.
    """
    if not (math.isfinite(center) and scale > 0 and math.isfinite(scale)):
        raise MomentMatchFailure(f"bad window center={center!r} scale={scale!r}")
    lo = max(lower, center - width * scale)
    hi = min(upper, center + width * scale)
    if not hi > lo:
        raise MomentMatchFailure("empty integration window")

    def integrand(t):
        f = density(t)
        u = t - center
        return np.array([f, f * u, f * u * u])

    points = [p for p in (center,) if lo < p < hi]
    try:
        res, err = integrate.quad_vec(integrand, lo, hi, epsrel=rtol, epsabs=0.0, points=points or None)
    except Exception as exc:  # scipy raises a variety of types on bad integrands
        raise MomentMatchFailure(str(exc)) from exc
    z0, z1, z2 = res
    if not (np.all(np.isfinite(res)) and z0 > 0):
        raise MomentMatchFailure(f"non-finite or zero mass moments {res!r}")
    m1 = z1 / z0
    var = z2 / z0 - m1 * m1
    if not var > 0:
        raise MomentMatchFailure(f"non-positive variance {var!r}")
    return Gaussian1D(center + m1, var)


def exp_modified_moments(mean: float, var: float, rate: float) -> Gaussian1D:
    """Moments of ``mean + eps - b`` with eps ~ N(0, var), b ~ Exp(rate)."""
    return Gaussian1D(mean - 1.0 / rate, var + 1.0 / (rate * rate))


def truncated_normal_moments(mean: float, var: float, lower: float = 0.0) -> Gaussian1D:
    """Moments of N(mean, var) restricted to ``(lower, inf)``."""
    s = math.sqrt(var)
    alpha = (lower - mean) / s
    # inverse Mills ratio phi(a)/Q(a), written through erfcx for large a
    r = _SQRT_2_OVER_PI / special.erfcx(alpha / math.sqrt(2.0))
    m = mean + s * r
    v = var * (1.0 + alpha * r - r * r)
    if not v > 0:
        v = VARIANCE_FLOOR
    return Gaussian1D(m, v)
