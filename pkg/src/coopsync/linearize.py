"""First-order expansion of the inter-node range around position estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass

# Estimates closer than this (meters) have no usable direction.
DELTA_MIN = 1e-6


class SingularGeometry(ArithmeticError):
    """The two expansion points coincide."""


@dataclass(frozen=True, slots=True)
class LinearizedRange:
    """Range estimate ``d_hat`` and unit direction (``lam``, ``gam``) from j to i."""

    d_hat: float
    lam: float
    gam: float


def linearize(xi_hat: tuple[float, float], xj_hat: tuple[float, float],
              delta_min: float = DELTA_MIN) -> LinearizedRange:
    """Expand ||x_i - x_j|| around the estimates of node i and node j.

    For an anchor, pass its true position as ``xj_hat``.  ``lam`` and ``gam``
    are the partial derivatives of the range with respect to x_i and y_i.
    """
    dx = xi_hat[0] - xj_hat[0]
    dy = xi_hat[1] - xj_hat[1]
    d = math.hypot(dx, dy)
    if not d > delta_min:
        raise SingularGeometry(f"expansion points {xi_hat} and {xj_hat} coincide")
    return LinearizedRange(d, dx / d, dy / d)


def linearized_range(lin: LinearizedRange, xi_hat, xj_hat, xi, xj):
    """Evaluate the first-order range model at (xi, xj).  Works on arrays."""
    return (lin.d_hat
            + lin.lam * (xi[0] - xi_hat[0]) + lin.gam * (xi[1] - xi_hat[1])
            + lin.lam * (xj_hat[0] - xj[0]) + lin.gam * (xj_hat[1] - xj[1]))
