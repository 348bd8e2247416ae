import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from coopsync.linearize import SingularGeometry, linearize, linearized_range

coords = st.floats(-100, 100)
points = st.tuples(coords, coords)


def test_three_four_five():
    lin = linearize((0, 0), (3, 4))
    assert_allclose([lin.d_hat, lin.lam, lin.gam], [5, -0.6, -0.8], rtol=1e-15)


def test_axis_aligned():
    lin = linearize((0, 0), (1, 0))
    assert_allclose([lin.d_hat, lin.lam, lin.gam], [1, -1, 0], atol=1e-15)


def test_coincident_points_raise():
    with pytest.raises(SingularGeometry):
        linearize((1, 1), (1, 1))
    with pytest.raises(SingularGeometry):
        linearize((1, 1), (1 + 5e-7, 1))


@settings(max_examples=200, deadline=None)
@given(points, points)
def test_unit_direction(p, q):
    assume(math.dist(p, q) > 1e-3)
    lin = linearize(p, q)
    assert_allclose(lin.lam**2 + lin.gam**2, 1.0, rtol=1e-12)
    assert lin.d_hat > 0


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(1000):
        p, q = rng.uniform(-50, 50, 2), rng.uniform(-50, 50, 2)
        lin = linearize(tuple(p), tuple(q))
        dx = (np.hypot(*(p + [h, 0] - q)) - np.hypot(*(p - [h, 0] - q))) / (2 * h)
        dy = (np.hypot(*(p + [0, h] - q)) - np.hypot(*(p - [0, h] - q))) / (2 * h)
        assert abs(dx - lin.lam) <= 1e-6 and abs(dy - lin.gam) <= 1e-6


@settings(max_examples=200, deadline=None)
@given(points, points, st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi), st.floats(0, 0.01),
       st.floats(0, 0.01))
def test_first_order_error_bound(p, q, a1, a2, r1, r2):
    d = math.dist(p, q)
    assume(d > 1e-2)
    lin = linearize(p, q)
    di = np.array([math.cos(a1), math.sin(a1)]) * r1 * d
    dj = np.array([math.cos(a2), math.sin(a2)]) * r2 * d
    xi, xj = np.array(p) + di, np.array(q) + dj
    approx = linearized_range(lin, p, q, xi, xj)
    true = math.dist(xi, xj)
    delta = math.hypot(*(di - dj))
    assert abs(approx - true) <= delta**2 / d + 1e-12 * d
