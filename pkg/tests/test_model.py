import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbsde.errors import DegenerateBounds
from qbsde.model import (
    GeneratorSpec,
    GridSpec,
    TerminalCondition,
    ball_inequality_holds,
    ball_radius,
    derive_bounds,
    smallness_threshold,
)


def make_gen(**kw):
    tc = kw.pop("terminal", TerminalCondition(family="tanh", scale=0.1))
    return GeneratorSpec(terminal=tc, **kw)


class TestGridSpec:
    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            GridSpec(T=1.0, n_steps=0, n_paths=100, seed=1)
        with pytest.raises(ValueError):
            GridSpec(T=1.0, n_steps=4, n_paths=1, seed=1)
        with pytest.raises(ValueError):
            GridSpec(T=0.0, n_steps=4, n_paths=100, seed=1)

    def test_times_endpoints(self):
        grid = GridSpec(T=2.0, n_steps=5, n_paths=10, seed=0)
        t = grid.times
        assert t[0] == 0.0
        assert t[-1] == 2.0
        assert np.all(np.diff(t) > 0)
        assert grid.dt == pytest.approx(0.4)


class TestTerminalCondition:
    def test_constant(self):
        tc = TerminalCondition(family="constant", scale=0.3)
        assert np.all(tc.evaluate(np.zeros(5), np.zeros(5)) == 0.3)

    def test_sup_norm_dominates_samples(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(2, 2000))
        for tc in (
            TerminalCondition(family="tanh", scale=0.7, offset=0.1),
            TerminalCondition(family="sin", scale=-0.4, driver="w2"),
            TerminalCondition(family="clipped_poly", scale=2.0, coeffs=(0.0, 1.0, 0.5), clip=0.6),
        ):
            vals = tc.evaluate(w[0], w[1])
            assert np.all(np.abs(vals) <= tc.sup_norm + 1e-12)

    def test_scaled_scales_values(self):
        rng = np.random.default_rng(1)
        w1, w2 = rng.normal(size=(2, 500))
        tc = TerminalCondition(family="tanh", scale=0.5, offset=0.2)
        half = tc.scaled(0.5)
        np.testing.assert_allclose(half.evaluate(w1, w2), 0.5 * tc.evaluate(w1, w2), rtol=1e-14)

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            TerminalCondition(family="spline")


class TestDeriveBounds:
    def test_pure_quadratic(self):
        b = derive_bounds(make_gen(gamma_q=1.0), 1.0)
        assert b.theta == 1.0
        assert b.r_const == 0.0
        assert b.beta == 8.0

    def test_affine(self):
        b = derive_bounds(make_gen(a=0.1, b=0.5), 1.0)
        assert b.r_const == 0.5
        assert b.r2_int_inf == pytest.approx(0.25)
        assert b.theta == 0.0
        assert b.beta == pytest.approx(2.0)

    def test_quadratic_gamma_four(self):
        b = derive_bounds(make_gen(gamma_q=4.0), 1.0)
        assert b.theta == 2.0
        assert b.beta == 32.0

    def test_bounds_dominate_sampled_derivatives(self):
        rng = np.random.default_rng(3)
        gen = make_gen(a=0.2, b=-0.4, c=0.3, gamma_q=0.7, mu=0.25, phi="tanh", g=0.1)
        bounds = derive_bounds(gen, 1.0)
        t = rng.uniform(0, 1, 1000)
        y = rng.uniform(-2, 2, 1000)
        v = rng.uniform(-3, 3, 1000)
        assert np.all(np.abs(gen.f_y(t, y, v)) <= bounds.r_const + 1e-12)
        assert np.all(np.abs(gen.f_zz(t, y, v)) <= bounds.theta**2 + 1e-12)
        assert np.all(np.abs(gen.f_yy(t, y, v)) <= bounds.r_const**2 + 1e-12)
        assert abs(gen.g) <= bounds.theta**2 + 1e-12

    @given(
        gamma=st.floats(0.0, 4.0),
        b=st.floats(0.0, 2.0),
        extra=st.floats(0.0, 1.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_beta_monotone(self, gamma, b, extra):
        lo = derive_bounds(make_gen(b=b, gamma_q=gamma), 1.0)
        hi = derive_bounds(make_gen(b=b + extra, gamma_q=gamma + extra), 1.0)
        assert hi.beta >= lo.beta


class TestThresholdAndBall:
    def test_threshold_values(self):
        assert smallness_threshold(derive_bounds(make_gen(gamma_q=1.0), 1.0)) == pytest.approx(1 / 256)
        assert smallness_threshold(derive_bounds(make_gen(b=0.5), 1.0)) == pytest.approx(
            math.exp(-1.0) / 64
        )
        assert smallness_threshold(derive_bounds(make_gen(gamma_q=4.0), 1.0)) == pytest.approx(1 / 1024)

    def test_degenerate(self):
        with pytest.raises(DegenerateBounds):
            smallness_threshold(derive_bounds(make_gen(), 1.0))

    def test_ball_radius(self):
        assert ball_radius(0.0) == 0.0
        assert ball_radius(0.001) == pytest.approx(0.0028284271247)

    def test_ball_inequality_at_threshold(self):
        # at the edge of the admissible terminal size the quadratic
        # inequality for the invariant radius still holds
        assert ball_inequality_holds(1 / 256, beta=8.0)

    @given(c=st.floats(0.0, 10.0), x=st.floats(0.0, 5.0))
    @settings(max_examples=50, deadline=None)
    def test_radius_homogeneous(self, c, x):
        assert ball_radius(c * x) == pytest.approx(c * ball_radius(x), rel=1e-12, abs=1e-300)
