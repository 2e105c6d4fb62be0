import math

import numpy as np
import pytest

from qbsde.model import GridSpec
from qbsde.paths import generate, girsanov_weights
from qbsde.regress import BasisSpec, cond_expect, design_matrix, extract_z, extract_zeta


@pytest.fixture(scope="module")
def ens():
    return generate(GridSpec(T=1.0, n_steps=8, n_paths=30_000, seed=101))


BASIS = BasisSpec(degree=3)


class TestBasisSpec:
    def test_degree_cap(self):
        with pytest.raises(ValueError):
            BasisSpec(degree=7)

    def test_inputs_validated(self):
        with pytest.raises(ValueError):
            BasisSpec(inputs=("w3",))

    def test_design_shape(self, ens):
        phi = design_matrix(ens, 4, BASIS)
        # total degree <= 3 in two inputs: 1 + 2 + 3 + 4 columns
        assert phi.shape == (ens.n_paths, 10)
        assert np.all(phi[:, 0] == 1.0)


class TestCondExpect:
    def test_constant_targets(self, ens):
        for i in (0, 3, 7):
            fit = cond_expect(np.full(ens.n_paths, 2.5), i, ens, None, BASIS)
            np.testing.assert_allclose(fit, 2.5, rtol=1e-10)

    def test_target_in_span(self, ens):
        x = ens.w1_levels[:, 5]
        fit = cond_expect(x, 5, ens, None, BASIS)
        np.testing.assert_allclose(fit, x, atol=1e-8)

    def test_martingale_projection(self, ens):
        i = 4
        fit, se = cond_expect(ens.w1_levels[:, -1], i, ens, None, BASIS, return_se=True)
        dev = np.abs(fit - ens.w1_levels[:, i])
        assert dev.max() <= 5 * se.max()

    def test_linearity(self, ens):
        x = ens.w1_levels[:, -1]
        y = ens.w2_levels[:, -1] ** 2
        lhs = cond_expect(2.0 * x - 3.0 * y, 3, ens, None, BASIS)
        rhs = 2.0 * cond_expect(x, 3, ens, None, BASIS) - 3.0 * cond_expect(y, 3, ens, None, BASIS)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_idempotence(self, ens):
        fit = cond_expect(ens.w1_levels[:, -1] ** 3, 4, ens, None, BASIS)
        again = cond_expect(fit, 4, ens, None, BASIS)
        # relative to the field scale (the ridge term shifts refitted
        # coefficients at the 1e-10 level)
        np.testing.assert_allclose(again, fit, atol=1e-9 * np.abs(fit).max())

    def test_tower_property(self, ens):
        x = np.tanh(ens.w1_levels[:, -1])
        inner = cond_expect(x, 6, ens, None, BASIS)
        _, se_direct = cond_expect(x, 2, ens, None, BASIS, return_se=True)
        direct = cond_expect(x, 2, ens, None, BASIS)
        via, se_via = cond_expect(inner, 2, ens, None, BASIS, return_se=True)
        comb = np.sqrt(se_direct**2 + se_via**2)
        assert np.all(np.abs(via - direct) <= 5 * comb + 1e-10)

    def test_unit_weights_match_unweighted(self, ens):
        w = girsanov_weights(ens, np.zeros((ens.n_paths, ens.n_steps)), "w1")
        x = np.sin(ens.w1_levels[:, -1])
        np.testing.assert_array_equal(
            cond_expect(x, 3, ens, w, BASIS), cond_expect(x, 3, ens, None, BASIS)
        )

    def test_slice_zero_is_mean(self, ens):
        x = ens.w1_levels[:, -1] ** 2
        fit = cond_expect(x, 0, ens, None, BASIS)
        assert np.all(fit == x.mean())

    def test_weighted_slice_zero(self, ens):
        # weighted mean approximates the drifted measure's expectation
        lam = 0.5
        w = girsanov_weights(ens, lam, "w1")
        x = ens.w1_levels[:, -1]
        fit, se = cond_expect(x, 0, ens, w, BASIS, return_se=True)
        # under the new measure W1 has drift lam: E W1_T = lam * T
        assert abs(fit[0] - lam * ens.grid.T) <= 5 * se[0]


class TestExtract:
    @staticmethod
    def _loading_se(y_next, i, ens, driver, center=None):
        # replicate the internal regression target to recover its fit SE
        y = np.asarray(y_next, dtype=float)
        if center is not None:
            y = y - center
        target = y * ens.increments(driver)[:, i] / ens.dt
        _, se = cond_expect(target, i, ens, None, BASIS, weight_slice=i + 1, return_se=True)
        return se.max()

    def test_constant_has_no_loading(self, ens):
        y_next = np.full(ens.n_paths, 1.7)
        z = extract_z(y_next, 3, ens, None, BASIS)
        assert np.abs(z).max() <= 5 * self._loading_se(y_next, 3, ens, "w1")

    def test_identity_integrand(self, ens):
        i = 3
        center = ens.w1_levels[:, i]
        z = extract_z(ens.w1_levels[:, i + 1], i, ens, None, BASIS, center=center)
        se = self._loading_se(ens.w1_levels[:, i + 1], i, ens, "w1", center)
        assert np.abs(z - 1.0).max() <= 5 * se

    def test_orthogonal_driver_loads_zero(self, ens):
        i = 3
        z = extract_z(ens.w2_levels[:, i + 1], i, ens, None, BASIS, center=ens.w2_levels[:, i])
        zeta = extract_zeta(ens.w1_levels[:, i + 1], i, ens, None, BASIS, center=ens.w1_levels[:, i])
        assert np.abs(z).max() <= 5 * self._loading_se(
            ens.w2_levels[:, i + 1], i, ens, "w1", ens.w2_levels[:, i]
        )
        assert np.abs(zeta).max() <= 5 * self._loading_se(
            ens.w1_levels[:, i + 1], i, ens, "w2", ens.w1_levels[:, i]
        )

    def test_center_control_variate_reduces_noise(self, ens):
        i = 4
        y_next = np.full(ens.n_paths, 3.0) + 0.001 * ens.w1_increments[:, i]
        center = np.full(ens.n_paths, 3.0)
        raw = extract_z(y_next, i, ens, None, BASIS)
        centered = extract_z(y_next, i, ens, None, BASIS, center=center)
        # both estimate the same loading; the centered one is far tighter
        assert np.abs(centered - 0.001).max() < np.abs(raw - 0.001).max()

    def test_sigma_scaling(self, ens):
        i = 2
        y_next = np.tanh(ens.w1_levels[:, i + 1])
        z1 = extract_z(y_next, i, ens, None, BASIS, sigma_t=1.0)
        z2 = extract_z(y_next, i, ens, None, BASIS, sigma_t=2.0)
        np.testing.assert_allclose(z2, z1 / 2.0, rtol=1e-12)

    def test_terminal_slice_rejected(self, ens):
        with pytest.raises(ValueError):
            extract_z(np.zeros(ens.n_paths), ens.n_steps, ens, None, BASIS)
