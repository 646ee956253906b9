"""Tests for the built-in targets"""
import json

import numpy as np
import pytest

from src.contracts import finite_difference_gradient
from src.errors import ConfigError
from src.metrics import damv
from src.targets import anisotropic_gaussian, gaussian_mixture, load_mixture, standard_gaussian, target_from_spec


class TestStandardGaussian:
    def test_minimum_at_origin(self, gauss2):
        assert gauss2.potential(np.zeros(2)) == 0.0
        np.testing.assert_array_equal(gauss2.gradient(np.zeros(2)), np.zeros(2))

    def test_quadratic(self, gauss2):
        x = np.array([3.0, 4.0])
        assert gauss2.potential(x) == pytest.approx(12.5)
        np.testing.assert_allclose(gauss2.gradient(x), x)
        np.testing.assert_allclose(gauss2.score(x), -x)

    def test_moments_and_lsi(self):
        target = standard_gaussian(3)
        mean, cov = target.analytic_moments
        np.testing.assert_array_equal(mean, np.zeros(3))
        np.testing.assert_array_equal(cov, np.eye(3))
        assert target.lsi_constant == 1.0

    def test_batched_potential(self, gauss2, rng):
        X = rng.standard_normal((5, 2))
        np.testing.assert_allclose(gauss2.potential(X), 0.5 * np.sum(X**2, axis=1))

    @pytest.mark.slow
    def test_sampled_damv(self):
        samples = standard_gaussian(4).sample(np.random.default_rng(0), 10**6)
        assert damv(samples) == pytest.approx(1.0, abs=0.01)

    def test_rejects_zero_dimension(self):
        with pytest.raises(ConfigError):
            standard_gaussian(0)


class TestAnisotropicGaussian:
    def test_identity_reduces_to_standard(self, rng):
        diag, std = anisotropic_gaussian([1.0, 1.0]), standard_gaussian(2)
        X = rng.standard_normal((4, 2))
        np.testing.assert_allclose(diag.potential(X), std.potential(X))
        np.testing.assert_allclose(diag.gradient(X), std.gradient(X))

    def test_formula(self):
        target = anisotropic_gaussian([4.0])
        assert target.potential(np.array([2.0])) == pytest.approx(0.5)
        np.testing.assert_allclose(target.gradient(np.array([2.0])), [0.5])
        assert target.lsi_constant == pytest.approx(0.25)

    def test_sampled_damv(self):
        target = anisotropic_gaussian([0.5, 2.0, 4.5])
        samples = target.sample(np.random.default_rng(1), 200_000)
        assert damv(samples) == pytest.approx(np.mean([0.5, 2.0, 4.5]), rel=0.02)

    @pytest.mark.parametrize("variances", [[1.0, 0.0], [-2.0], []])
    def test_rejects_bad_variances(self, variances):
        with pytest.raises(ConfigError):
            anisotropic_gaussian(variances)


class TestMixture:
    def test_single_component_is_shifted_gaussian(self, rng):
        center = np.array([1.0, -2.0])
        target = gaussian_mixture([center], [1.0], 1.0)
        X = rng.standard_normal((6, 2))
        np.testing.assert_allclose(target.gradient(X), X - center, atol=1e-12)
        shifted = standard_gaussian(2).potential(X - center)
        # F is defined up to a constant
        np.testing.assert_allclose(target.potential(X) - target.potential(center), shifted, atol=1e-12)

    def test_symmetric_midpoint(self):
        target = gaussian_mixture([[-2.0], [2.0]], [0.5, 0.5], 0.5)
        np.testing.assert_allclose(target.gradient(np.array([0.0])), [0.0], atol=1e-14)

    def test_gradient_matches_finite_differences(self, rng):
        target = gaussian_mixture([[0.0, 0.0], [3.0, 1.0], [-1.0, 2.0]], [0.2, 0.5, 0.3], 0.8)
        for x in 2.0 * rng.standard_normal((8, 2)):
            numeric = finite_difference_gradient(target.potential, x)
            np.testing.assert_allclose(numeric, target.gradient(x), rtol=1e-4, atol=1e-8)

    def test_no_moments_but_sampler(self, rng):
        target = gaussian_mixture([[-3.0], [3.0]], [0.5, 0.5], 1.0)
        assert not target.has_moments
        assert target.sample(rng, 7).shape == (7, 1)

    @pytest.mark.parametrize(
        "centers,weights,variance",
        [([], [], 1.0), ([[0.0]], [0.5], 1.0), ([[0.0], [1.0]], [1.0], 1.0), ([[0.0]], [1.0], 0.0)],
    )
    def test_rejects_bad_mixtures(self, centers, weights, variance):
        with pytest.raises(ConfigError):
            gaussian_mixture(centers, weights, variance)

    def test_load_mixture(self, tmp_path):
        path = tmp_path / "two.json"
        path.write_text(json.dumps({"centers": [[-1.0], [1.0]], "weights": [0.5, 0.5], "variance": 0.25}))
        target = target_from_spec(f"mix({path})")
        assert target.dimension == 1
        np.testing.assert_allclose(target.gradient(np.array([0.0])), [0.0], atol=1e-14)

    def test_load_mixture_missing_keys(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"centers": [[0.0]]}))
        with pytest.raises(ConfigError, match="lacks"):
            load_mixture(path)


class TestSpecs:
    def test_gauss(self):
        assert target_from_spec("gauss(5)").dimension == 5

    def test_gauss_diag(self):
        target = target_from_spec("gauss_diag(1.0,2.0)")
        np.testing.assert_array_equal(np.diag(target.analytic_moments[1]), [1.0, 2.0])

    @pytest.mark.parametrize("spec", ["gauss", "gauss(x)", "cauchy(1)", "mix()"])
    def test_bad_specs(self, spec):
        with pytest.raises(ConfigError):
            target_from_spec(spec)
