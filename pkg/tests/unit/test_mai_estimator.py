"""
Tests unitaires pour mai_estimator.py

Indexes, régresseurs, étape GLS pour ω, initialisations et switching.
Les ω ne sont identifiés qu'à une matrice inversible près: les
comparaisons passent par les angles principaux entre sous-espaces.
"""

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.linalg import subspace_angles

from src.errors import InsufficientSampleError, RankDeficiencyError, SpecValidationError
from src.mai_estimator import (
    build_indexes,
    build_regressors,
    canonical_basis,
    filter_with_omega,
    fit_fixed_omega,
    fix_signs,
    forecast_from_fit,
    init_omega_pca,
    init_omega_restricted,
    iterate_mean,
    omega_ols_step,
    orthonormal_omega,
    switching_estimate
)
from src.models import GroupTemplate, IndexWeights, ModelSpec
from src.panel import standardize


class TestBuildIndexes:
    """Tests pour build_indexes"""

    def test_selection_matrix(self, rng):
        """ω = premières colonnes de l'identité -> séries recopiées"""
        y = rng.normal(size=(10, 4))

        f = build_indexes(y, np.eye(4)[:, :2])

        np.testing.assert_array_equal(f, y[:, :2])

    def test_averaging_weights(self, rng):
        """Colonne 1/N -> moyenne transversale"""
        y = rng.normal(size=(10, 5))

        f = build_indexes(y, np.full((5, 1), 0.2))

        np.testing.assert_allclose(f[:, 0], y.mean(axis=1))

    def test_accepts_panel_and_index_weights(self, simulated_panel):
        omega = IndexWeights(omega=np.ones((3, 1)))

        f = build_indexes(simulated_panel, omega)

        np.testing.assert_allclose(f[:, 0], simulated_panel.values.sum(axis=1))

    def test_dimension_mismatch(self, rng):
        with pytest.raises(SpecValidationError):
            build_indexes(rng.normal(size=(5, 3)), np.ones((4, 1)))


class TestBuildRegressors:
    """Tests pour build_regressors"""

    def test_degenerate_kronecker(self):
        """N=1, q=1, p=1 -> Z_t = f_{t-1}"""
        Z = build_regressors(np.array([[2.0], [5.0], [7.0]]), p=1, N=1)

        assert Z.shape == (2, 1, 1)
        assert Z[0, 0, 0] == 2.0
        assert Z[1, 0, 0] == 5.0

    def test_identity_block(self):
        """N=2, q=1, f_{t-1}=3 -> [[3,0],[0,3]]"""
        Z = build_regressors(np.array([[3.0], [1.0]]), p=1, N=2)

        np.testing.assert_array_equal(Z[0], [[3.0, 0.0], [0.0, 3.0]])

    def test_matches_explicit_loop(self, rng):
        """Z_t β = Σ_j Σ_h β_{i,h,j} f_{j,t-h-1}"""
        N, q, p, T = 3, 2, 2, 8
        f = rng.normal(size=(T, q))
        beta = rng.normal(size=N * p * q)

        Z = build_regressors(f, p, N)

        B = beta.reshape(N, p, q)
        for row, t in enumerate(range(p, T)):
            expected = np.zeros(N)
            for i in range(N):
                for j in range(q):
                    for h in range(p):
                        expected[i] += B[i, h, j] * f[t - h - 1, j]
            np.testing.assert_allclose(Z[row] @ beta, expected, atol=1e-12)


class TestIterateMean:
    """Tests pour iterate_mean"""

    def test_var_one_iteration(self):
        """q=N, ω=I: y_{t+h} = B^h y_t"""
        B = np.array([[0.5, 0.1], [0.0, 0.3]])
        history = np.array([[1.0, 2.0]])

        path = iterate_mean(B.reshape(-1), np.eye(2), history, 3)

        np.testing.assert_allclose(path[0], B @ history[0])
        np.testing.assert_allclose(path[2], np.linalg.matrix_power(B, 3) @ history[0])


class TestOmegaOlsStep:
    """Tests pour omega_ols_step"""

    def test_recovers_var_matrix(self, rng):
        """q=N, β=I, H=I sur y_t = A y_{t-1} + ε -> ω' ≈ A"""
        A = np.array([[0.5, 0.1], [0.0, 0.3]])
        T = 3000
        y = np.zeros((T, 2))
        for t in range(1, T):
            y[t] = A @ y[t - 1] + rng.normal(size=2)
        beta_path = np.tile(np.eye(2).reshape(-1), (T - 1, 1))
        H_path = np.tile(np.eye(2), (T - 1, 1, 1))

        omega = omega_ols_step(y, beta_path, H_path, p=1, q=2)

        np.testing.assert_allclose(omega.omega.T, A, atol=0.05)

    def test_restriction_is_exact(self, rng):
        """Les 1 et les 0 du gabarit sont reproduits exactement"""
        template = GroupTemplate(group_sizes=[2, 3])
        y = rng.normal(size=(60, 5))
        beta_path = rng.normal(size=(59, 10))
        H_path = np.tile(np.eye(5), (59, 1, 1))

        omega = omega_ols_step(y, beta_path, H_path, p=1, q=2, template=template).omega

        assert omega[0, 0] == 1.0
        assert omega[2, 1] == 1.0
        assert np.all(omega[2:, 0] == 0.0)
        assert np.all(omega[:2, 1] == 0.0)

    def test_fully_pinned_template(self, rng):
        """Groupes de taille 1: ω = I sans aucune estimation"""
        template = GroupTemplate(group_sizes=[1, 1])

        omega = omega_ols_step(rng.normal(size=(10, 2)), rng.normal(size=(9, 4)),
                               np.tile(np.eye(2), (9, 1, 1)), p=1, q=2, template=template)

        np.testing.assert_array_equal(omega.omega, np.eye(2))


class TestInitOmegaPca:
    """Tests pour init_omega_pca"""

    def test_full_basis_is_orthonormal(self, rng):
        """q = N -> ω'ω = I"""
        omega = init_omega_pca(rng.normal(size=(50, 4)), 4).omega

        np.testing.assert_allclose(omega.T @ omega, np.eye(4), atol=1e-10)

    def test_duplicated_series_get_equal_weights(self, rng):
        base = rng.normal(size=(100, 3))
        y = np.column_stack([base, base[:, 0]])

        omega = init_omega_pca(y, 1).omega

        assert omega[0, 0] == pytest.approx(omega[3, 0], abs=1e-8)

    def test_dominant_component(self, rng):
        """Un facteur commun dominant est capté par la première colonne"""
        factor = rng.normal(size=300)
        y = np.outer(factor, [1.0, 0.8, 1.2, 0.9]) + 0.2 * rng.normal(size=(300, 4))

        omega = init_omega_pca(y, 2).omega

        assert abs(np.corrcoef(y @ omega[:, 0], factor)[0, 1]) > 0.95

    def test_signs_are_fixed(self, rng):
        omega = init_omega_pca(rng.normal(size=(40, 5)), 3).omega

        for j in range(3):
            assert omega[np.argmax(np.abs(omega[:, j])), j] > 0


class TestInitOmegaRestricted:
    """Tests pour init_omega_restricted"""

    def test_leaders_and_zeros(self, rng):
        template = GroupTemplate(group_sizes=[3, 2])

        omega = init_omega_restricted(rng.normal(size=(40, 5)), template).omega

        assert omega[0, 0] == 1.0
        assert omega[3, 1] == 1.0
        assert np.all(omega[3:, 0] == 0.0)
        assert np.all(omega[:3, 1] == 0.0)


class TestSwitchingEstimate:
    """Tests pour switching_estimate"""

    def test_q_zero_is_rejected(self):
        with pytest.raises(ValidationError, match="q must be"):
            ModelSpec(q=0)

    def test_q_larger_than_n(self, simulated_panel):
        with pytest.raises(SpecValidationError):
            switching_estimate(simulated_panel, ModelSpec(q=4))

    def test_insufficient_sample(self, rng):
        """T < p + N·q"""
        with pytest.raises(InsufficientSampleError):
            switching_estimate(rng.normal(size=(8, 4)), ModelSpec(q=2))

    def test_single_iteration(self, simulated_panel):
        """max_iter=1: exactement une mise à jour de ω depuis l'ACP"""
        fit = switching_estimate(simulated_panel, ModelSpec(q=1), max_iter=1)

        assert fit.iterations == 1
        assert len(fit.log_pl_trace) == 2

    def test_fit_invariants(self, simulated_panel):
        fit = switching_estimate(simulated_panel, ModelSpec(q=1, lam=0.99, kappa=0.97), max_iter=20)

        assert fit.iterations <= 20
        assert fit.start == 1
        assert len(fit.beliefs) == simulated_panel.T - 1
        np.testing.assert_array_equal(fit.indexes, simulated_panel.values @ fit.omega.omega)
        assert np.linalg.svd(fit.omega.omega, compute_uv=False).min() > 1e-10
        assert np.isfinite(fit.log_pl)

    def test_determinism(self, simulated_two_index):
        panel, _ = simulated_two_index
        spec = ModelSpec(q=2, lam=0.99, kappa=0.96)

        first = switching_estimate(panel, spec, max_iter=10)
        second = switching_estimate(panel, spec, max_iter=10)

        np.testing.assert_array_equal(first.omega.omega, second.omega.omega)
        assert first.log_pl == second.log_pl

    def test_restricted_estimate_keeps_template(self, simulated_two_index):
        panel, _ = simulated_two_index
        template = GroupTemplate(group_sizes=[2, 2])

        fit = switching_estimate(panel, ModelSpec(q=2, restriction=template), max_iter=15)

        omega = fit.omega.omega
        assert omega[0, 0] == 1.0 and omega[2, 1] == 1.0
        assert np.all(omega[2:, 0] == 0.0) and np.all(omega[:2, 1] == 0.0)

    def test_warm_start(self, simulated_panel):
        """Repartir d'un ω convergé converge immédiatement"""
        spec = ModelSpec(q=1)
        fit = switching_estimate(simulated_panel, spec, tol=1e-9, max_iter=500)

        again = switching_estimate(simulated_panel, spec, tol=1e-6, init=fit.omega)

        assert again.converged
        assert again.iterations <= 2

    def test_converges_with_two_indexes_at_default_settings(self, simulated_two_index):
        """q=2, tol et max_iter par défaut: le switching s'arrête sur le critère de tolérance"""
        panel = standardize(simulated_two_index[0])

        fit = switching_estimate(panel, ModelSpec(q=2))

        assert fit.converged
        assert fit.iterations < 100
        assert fit.log_pl == fit.log_pl_trace[-1]

    def test_unrestricted_weights_are_canonical(self, simulated_two_index):
        """Le ω retourné est un point fixe de canonical_basis"""
        panel = standardize(simulated_two_index[0])

        fit = switching_estimate(panel, ModelSpec(q=2, lam=0.99, kappa=0.96), max_iter=5)

        omega = fit.omega.omega
        np.testing.assert_allclose(omega.T @ omega, np.eye(2), atol=1e-10)
        np.testing.assert_allclose(canonical_basis(omega, panel.values), omega, atol=1e-10)
        assert fit.omega.normalized


class TestCanonicalBasis:
    """Tests pour canonical_basis"""

    def test_same_column_space_same_basis(self, rng):
        """ω et ωG (G inversible) ont le même représentant"""
        y = rng.normal(size=(200, 5)) @ rng.normal(size=(5, 5))
        omega = rng.normal(size=(5, 2))
        G = np.array([[2.0, 0.5], [-0.3, 1.0]])

        first = canonical_basis(omega, y)
        second = canonical_basis(omega @ G, y)

        np.testing.assert_allclose(second, first, atol=1e-10)

    def test_orthonormal_with_decreasing_index_moments(self, rng):
        y = rng.normal(size=(300, 4)) * np.array([3.0, 2.0, 1.0, 0.5])

        basis = canonical_basis(rng.normal(size=(4, 3)), y)

        np.testing.assert_allclose(basis.T @ basis, np.eye(3), atol=1e-12)
        moments = (y @ basis).T @ (y @ basis) / 300
        np.testing.assert_allclose(moments, np.diag(np.diag(moments)), atol=1e-10)
        assert np.all(np.diff(np.diag(moments)) <= 0)

    def test_signs_are_fixed(self, rng):
        y = rng.normal(size=(100, 4))

        basis = canonical_basis(-rng.normal(size=(4, 2)), y)

        for j in range(2):
            assert basis[np.argmax(np.abs(basis[:, j])), j] > 0

    def test_collinear_columns(self, rng):
        column = rng.normal(size=(4, 1))

        with pytest.raises(RankDeficiencyError):
            canonical_basis(np.hstack([column, 2.0 * column]), rng.normal(size=(50, 4)))


class TestScaleClosure:
    """Invariance des valeurs ajustées au changement de base des indexes"""

    def test_rotated_weights_give_same_fitted_values(self, simulated_two_index):
        panel, _ = simulated_two_index
        values = panel.values
        omega = init_omega_pca(values, 2).omega
        G = np.array([[2.0, 0.5], [-0.3, 1.0]])
        spec = ModelSpec(q=2, beta0_var_scale=1e6)

        beliefs, _ = filter_with_omega(values, spec, omega)
        rotated, _ = filter_with_omega(values, spec, omega @ G)

        Z = build_regressors(values @ omega, 1, 4)
        Z_rot = build_regressors(values @ omega @ G, 1, 4)
        fitted = Z[-1] @ beliefs[-1].beta_mean
        fitted_rot = Z_rot[-1] @ rotated[-1].beta_mean
        np.testing.assert_allclose(fitted_rot, fitted, atol=1e-5)


class TestFitFixedOmega:
    """Tests pour fit_fixed_omega"""

    def test_no_switching(self, simulated_panel):
        omega = np.ones((3, 1)) / np.sqrt(3)

        fit = fit_fixed_omega(simulated_panel, ModelSpec(q=1), omega)

        assert fit.iterations == 0
        np.testing.assert_array_equal(fit.omega.omega, omega)


class TestForecastFromFit:
    """Tests pour forecast_from_fit"""

    def test_shapes_and_covariances(self, simulated_panel):
        fit = switching_estimate(simulated_panel, ModelSpec(q=1, kappa=0.96), max_iter=10)

        means, covs = forecast_from_fit(fit, simulated_panel.values, 4)

        assert means.shape == (4, 3)
        assert covs.shape == (4, 3, 3)
        for h in range(4):
            np.testing.assert_allclose(covs[h], covs[h].T, atol=1e-12)
            assert np.linalg.eigvalsh(covs[h]).min() > 0

    def test_first_step_uses_filtered_state(self, simulated_panel):
        """h=1: moyenne Z_{T+1} β̂_{T|T}"""
        fit = switching_estimate(simulated_panel, ModelSpec(q=1), max_iter=10)
        values = simulated_panel.values

        means, covs = forecast_from_fit(fit, values, 1)

        beta = fit.beliefs[-1].beta_mean.reshape(3, 1, 1)[:, 0, :]
        expected = beta @ (fit.omega.omega.T @ values[-1])
        np.testing.assert_allclose(means[0], expected, atol=1e-12)
        assert np.all(np.diag(covs[0]) >= np.diag(fit.beliefs[-1].H) - 1e-12)


class TestOrthonormalOmega:
    """Tests pour orthonormal_omega et fix_signs"""

    def test_reporting_normalization(self, rng):
        omega = rng.normal(size=(5, 2))

        basis = orthonormal_omega(omega)

        np.testing.assert_allclose(basis.T @ basis, np.eye(2), atol=1e-12)
        assert np.max(subspace_angles(basis, omega)) < 1e-10

    def test_fix_signs(self):
        omega = np.array([[0.1, -2.0], [-3.0, 1.0]])

        fixed = fix_signs(omega)

        np.testing.assert_array_equal(fixed, [[-0.1, 2.0], [3.0, -1.0]])
