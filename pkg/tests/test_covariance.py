"""Tests for the working covariance models."""

from __future__ import annotations

import io

import numpy as np
import pytest

from gendid.covariance import (
    STRUCTURES,
    WorkingCovariance,
    build_m,
    from_matrix,
    load_custom_m,
    load_rel_var,
)
from gendid.errors import CovarianceParamError, DimensionError


class TestBuildM:
    def test_independent_is_identity(self):
        cov = build_m("independent", n_units=3, n_periods=4)
        np.testing.assert_array_equal(cov.matrix, np.eye(12))
        assert cov.rho is None

    def test_exchangeable_block(self):
        cov = build_m("exchangeable", rho=0.25, n_units=2, n_periods=3)
        block = np.array(
            [
                [1.0, 0.25, 0.25],
                [0.25, 1.0, 0.25],
                [0.25, 0.25, 1.0],
            ]
        )
        np.testing.assert_allclose(cov.matrix, np.kron(np.eye(2), block))

    def test_ar1_block(self):
        cov = build_m("ar1", rho=0.5, n_units=1 + 1, n_periods=3)
        block = np.array(
            [
                [1.0, 0.5, 0.25],
                [0.5, 1.0, 0.5],
                [0.25, 0.5, 1.0],
            ]
        )
        np.testing.assert_allclose(cov.matrix, np.kron(np.eye(2), block))

    def test_cross_unit_entries_vanish(self):
        cov = build_m("exchangeable", rho=0.4, n_units=3, n_periods=2)
        m = cov.matrix
        assert np.all(m[:2, 2:] == 0)
        assert np.all(m[2:4, 4:] == 0)

    def test_rho_domains(self):
        # exchangeable: rho in [-1/(J-1), 1)
        build_m("exchangeable", rho=-1.0 / 3.0, n_units=2, n_periods=4)
        with pytest.raises(CovarianceParamError, match="exchangeable"):
            build_m("exchangeable", rho=-0.5, n_units=2, n_periods=4)
        with pytest.raises(CovarianceParamError, match="exchangeable"):
            build_m("exchangeable", rho=1.0, n_units=2, n_periods=4)
        with pytest.raises(CovarianceParamError, match="ar1"):
            build_m("ar1", rho=1.0, n_units=2, n_periods=4)
        with pytest.raises(CovarianceParamError, match="ar1"):
            build_m("ar1", rho=-1.0, n_units=2, n_periods=4)

    def test_unknown_structure(self):
        with pytest.raises(CovarianceParamError, match="unknown structure"):
            build_m("toeplitz", n_units=2, n_periods=2)
        assert "custom" in STRUCTURES

    def test_rel_var_sandwich(self):
        scale = np.array([1.0, 2.0, 1.0, 0.5, 1.0, 3.0])
        cov = build_m("exchangeable", rho=0.3, n_units=2, n_periods=3, rel_var=scale)
        base = build_m("exchangeable", rho=0.3, n_units=2, n_periods=3)
        np.testing.assert_allclose(cov.matrix, base.matrix * np.outer(scale, scale))

    def test_rel_var_validation(self):
        with pytest.raises(DimensionError):
            build_m("independent", n_units=2, n_periods=3, rel_var=np.ones(5))
        with pytest.raises(CovarianceParamError):
            build_m(
                "independent", n_units=2, n_periods=3, rel_var=np.array([1, 1, 0, 1, 1, 1])
            )
        with pytest.raises(CovarianceParamError):
            build_m(
                "independent",
                n_units=2,
                n_periods=3,
                rel_var=np.array([1, 1, np.inf, 1, 1, 1]),
            )


class TestWorkingCovariance:
    def test_shape_check(self):
        with pytest.raises(DimensionError):
            WorkingCovariance("custom", 2, 3, np.eye(5))

    def test_symmetry_check(self):
        m = np.eye(4)
        m[0, 1] = 0.5
        with pytest.raises(CovarianceParamError, match="symmetric"):
            WorkingCovariance("custom", 2, 2, m)

    def test_psd_check(self):
        m = np.eye(4)
        m[0, 1] = m[1, 0] = 2.0  # eigenvalues -1 and 3
        with pytest.raises(CovarianceParamError, match="positive semidefinite"):
            WorkingCovariance("custom", 2, 2, m)

    def test_matrix_read_only(self):
        cov = build_m("independent", n_units=2, n_periods=2)
        with pytest.raises(ValueError):
            cov.matrix[0, 0] = 5.0

    def test_factor_reconstructs(self):
        rng = np.random.default_rng(5)
        for structure, rho in (("independent", 0.0), ("exchangeable", 0.4), ("ar1", -0.6)):
            scale = rng.uniform(0.5, 2.0, size=6)
            cov = build_m(structure, rho=rho, n_units=2, n_periods=3, rel_var=scale)
            l = cov.factor()
            np.testing.assert_allclose(l @ l.T, cov.matrix, atol=1e-12)

    def test_factor_of_singular_matrix(self):
        # rank-deficient PSD matrix: eigenvalue clipping keeps the factor real
        m = np.ones((4, 4))
        cov = WorkingCovariance("custom", 2, 2, m)
        l = cov.factor()
        assert np.all(np.isfinite(l))
        np.testing.assert_allclose(l @ l.T, m, atol=1e-12)


class TestLoading:
    def test_from_matrix(self):
        m = np.kron(np.eye(2), np.full((2, 2), 0.5) + 0.5 * np.eye(2))
        cov = from_matrix(m, 2, 2)
        assert cov.structure == "custom"
        np.testing.assert_allclose(cov.matrix, m)

    def test_load_custom_m_roundtrip(self, tmp_path):
        m = build_m("ar1", rho=0.3, n_units=2, n_periods=2).matrix
        path = tmp_path / "m.csv"
        np.savetxt(path, m, delimiter=",")
        cov = load_custom_m(path, 2, 2)
        np.testing.assert_allclose(cov.matrix, m, atol=1e-12)

    def test_load_custom_m_bad_shape(self, tmp_path):
        path = tmp_path / "m.csv"
        np.savetxt(path, np.eye(3), delimiter=",")
        with pytest.raises(DimensionError):
            load_custom_m(path, 2, 2)

    def test_load_rel_var(self):
        buf = io.StringIO("1.0,2.0,0.5\n1.5,1.0,1.0\n")
        values = load_rel_var(buf, 2, 3)
        np.testing.assert_allclose(values, [1.0, 2.0, 0.5, 1.5, 1.0, 1.0])
        with pytest.raises(DimensionError):
            load_rel_var(io.StringIO("1.0,2.0\n"), 2, 3)
