"""Eigenpairs of the first-order pencil against a beam-theory oracle.

The first bending frequency of a clamped-clamped beam under axial force
N solves the characteristic equation

    2 k1 k2 (1 - cos(k1 L) cosh(k2 L))
        + (k2^2 - k1^2) sin(k1 L) sinh(k2 L) = 0

with k1^2 = sqrt(a^2 + c) - a, k2^2 = sqrt(a^2 + c) + a, a = N / (2 E I)
and c = rho A_c omega^2 / (E I).  For the benchmark beam this gives
omega1 = 0.4586171740231303 rad/us, which the plane-stress FE model must
match within discretization error.

The remaining tests pin the contract of the decomposition itself:
residuals, biorthonormality, the exact-one normalization of the probe
entry, determinism, and agreement of the dense and Krylov paths.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

import emrom.spectral as spectral
from emrom.spectral import eig_pencil, modes_of, normalize_modes

from conftest import (BEAM_L, BEAM_H, WIDTH, E_BEAM, RHO_BEAM, N_AXIAL,
                      build_plate_system, euler_bernoulli_omega1)

OMEGA1_ANALYTIC = 0.4586171740231303


@pytest.fixture(scope="module")
def sys0(solid_mesh, solid_dofs, mat):
    sys, _, _, _ = build_plate_system(solid_mesh, solid_dofs, mat, 0.0)
    return sys


@pytest.fixture(scope="module")
def modes0(sys0):
    return modes_of(sys0, k=4)


class TestFrequencyOracle:
    def test_analytic_value_frozen(self):
        om = euler_bernoulli_omega1(E_BEAM, RHO_BEAM, BEAM_L, BEAM_H,
                                    WIDTH, N_AXIAL)
        assert_allclose(om, OMEGA1_ANALYTIC, rtol=1e-12)

    def test_fe_matches_beam_theory(self, modes0):
        assert modes0.omega(0) == pytest.approx(OMEGA1_ANALYTIC, rel=2e-2)

    def test_undamped_modes_purely_oscillatory(self, modes0):
        assert np.all(np.abs(modes0.lam.real)
                      < 1e-7 * np.abs(modes0.lam.imag))
        assert np.all(np.diff(modes0.lam.imag) > 0)


class TestDecompositionContract:
    def test_eigen_residual(self, sys0, modes0):
        for i, lam in enumerate(modes0.lam):
            y = modes0.Y[:, i]
            r = lam * (sys0.B @ y) - sys0.A @ y
            assert np.linalg.norm(r) < 5e-6 * np.linalg.norm(sys0.A @ y)

    def test_left_vectors(self, sys0, modes0):
        for i, lam in enumerate(modes0.lam):
            x = modes0.X[:, i]
            r = lam * (sys0.B.T @ x) - sys0.A.T @ x
            assert np.linalg.norm(r) < 5e-6 * np.linalg.norm(sys0.A.T @ x)

    def test_biorthonormal(self, sys0, modes0):
        S = modes0.X.T @ (sys0.B @ modes0.Y)
        assert_allclose(S, np.eye(len(modes0.lam)), rtol=0, atol=1e-6)

    def test_probe_entry_normalized_to_one(self, sys0, modes0):
        # complex division is correctly rounded but not exact, so the
        # anchor entry may sit an ulp away from 1
        for i in range(len(modes0.lam)):
            ub = modes0.Y[sys0.slices["U"], i]
            assert np.max(np.abs(ub)) < 1.0 + 5e-16
            j = int(np.argmax(np.abs(ub)))
            assert abs(ub[j] - 1.0) < 5e-16

    def test_deterministic(self, sys0):
        a = modes_of(sys0, k=4)
        b = modes_of(sys0, k=4)
        assert np.array_equal(a.lam, b.lam)
        assert np.array_equal(a.Y, b.Y)
        assert np.array_equal(a.X, b.X)

    def test_dense_and_krylov_paths_agree(self, mat, monkeypatch):
        from emrom.mesh import generate_beam_mesh
        from emrom.dofmap import build_dofmap
        mesh = generate_beam_mesh(BEAM_L, BEAM_H, 1.18, nx=8, ny=2,
                                  with_air=False)
        dofs = build_dofmap(mesh)
        sys, _, _, _ = build_plate_system(mesh, dofs, mat, 0.0)
        assert sys.n <= spectral._DENSE_LIMIT
        lam_d, _, _ = eig_pencil(sys.B, sys.A, k=3, sigma=0.05j)
        monkeypatch.setattr(spectral, "_DENSE_LIMIT", 0)
        lam_k, _, _ = eig_pencil(sys.B, sys.A, k=3, sigma=0.05j)
        assert_allclose(lam_k, lam_d, rtol=1e-5)


class TestDampingAndBias:
    def test_mass_proportional_damping_ratio(self, solid_mesh, solid_dofs,
                                             mat):
        alpha = 4.5e-3
        sys, _, _, _ = build_plate_system(solid_mesh, solid_dofs, mat, 0.0,
                                          alpha=alpha)
        m = modes_of(sys, k=2)
        # C = alpha M shifts every eigenvalue by exactly -alpha/2
        for k in range(2):
            assert 2.0 * m.zeta(k) * m.omega(k) == pytest.approx(alpha,
                                                                 rel=1e-5)

    def test_bias_softens_first_mode(self, solid_mesh, solid_dofs, mat,
                                     modes0):
        sys_b, _, _, _ = build_plate_system(solid_mesh, solid_dofs, mat, 2.4)
        assert modes_of(sys_b, k=1).omega(0) < modes0.omega(0)
