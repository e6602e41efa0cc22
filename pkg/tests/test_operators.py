"""Assembled-operator checks against closed-form quadratic forms.

Mass: on the clamped-clamped beam (length L, thickness h, width b) the
vertical field u_y = x (L - x) lies in the quadratic element basis and
vanishes on the clamps, so the mass matrix must reproduce

    u^T M u = rho b h int_0^L x^2 (L - x)^2 dx = rho b h L^5 / 30

exactly (degree-4 integrand, degree-5 quadrature).

Stiffness: with poisson = 0 and uniaxial prestress sigma the axial field
u_x = c x (L - x) has only the strain e_xx = c (L - 2x), and the tangent
at rest adds the geometric term sigma u_x'^2, so

    u^T K u = (E + sigma) b h c^2 int_0^L (L - 2x)^2 dx
            = (E + sigma) b h c^2 L^3 / 3.

The remaining tests pin exact algebraic identities of the assembled
blocks: the quadratic/cubic force expansion, the parallel-plate traction
and gap-balance expansions, and the adjugate map used by the dielectric
pull-back.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from emrom.assembly import Material, adjugate
from emrom.mppf import PlateKernel, assemble_plate_operators

from conftest import (BEAM_L, BEAM_H, BEAM_GAP, WIDTH, E_BEAM, RHO_BEAM,
                      SIGMA_AX)


def nodal_field(mesh, dofs, fx=None, fy=None):
    """Pack nodal component fields into a free-dof vector."""
    u = np.zeros(dofs.n_u)
    for comp, f in ((0, fx), (1, fy)):
        if f is None:
            continue
        for n, (px, py) in enumerate(mesh.nodes):
            d = dofs.u_dof[n, comp]
            if d >= 0:
                u[d] = f(px, py)
    return u


class TestQuadraticForms:
    def test_mass_parabolic_field(self, solid_mesh, solid_dofs, mat):
        from emrom.assembly import SolidKernel
        kern = SolidKernel(solid_mesh, solid_dofs, mat,
                           np.zeros((len(solid_mesh.nodes), 2)))
        u = nodal_field(solid_mesh, solid_dofs,
                        fy=lambda x, y: x * (BEAM_L - x))
        expected = RHO_BEAM * WIDTH * BEAM_H * BEAM_L ** 5 / 30.0
        assert_allclose(u @ (kern.mass() @ u), expected, rtol=1e-12)

    def test_stiffness_axial_parabolic(self, solid_mesh, solid_dofs, mat):
        from emrom.assembly import SolidKernel
        kern = SolidKernel(solid_mesh, solid_dofs, mat,
                           np.zeros((len(solid_mesh.nodes), 2)))
        c = 1e-3
        u = nodal_field(solid_mesh, solid_dofs,
                        fx=lambda x, y: c * x * (BEAM_L - x))
        expected = (E_BEAM + SIGMA_AX) * WIDTH * BEAM_H * c ** 2 \
            * BEAM_L ** 3 / 3.0
        q = u @ (kern.stiffness() @ u)
        # roundoff in the large sparse quadratic form sits near 1e-11;
        # dropping the prestress term would miss by 4e-5, so the
        # tolerance still pins the geometric stiffness
        assert_allclose(q, expected, rtol=1e-10)
        wrong = E_BEAM * WIDTH * BEAM_H * c ** 2 * BEAM_L ** 3 / 3.0
        assert abs(q / wrong - 1.0) > 1e-5

    def test_mass_independent_of_prestress(self, solid_mesh, solid_dofs, mat):
        from emrom.assembly import SolidKernel
        bare = Material(young=mat.young, poisson=mat.poisson,
                        density=mat.density, width=mat.width)
        z = np.zeros((len(solid_mesh.nodes), 2))
        m0 = SolidKernel(solid_mesh, solid_dofs, bare, z).mass()
        m1 = SolidKernel(solid_mesh, solid_dofs, mat, z).mass()
        assert (m0 - m1).nnz == 0 or abs(m0 - m1).max() == 0.0


class TestOperatorBattery:
    """Direct-quadrature equivalence, symmetry, SPD, adjugate, exactness."""

    def test_all_checks_tight(self, operator_battery):
        bad = [(name, err) for name, err in operator_battery
               if not err < 1e-12]
        assert not bad, f"operator checks above 1e-12: {bad}"

    def test_battery_covers_both_formulations(self, operator_battery):
        names = [name for name, _ in operator_battery]
        assert any("plate" in n for n in names)
        assert any("field" in n for n in names)
        assert len(names) >= 20


@pytest.fixture(scope="module")
def kern(solid_mesh, solid_dofs):
    return PlateKernel(solid_mesh, solid_dofs, BEAM_GAP, WIDTH)


class TestPlateExpansion:
    """The condensed parallel-plate blocks are an exact polynomial model."""

    def test_uniform_field_is_voltage_over_gap(self, kern):
        nn = len(kern.mesh.nodes)
        assert_allclose(kern.gap_at(np.zeros((nn, 2))), BEAM_GAP, rtol=1e-14)
        assert_allclose(kern.condense(np.zeros((nn, 2)), 3.0),
                        3.0 / BEAM_GAP, rtol=1e-13)

    def test_traction_expansion_in_field(self, solid_mesh, solid_dofs, kern):
        rng = np.random.default_rng(7)
        nn = len(solid_mesh.nodes)
        # prestress-free material at rest: the internal force vanishes
        # identically and r_u = -F_el(psi) without cancellation noise
        bare = Material(young=E_BEAM, poisson=0.0, density=RHO_BEAM,
                        width=WIDTH)
        u0 = np.zeros((nn, 2))
        psi0 = 1.0 + 0.1 * rng.standard_normal(kern.n_psi)
        dpsi = 0.3 * rng.standard_normal(kern.n_psi)
        ops0 = assemble_plate_operators(solid_mesh, solid_dofs, bare, kern,
                                        u0, psi0)
        ops1 = assemble_plate_operators(solid_mesh, solid_dofs, bare, kern,
                                        u0, psi0 + dpsi)
        # the traction is exactly quadratic in the plate field
        pred = -(ops0.R_psi @ dpsi + ops0.Rq_pp.contract(dpsi, dpsi))
        diff = ops1.r_u - ops0.r_u
        assert_allclose(diff, pred, rtol=0, atol=1e-13 * np.abs(pred).max())

    def test_gap_balance_expansion(self, solid_mesh, solid_dofs, mat, kern):
        rng = np.random.default_rng(8)
        nn = len(solid_mesh.nodes)
        u0 = 1e-3 * rng.standard_normal((nn, 2))
        psi0 = 1.0 + 0.1 * rng.standard_normal(kern.n_psi)
        du = 1e-2 * rng.standard_normal((nn, 2))
        dpsi = 0.3 * rng.standard_normal(kern.n_psi)
        ops0 = assemble_plate_operators(solid_mesh, solid_dofs, mat, kern,
                                        u0, psi0)
        ops1 = assemble_plate_operators(solid_mesh, solid_dofs, mat, kern,
                                        u0 + du, psi0 + dpsi)
        duv = np.zeros(solid_dofs.n_u)
        free = solid_dofs.u_dof.ravel() >= 0
        duv[solid_dofs.u_dof.ravel()[free]] = du.ravel()[free]
        # the balance psi * integral(gap - u_y) is bilinear in (psi, u),
        # but constrained u entries are folded into the constant term, so
        # compare states sharing the same clamped values
        du_c = du.copy()
        du_c.ravel()[~free] = 0.0
        ops1 = assemble_plate_operators(solid_mesh, solid_dofs, mat, kern,
                                        u0 + du_c, psi0 + dpsi)
        pred = (ops0.r_psi + ops0.C_psi @ dpsi + ops0.C_u @ duv
                + ops0.Cq.contract(dpsi, duv))
        assert_allclose(ops1.r_psi, pred, rtol=0,
                        atol=1e-13 * np.abs(pred).max())

    def test_condensed_field_zeroes_balance(self, solid_mesh, solid_dofs,
                                            mat, kern):
        rng = np.random.default_rng(9)
        nn = len(solid_mesh.nodes)
        u0 = 1e-2 * rng.standard_normal((nn, 2))
        v = 2.5
        psi = kern.condense(u0, v)
        ops = assemble_plate_operators(solid_mesh, solid_dofs, mat, kern,
                                       u0, psi)
        assert_allclose(ops.r_psi, v * ops.F_psi, rtol=1e-12)
        assert_allclose(ops.F_psi, kern.length, rtol=0, atol=0)


class TestAdjugate:
    def test_matches_determinant_times_inverse(self):
        rng = np.random.default_rng(11)
        M = rng.standard_normal((40, 2, 2)) + 2.0 * np.eye(2)
        det = np.linalg.det(M)
        expected = det[:, None, None] * np.linalg.inv(M)
        assert_allclose(adjugate(M), expected, rtol=1e-12)

    def test_linear_and_shifts_identity(self):
        rng = np.random.default_rng(12)
        A = rng.standard_normal((5, 2, 2))
        B = rng.standard_normal((5, 2, 2))
        assert_allclose(adjugate(2.0 * A + 3.0 * B),
                        2.0 * adjugate(A) + 3.0 * adjugate(B), rtol=1e-13)
        assert_allclose(adjugate(np.eye(2) + A),
                        np.eye(2) + adjugate(A), rtol=1e-13)


class TestMaterial:
    def test_stiffen_zero_poisson_is_scalar(self):
        m = Material(young=2.0, poisson=0.0, density=1.0)
        M = np.array([[1.0, 0.5], [0.5, -2.0]])
        assert_allclose(m.stiffen(M), 2.0 * M, rtol=0, atol=0)

    def test_stiffen_general_plane_stress(self):
        e, nu = 3.0, 0.25
        m = Material(young=e, poisson=nu, density=1.0)
        lam = e * nu / (1.0 - nu ** 2)
        mu = e / (2.0 * (1.0 + nu))
        M = np.array([[1.0, 0.5], [0.5, -2.0]])
        expected = lam * np.trace(M) * np.eye(2) + 2.0 * mu * M
        assert_allclose(m.stiffen(M), expected, rtol=1e-15)
        # plane stress: uniaxial strain must give stress E * strain after
        # condensing the transverse direction; check the modulus directly
        exx = 1.0
        eyy = -nu * exx
        strain = np.diag([exx, eyy])
        stress = m.stiffen(strain)
        assert_allclose(stress[0, 0], e * exx, rtol=1e-15)
        assert_allclose(stress[1, 1], 0.0, atol=1e-15)
