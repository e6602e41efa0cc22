"""Reduced-model continuation checked against closed forms.

A reduced master equation is fully specified by its coefficient table,
so every continuation feature can be exercised on fabricated tables
whose periodic orbits, folds and instability tongues are known in
closed form:

  * linear response: z_p = f3 / (i w - lam), displacement 2 |z_p|;
  * hardening peak: rho_pk = |f3| / |Re lam| where the backbone
    w = Im lam + Im(c) rho^2 crosses the response curve;
  * parametric tongue edges: |f2|^2 = Re(lam_eff)^2 at
    w = 2 Im lam_eff -+ 2 sqrt(|f2|^2 - Re(lam_eff)^2);
  * subharmonic amplitude: |lam_r + i delta + c rho^2| = |f2|.

The end-to-end linear case is built through the actual expansion
pipeline and compared with the transfer-function modulus of the
underlying oscillator.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from emrom.dae import from_matrices
from emrom.spectral import modes_of
from emrom.dpim import Parametrisation, enumerate_monomials, parametrise
from emrom.rom import (ReducedDynamics, OrbitSampler, newton_periodic,
                       linear_amplitude, frc_sweep, flat_branch,
                       parametric_branch_points, pd_scan,
                       pd_amplitude_estimate, write_frc_csv, read_frc_csv)

OM0 = 1.3
ZETA = 0.02
V_AC = 0.004


def fabricated(f1, p=3, q=1, omega=OM0, eps=1.0):
    """Parametrisation with a hand-written coefficient table.

    The embedding holds the identity mode pair so the sampled
    displacement is exactly 2 Re(z1).
    """
    par = Parametrisation(p=p, q=q, n=2, lam1=f1[(1, 0, 0, 0)],
                          omega=omega, v_ac=1.0, nu=eps, eps=eps)
    par.monomials = enumerate_monomials(p, q)
    par.f1 = dict(f1)
    par.W = {(1, 0, 0, 0): np.array([0.0 + 0j, 1.0 + 0j]),
             (0, 1, 0, 0): np.array([0.0 + 0j, 1.0 + 0j])}
    return par


@pytest.fixture(scope="module")
def linear_rom():
    """Damped linear oscillator reduced through the actual pipeline."""
    B = np.eye(2)
    A = np.array([[-2.0 * ZETA * OM0, -OM0 ** 2], [1.0, 0.0]])
    sys = from_matrices(B, A, c=np.array([1.0, 0.0]),
                        slices={"V": slice(0, 1), "U": slice(1, 2)})
    modes = modes_of(sys, k=1)
    lam = modes.lam[0]
    par = parametrise(sys, modes, 3, 1, omega=lam.imag, v_ac=V_AC)
    return par, lam


class TestReducedDynamics:
    def test_monodromy_of_pure_rotation(self):
        lam = -0.02 + 1.1j
        par = fabricated({(1, 0, 0, 0): lam})
        M = ReducedDynamics(par).trivial_monodromy(0.9)
        T = 2.0 * np.pi / 0.9
        R = np.array([[np.cos(lam.imag * T), -np.sin(lam.imag * T)],
                      [np.sin(lam.imag * T), np.cos(lam.imag * T)]])
        assert_allclose(M, np.exp(lam.real * T) * R, rtol=1e-8, atol=1e-10)

    def test_vector_field_matches_table(self):
        lam = -0.01 + 1.0j
        c3 = 0.2 + 1.5j
        par = fabricated({(1, 0, 0, 0): lam, (2, 1, 0, 0): c3})
        dyn = ReducedDynamics(par)
        z = 0.21 - 0.09j
        assert dyn.f(z, 1.0) == pytest.approx(lam * z + c3 * z * abs(z) ** 2,
                                              rel=1e-14)


class TestLinearResponse:
    def test_periodic_orbit_matches_transfer_function(self, linear_rom):
        par, lam = linear_rom
        dyn = ReducedDynamics(par)
        samp = OrbitSampler(par, 1, 1.0)
        f3 = par.f1[(0, 0, 1, 0)]
        for fac in (0.92, 1.0, 1.08):
            om = fac * lam.imag
            zp = f3 / (1j * om - lam)
            s, M, ok = newton_periodic(dyn, [0.0, 0.0], om)
            assert ok
            assert s[0] + 1j * s[1] == pytest.approx(zp, rel=1e-8)
            _, amp = samp.measure(dyn, s, om)
            h = 1.0 / np.sqrt((OM0 ** 2 - om ** 2) ** 2
                              + (2.0 * ZETA * OM0 * om) ** 2)
            assert amp == pytest.approx(V_AC * h, rel=3e-3)

    def test_linear_amplitude_formula(self, linear_rom):
        par, lam = linear_rom
        f3 = par.f1[(0, 0, 1, 0)]
        om = 1.05 * lam.imag
        assert linear_amplitude(par, om) == pytest.approx(
            abs(f3 / (1j * om - lam)), rel=1e-14)

    def test_stability_of_linear_orbit(self, linear_rom):
        par, lam = linear_rom
        dyn = ReducedDynamics(par)
        s, M, ok = newton_periodic(dyn, [0.0, 0.0], lam.imag)
        assert ok
        assert np.max(np.abs(np.linalg.eigvals(M))) < 1.0


class TestHardeningSweep:
    def test_folds_and_peak(self):
        lam = -0.013 + 1.3j
        c3 = 0.0 + 3.0j
        f3 = -0.0026 + 0.0j
        par = fabricated({(1, 0, 0, 0): lam, (2, 1, 0, 0): c3,
                          (0, 0, 1, 0): f3}, eps=abs(f3))
        samp = OrbitSampler(par, 1, 1.0)
        res = frc_sweep(par, samp, 0.97 * OM0, 1.12 * OM0, ds0=0.02)
        om, rho, amp, st = res.arrays()

        folds = [p for p in res.points if p.fold]
        assert len(folds) == 2
        assert (~st).sum() > 0
        # the overhang between the folds is the unstable middle branch
        f_lo, f_hi = sorted(p.omega for p in folds)
        un = om[~st]
        assert un.min() > f_lo - 1e-3 and un.max() < f_hi + 1e-3

        rho_pk = abs(f3) / abs(lam.real)
        om_pk, amp_pk = res.peak()
        assert amp_pk == pytest.approx(2.0 * rho_pk, rel=1e-2)
        assert om_pk == pytest.approx(lam.imag + c3.imag * rho_pk ** 2,
                                      rel=1e-3)
        assert om_pk > lam.imag


class TestParametricAlgebra:
    lam1 = -0.005 + 1.0j
    d = 0.001 + 0.002j
    f2 = 0.0100 + 0.003j
    c3 = -0.004 + 0.36j

    def par(self):
        return fabricated({(1, 0, 0, 0): self.lam1, (1, 0, 1, 1): self.d,
                           (0, 1, 1, 0): self.f2, (2, 1, 0, 0): self.c3},
                          q=2, omega=2.0, eps=0.1)

    def test_branch_points_closed_form(self):
        par = self.par()
        lam_eff = self.lam1 + self.d
        half = 2.0 * np.sqrt(abs(self.f2) ** 2 - lam_eff.real ** 2)
        lo, hi = parametric_branch_points(par)
        assert lo == pytest.approx(2.0 * lam_eff.imag - half, rel=1e-12)
        assert hi == pytest.approx(2.0 * lam_eff.imag + half, rel=1e-12)

    def test_no_tongue_below_onset(self):
        weak = fabricated({(1, 0, 0, 0): -0.02 + 1.0j,
                           (0, 1, 1, 0): 0.001 + 0.0j}, q=2, omega=2.0)
        assert parametric_branch_points(weak) is None

    def test_monodromy_scan_finds_edges(self):
        par = self.par()
        lo, hi = parametric_branch_points(par)
        found = pd_scan(par, lo - 0.05, hi + 0.05, n_grid=40)
        assert len(found) == 2
        assert found[0] == pytest.approx(lo, abs=1e-8)
        assert found[1] == pytest.approx(hi, abs=1e-8)

    def test_flat_branch_stability_partition(self):
        par = self.par()
        samp = OrbitSampler(par, 1, 1.0)
        lo, hi = parametric_branch_points(par)
        res = flat_branch(par, samp, lo - 0.03, hi + 0.03, n=41)
        om, rho, amp, st = res.arrays()
        assert np.abs(amp).max() == 0.0
        inside = (om > lo) & (om < hi)
        assert (~st[inside]).all()
        assert st[~inside].all()

    def test_subharmonic_amplitude_quadratic(self):
        par = self.par()
        lo, hi = parametric_branch_points(par)
        om = 0.5 * (lo + hi)
        lam_eff = self.lam1 + self.d
        delta = lam_eff.imag - 0.5 * om
        coef = [abs(self.c3) ** 2,
                2.0 * (lam_eff.real * self.c3.real + delta * self.c3.imag),
                lam_eff.real ** 2 + delta ** 2 - abs(self.f2) ** 2]
        roots = np.roots(coef)
        expect = np.sqrt(roots[roots > 0].max())
        assert pd_amplitude_estimate(par, om) == pytest.approx(expect,
                                                               rel=1e-10)
        # with a hardening cubic the branch overhangs above the tongue,
        # so only the low side is guaranteed empty
        assert pd_amplitude_estimate(par, lo - 1.0) == 0.0


class TestCsvRoundTrip:
    def test_frc_file(self, tmp_path):
        lam = -0.013 + 1.3j
        par = fabricated({(1, 0, 0, 0): lam, (2, 1, 0, 0): 3.0j,
                          (0, 0, 1, 0): -0.0026 + 0j}, eps=0.0026)
        samp = OrbitSampler(par, 1, 1.0)
        res = frc_sweep(par, samp, 0.97 * OM0, 1.05 * OM0, ds0=0.03)
        path = tmp_path / "frc.csv"
        write_frc_csv(path, res)
        assert open(path).readline().strip() == \
            "omega,rho,um_micron,stable,fold_flag,pd_flag"
        back = read_frc_csv(path)
        assert len(back.points) == len(res.points)
        for a, b in zip(res.points, back.points):
            assert b.omega == pytest.approx(a.omega, rel=1e-11)
            assert b.rho == pytest.approx(a.rho, rel=1e-11, abs=1e-15)
            assert b.amp == pytest.approx(a.amp, rel=1e-11, abs=1e-15)
            assert (b.stable, b.fold, b.pd) == (a.stable, a.fold, a.pd)
