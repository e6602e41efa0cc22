"""Shared fixtures and property batteries for the test suite.

Everything runs in micrometre / microsecond / kilogram / volt units:
the benchmark silicon beam has E = 1.54e-7, rho = 2.33e-15 and carries
a residual axial force of 9e-10 over its cross section.
"""

import numpy as np
import pytest
from scipy.optimize import brentq

from emrom import (
    Material,
    build_dofmap,
    generate_beam_mesh,
)
from emrom import dae, mppf, statics
from emrom.assembly import SolidKernel, adjugate, assemble_operators

BEAM_L = 510.0
BEAM_H = 1.5
BEAM_GAP = 1.18
WIDTH = 100.0
E_BEAM = 1.54e-7        # 154 GPa
RHO_BEAM = 2.33e-15     # 2330 kg/m^3
N_AXIAL = 9.0e-10       # 0.9 mN residual tension
SIGMA_AX = N_AXIAL / (BEAM_H * WIDTH)


def benchmark_material(width: float = WIDTH, linear_only: bool = False,
                       tension: float = N_AXIAL) -> Material:
    pre = tension / (BEAM_H * width)
    return Material(young=E_BEAM, poisson=0.0, density=RHO_BEAM,
                    prestress=np.array([[pre, 0.0], [0.0, 0.0]]),
                    linear_only=linear_only, width=width)


def build_plate_system(mesh, dofs, mat, v_dc, alpha=0.0, beta=0.0):
    """Bias the plate model and assemble its scaled pencil."""
    prob = statics.PlateStatic(mesh, dofs, mat, gap=BEAM_GAP)
    x, V, rep = statics.voltage_ramp(prob, v_dc)
    assert rep.converged
    u0, psi0 = prob.unpack(x, v_dc)
    ops = mppf.assemble_plate_operators(mesh, dofs, mat, prob.kern, u0, psi0)
    sys = dae.build_plate_dae(ops, dofs, alpha, beta, g=BEAM_GAP)
    return sys, ops, prob, x


@pytest.fixture(scope="session")
def mat():
    return benchmark_material()


@pytest.fixture(scope="session")
def solid_mesh():
    m = generate_beam_mesh(BEAM_L, BEAM_H, BEAM_GAP, nx=16, ny=2,
                           with_air=False)
    m.validate()
    return m


@pytest.fixture(scope="session")
def solid_dofs(solid_mesh):
    return build_dofmap(solid_mesh)


@pytest.fixture(scope="session")
def air_mesh():
    m = generate_beam_mesh(BEAM_L, BEAM_H, BEAM_GAP, nx=12, ny=2,
                           n_air=3, with_air=True)
    m.validate()
    return m


@pytest.fixture(scope="session")
def air_dofs(air_mesh):
    return build_dofmap(air_mesh)


def euler_bernoulli_omega1(E: float, rho: float, L: float, h: float,
                           b: float, N: float) -> float:
    """First bending frequency of a tensioned clamped-clamped beam.

    Root of the characteristic determinant of EI w'''' - N w'' =
    rho A omega^2 w with clamped ends: the general solution mixes a
    trigonometric wavenumber k1 and a hyperbolic one k2 with
    k1^2 = sqrt(a^2 + c) - a, k2^2 = sqrt(a^2 + c) + a, a = N/(2EI),
    c = rho A omega^2 / EI, and the boundary conditions close as
    2 k1 k2 (1 - cos k1 L cosh k2 L) + (k2^2 - k1^2) sin k1 L sinh k2 L.
    """
    EI = E * b * h ** 3 / 12.0
    rA = rho * b * h

    def det(om):
        a = N / (2.0 * EI)
        c = rA * om ** 2 / EI
        s = np.sqrt(a * a + c)
        k1 = np.sqrt(s - a)
        k2 = np.sqrt(s + a)
        return (2.0 * k1 * k2 * (1.0 - np.cos(k1 * L) * np.cosh(k2 * L))
                + (k2 ** 2 - k1 ** 2) * np.sin(k1 * L) * np.sinh(k2 * L))

    om0 = (4.7300407 / L) ** 2 * np.sqrt(EI / rA)   # untensioned start
    # bracket the first root only: the determinant keeps crossing at
    # every higher mode, so walk up until the first sign change
    grid = np.linspace(0.05 * om0, 6.0 * om0, 600)
    vals = det(grid)
    idx = int(np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0])
    return brentq(det, grid[idx], grid[idx + 1], xtol=1e-15, rtol=1e-15)


def tensioned_beam_deflection(E: float, L: float, h: float, b: float,
                              N: float, pressure: float) -> float:
    """Midspan deflection under uniform pressure, from 1D beam theory.

    EI w'''' - N w'' = q with clamped ends has the symmetric solution
    A + B cosh(k u) - q u^2 / (2N) about midspan (k^2 = N/EI); the two
    clamp conditions fix A and B, leaving
    w(L/2) = qL^2/(8N) - qL (cosh(kL/2) - 1) / (2Nk sinh(kL/2)).
    """
    EI = E * b * h ** 3 / 12.0
    q = pressure * b
    k = np.sqrt(N / EI)
    return float(q * L ** 2 / (8.0 * N)
                 - q * L / (2.0 * N * k)
                 * (np.cosh(k * L / 2.0) - 1.0) / np.sinh(k * L / 2.0))


def _spd_margin(M) -> float:
    """Negative-definiteness margin: 0 for an SPD matrix."""
    lam = np.linalg.eigvalsh(M.toarray())
    return max(0.0, -lam[0] / lam[-1])


def _solid_checks(mesh, dofs, mat, rng):
    u0 = dofs.u_nodal(0.05 * rng.standard_normal(dofs.n_u))
    kern = SolidKernel(mesh, dofs, mat, u0)
    M, K = kern.mass(), kern.stiffness()
    x, y, z = (rng.standard_normal(dofs.n_u) for _ in range(3))
    checks = [
        ("mass symmetry", abs(M - M.T).max() / abs(M).max()),
        ("stiffness symmetry", abs(K - K.T).max() / abs(K).max()),
        ("mass positive", _spd_margin(M)),
        ("stiffness positive",
         _spd_margin(SolidKernel(mesh, dofs, mat, None).stiffness())),
    ]

    # full polynomial expansion of the internal force about u0
    d = dofs.u_nodal(0.1 * rng.standard_normal(dofs.n_u))
    f1 = SolidKernel(mesh, dofs, mat, u0 + d).internal_force()
    f0 = kern.internal_force()
    model = (K @ dofs.u_vector(d)
             + kern.quad_contract(dofs.u_vector(d), dofs.u_vector(d))
             + kern.cubic_contract(dofs.u_vector(d), dofs.u_vector(d),
                                   dofs.u_vector(d)))
    scale = np.abs(f1 - f0).max()
    checks.append(("force expansion exact",
                   np.abs(f1 - f0 - model).max() / scale))

    # exported coordinate tensors against the per-element contraction:
    # the export is slot-symmetrized, so they must agree as maps on the
    # diagonal and as symmetrized multilinear forms off it
    Gc, Hc = kern.quad_coo(), kern.cubic_coo()
    gd = kern.quad_contract(x, x)
    checks.append(("quad tensor diagonal",
                   np.abs(Gc.contract(x, x) - gd).max() / np.abs(gd).max()))
    gp = kern.quad_contract(x, y) + kern.quad_contract(y, x)
    checks.append(("quad tensor polarization",
                   np.abs(Gc.contract(x, y) + Gc.contract(y, x) - gp).max()
                   / np.abs(gp).max()))
    hd = kern.cubic_contract(x, x, x)
    checks.append(("cubic tensor diagonal",
                   np.abs(Hc.contract(x, x, x) - hd).max()
                   / np.abs(hd).max()))
    perms = [(x, y, z), (x, z, y), (y, x, z), (y, z, x), (z, x, y),
             (z, y, x)]
    hp = sum(kern.cubic_contract(*p) for p in perms)
    checks.append(("cubic tensor polarization",
                   np.abs(sum(Hc.contract(*p) for p in perms) - hp).max()
                   / np.abs(hp).max()))

    # 2x2 adjugate algebra: adj(F) F = det(F) I, and linearity
    F = rng.standard_normal((40, 2, 2))
    G2 = rng.standard_normal((40, 2, 2))
    detF = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
    ident = np.einsum('nij,njk->nik', adjugate(F), F)
    err = np.abs(ident - detF[:, None, None] * np.eye(2)).max()
    checks.append(("adjugate identity", err / np.abs(detF).max()))
    lin = adjugate(F + G2) - adjugate(F) - adjugate(G2)
    checks.append(("adjugate linearity", np.abs(lin).max()))
    return checks


def _pencil_checks(form, mesh, dofs, mat, v_dc, rng):
    """Exactness of one assembled first-order pencil.

    Builds the static bias state, assembles the scaled pencil about it
    and verifies that A y + Q(y, y) + T(y, y, y) reproduces the direct
    nonlinear residual at a finite increment, that the exported
    coordinate tensors agree with the contraction engine, and that the
    declared block sparsity holds.
    """
    if form == "field":
        prob = statics.CoupledStatic(mesh, dofs, mat)
        names = ("V", "S", "PSI", "PHI")
    else:
        prob = statics.PlateStatic(mesh, dofs, mat, gap=BEAM_GAP)
        names = ("V", "PSI")
    x0, _, rep = statics.voltage_ramp(prob, v_dc)
    assert rep.converged
    if form == "field":
        ops = assemble_operators(mesh, dofs, mat, prob.unpack(x0, v_dc))
        sys = dae.build_dae(ops, dofs, alpha=4.5e-3, beta=0.0, g=BEAM_GAP)
    else:
        u0, psi0 = prob.unpack(x0, v_dc)
        ops = mppf.assemble_plate_operators(mesh, dofs, mat, prob.kern,
                                            u0, psi0)
        sys = dae.build_plate_dae(ops, dofs, alpha=4.5e-3, beta=0.0,
                                  g=BEAM_GAP)

    dx = 1e-2 * rng.standard_normal(prob.n) * prob.x_scale(v_dc)
    r0 = prob.residual_jacobian(x0, v_dc)[0]
    r1 = prob.residual_jacobian(x0 + dx, v_dc)[0]
    dr = r1 - r0
    sl = sys.slices
    yhat = np.zeros(sys.n)
    blocks = prob.blocks(dx)
    for name, b in zip(("U",) + names[1:], blocks):
        yhat[sl[name]] = b / sys.Sy[sl[name]]
    rhs = sys.rhs(yhat)

    checks = []
    off = np.concatenate([[0], np.cumsum([b.size for b in blocks])])
    # the pencil rows carry minus the row-scaled residual increment;
    # kinematic rows see only the (zero) velocity
    for i, name in enumerate(names):
        blk = rhs[sl[name]]
        ref = sys.Sr[sl[name]] * dr[off[i]:off[i + 1]]
        checks.append((f"{form} pencil expansion [{name}]",
                       np.abs(blk + ref).max() / np.abs(blk).max()))
    checks.append((f"{form} pencil kinematic rows",
                   np.abs(rhs[sl["U"]]).max()))

    y1, y2, y3 = (rng.standard_normal(sys.n) for _ in range(3))
    Qc, Tc = sys.Q.coo(), sys.T.coo()
    qd = sys.Q.contract(y1, y1)
    checks.append((f"{form} pencil quad diagonal",
                   np.abs(Qc.contract(y1, y1) - qd).max()
                   / np.abs(qd).max()))
    qp = sys.Q.contract(y1, y2) + sys.Q.contract(y2, y1)
    checks.append((f"{form} pencil quad polarization",
                   np.abs(Qc.contract(y1, y2) + Qc.contract(y2, y1)
                          - qp).max() / np.abs(qp).max()))
    td = sys.T.contract(y1, y1, y1)
    checks.append((f"{form} pencil cubic diagonal",
                   np.abs(Tc.contract(y1, y1, y1) - td).max()
                   / np.abs(td).max()))
    perms = [(y1, y2, y3), (y1, y3, y2), (y2, y1, y3), (y2, y3, y1),
             (y3, y1, y2), (y3, y2, y1)]
    tp = sum(sys.T.contract(*p) for p in perms)
    checks.append((f"{form} pencil cubic polarization",
                   np.abs(sum(Tc.contract(*p) for p in perms) - tp).max()
                   / np.abs(tp).max()))

    ok, _ = dae.audit_structure(sys)
    checks.append((f"{form} pencil block sparsity", 0.0 if ok else 1.0))
    return checks


@pytest.fixture(scope="session")
def operator_battery(solid_mesh, solid_dofs, air_mesh, air_dofs, mat):
    """Machine-precision identity suite over both formulations.

    Returns (name, normalized error) pairs; each entry belongs to the
    1e-12 class.
    """
    rng = np.random.default_rng(20240811)
    checks = _solid_checks(solid_mesh, solid_dofs, mat, rng)
    checks += _pencil_checks("plate", solid_mesh, solid_dofs, mat, 1.7, rng)
    checks += _pencil_checks("field", air_mesh, air_dofs, mat, 1.7, rng)
    return checks
