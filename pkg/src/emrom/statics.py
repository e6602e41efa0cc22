"""Static equilibrium under DC voltage, voltage ramps and pull-in sweeps.

Both electromechanical formulations expose the same problem interface
(pack / unpack / residual_jacobian), so one damped Newton driver serves
them.  Linear solves are row-equilibrated and column-scaled by the
characteristic size of each unknown, which keeps the iteration well
conditioned despite the wildly different physical units of the blocks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh
from .dofmap import DofMap, VOLT, TIED
from .assembly import (EPS0, Material, FieldState, OperatorSet,
                       assemble_operators, split_sext)
from .mppf import PlateKernel, assemble_plate_operators


class CoupledStatic:
    """Static problem of the full-field formulation.

    Unknown vector layout: [u | s | psi | phi], free dofs only.
    """

    def __init__(self, mesh: Mesh, dofs: DofMap, mat: Material,
                 eps0: float = EPS0):
        self.mesh = mesh
        self.dofs = dofs
        self.mat = mat
        self.eps0 = eps0
        d = dofs
        self.sizes = (d.n_u, d.n_s, d.n_psi, d.n_phi)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.n = int(self.offsets[-1])
        self.gap = _facing_gap(mesh)
        self.ops: Optional[OperatorSet] = None

    def blocks(self, x):
        o = self.offsets
        return [x[o[i]:o[i + 1]] for i in range(4)]

    def unpack(self, x, V: float) -> FieldState:
        d = self.dofs
        u_f, s_f, psi, phi_f = self.blocks(x)
        st = FieldState.zero(self.mesh.n_nodes, d.n_psi)
        st.u = d.u_nodal(u_f)
        s = np.zeros((self.mesh.n_nodes, 2))
        free = d.s_dof >= 0
        s[free] = s_f[d.s_dof[free]]
        tied = d.s_dof == TIED
        s[tied] = st.u[tied]
        st.s = s
        st.psi = psi.copy()
        phi = np.zeros(self.mesh.n_nodes)
        pf = d.phi_dof >= 0
        phi[pf] = phi_f[d.phi_dof[pf]]
        phi[d.phi_dof == VOLT] = V
        st.phi = phi
        return st

    def pack(self, st: FieldState) -> np.ndarray:
        d = self.dofs
        x = np.zeros(self.n)
        u_f, s_f, psi, phi_f = self.blocks(x)
        u_f[:] = d.u_vector(st.u)
        free = d.s_dof >= 0
        s_f[d.s_dof[free]] = st.s[free]
        psi[:] = st.psi
        pf = d.phi_dof >= 0
        phi_f[d.phi_dof[pf]] = st.phi[pf]
        return x

    def residual_jacobian(self, x, V: float):
        st = self.unpack(x, V)
        ops = assemble_operators(self.mesh, self.dofs, self.mat, st,
                                 self.eps0)
        self.ops = ops
        d = self.dofs
        E_s, E_u = split_sext(ops.E_ext, d)
        C_s, C_u = split_sext(ops.C_sext, d)
        D_s, D_u = split_sext(ops.D_sext, d)
        L = ops.L_phi if ops.L_phi is not None else None
        J = sp.bmat(
            [[ops.K - ops.R_u, None, -ops.R_psi, None],
             [E_u, E_s, None, None],
             [C_u, C_s, ops.C_psi, ops.C_phi],
             [D_u, D_s, ops.D_psi, L]], format="csr")
        r = np.concatenate([ops.r_u, ops.r_s, ops.r_psi, ops.r_phi])
        return r, J

    def x_scale(self, V: float) -> np.ndarray:
        vc = max(abs(V), 1.0)
        g = self.gap
        return np.concatenate([
            np.full(self.sizes[0], g), np.full(self.sizes[1], g),
            np.full(self.sizes[2], vc / g), np.full(self.sizes[3], vc)])


class PlateStatic:
    """Static problem of the parallel-plate formulation.

    Unknown vector layout: [u | edge field values].
    """

    def __init__(self, mesh: Mesh, dofs: DofMap, mat: Material,
                 gap: Optional[float] = None, eps0: float = EPS0):
        self.mesh = mesh
        self.dofs = dofs
        self.mat = mat
        self.gap = _facing_gap(mesh) if gap is None else float(gap)
        self.kern = PlateKernel(mesh, dofs, self.gap, mat.width, eps0)
        self.sizes = (dofs.n_u, self.kern.n_psi)
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.n = int(self.offsets[-1])
        self.ops = None

    def blocks(self, x):
        o = self.offsets
        return [x[o[i]:o[i + 1]] for i in range(2)]

    def unpack(self, x, V: float):
        u_f, psi = self.blocks(x)
        return self.dofs.u_nodal(u_f), psi.copy()

    def pack(self, u_nodal, psi):
        return np.concatenate([self.dofs.u_vector(u_nodal), psi])

    def residual_jacobian(self, x, V: float):
        u, psi = self.unpack(x, V)
        ops = assemble_plate_operators(self.mesh, self.dofs, self.mat,
                                       self.kern, u, psi)
        self.ops = ops
        J = sp.bmat([[ops.K, -ops.R_psi],
                     [ops.C_u, ops.C_psi]], format="csr")
        r = np.concatenate([ops.r_u, ops.r_psi - V * ops.F_psi])
        return r, J

    def x_scale(self, V: float) -> np.ndarray:
        vc = max(abs(V), 1.0)
        return np.concatenate([np.full(self.sizes[0], self.gap),
                               np.full(self.sizes[1], vc / self.gap)])


def _facing_gap(mesh: Mesh) -> float:
    """Vertical distance between the facing surface and the electrode."""
    fac = mesh.edges_where("FACING")
    if len(fac) == 0:
        return 1.0
    y_top = mesh.nodes[mesh.edges[fac]][:, :, 1].mean()
    ele = mesh.edges_where("ELECTRODE")
    if len(ele) == 0:
        return 1.0
    y_el = mesh.nodes[mesh.edges[ele]][:, :, 1].mean()
    return abs(y_el - y_top)


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residuals: list = field(default_factory=list)
    steps: list = field(default_factory=list)


def _scaled_solve(J: sp.csr_matrix, r: np.ndarray, xc: np.ndarray):
    rmax = np.abs(J).max(axis=1).toarray().ravel()
    if np.any(rmax == 0.0):
        raise np.linalg.LinAlgError("structurally singular Jacobian row")
    Dr = sp.diags(1.0 / rmax)
    Js = (Dr @ J @ sp.diags(xc)).tocsc()
    dx = spla.splu(Js).solve(r / rmax)
    return xc * dx


def newton_solve(problem, V: float, x0: Optional[np.ndarray] = None,
                 tol: float = 1e-10, max_iter: int = 30):
    """Newton iteration on a static problem; returns (x, report)."""
    x = np.zeros(problem.n) if x0 is None else x0.copy()
    xc = problem.x_scale(V)
    rep = SolveReport(False, 0)
    for it in range(max_iter):
        r, J = problem.residual_jacobian(x, V)
        try:
            dx = _scaled_solve(J, r, xc)
        except (np.linalg.LinAlgError, RuntimeError):
            return x, rep
        x -= dx
        step = np.max(np.abs(dx / xc))
        rep.iterations = it + 1
        rep.residuals.append(float(np.linalg.norm(r)))
        rep.steps.append(float(step))
        if not np.isfinite(step) or step > 50.0:
            return x, rep
        if step < tol:
            rep.converged = True
            return x, rep
    return x, rep


def voltage_ramp(problem, V_target: float, x0: Optional[np.ndarray] = None,
                 V_start: float = 0.0, steps: int = 4,
                 max_halvings: int = 10, tol: float = 1e-10):
    """Ramp the voltage to a target, halving the increment on failure."""
    x = np.zeros(problem.n) if x0 is None else x0.copy()
    V = V_start
    dV = (V_target - V_start) / max(steps, 1)
    halvings = 0
    rep = SolveReport(True, 0)
    while abs(V - V_target) > 1e-14 * max(1.0, abs(V_target)):
        Vn = V + dV
        if (dV > 0) == (Vn > V_target):
            Vn = min(Vn, V_target) if dV > 0 else max(Vn, V_target)
        xn, r = newton_solve(problem, Vn, x, tol=tol)
        if r.converged:
            x, V = xn, Vn
            continue
        halvings += 1
        dV *= 0.5
        if halvings > max_halvings:
            rep.converged = False
            return x, V, rep
    return x, V, rep


@dataclass
class PullInResult:
    voltages: np.ndarray
    midpoint: np.ndarray       # probe displacement at each voltage
    omega1: np.ndarray
    V_last: float              # last converged voltage
    u_last: float
    V_pullin: float            # extrapolated instability voltage

    def rows(self):
        for v, u, w in zip(self.voltages, self.midpoint, self.omega1):
            yield v, u, w


def pullin_sweep(problem, V_guess: float, probe_dof: int,
                 omega_fn: Optional[Callable] = None,
                 dv_rel: float = 0.05, dv_min_rel: float = 1e-3,
                 tol: float = 1e-10) -> PullInResult:
    """Quasi-static voltage sweep up to loss of convergence.

    Steps the voltage by ``dv_rel * V_guess``; every failed step is
    retried with half the increment until it drops below
    ``dv_min_rel * V_guess``.  The instability voltage is then
    extrapolated from the last three samples: the squared frequency
    closes as the square root of ``V_pi^2 - V^2`` at the fold, so its
    square is fitted linearly against the squared voltage.  Without a
    frequency callback the last converged voltage is reported instead.
    """
    x = np.zeros(problem.n)
    V = 0.0
    dV = dv_rel * V_guess
    vs, us, ws = [], [], []
    while dV >= dv_min_rel * V_guess:
        Vn = V + dV
        xn, rep = newton_solve(problem, Vn, x, tol=tol)
        if not rep.converged:
            dV *= 0.5
            continue
        x, V = xn, Vn
        vs.append(V)
        us.append(float(x[probe_dof]))
        ws.append(float(omega_fn(problem, x, V)) if omega_fn else np.nan)
    vs = np.asarray(vs)
    us = np.asarray(us)
    ws = np.asarray(ws)
    if omega_fn and len(vs) >= 3:
        coef = np.polyfit(vs[-3:] ** 2, ws[-3:] ** 4, 1)
        V_pi = float(np.sqrt(max(-coef[1] / coef[0], 0.0)))
    else:
        V_pi = float(vs[-1]) if len(vs) else np.nan
    return PullInResult(vs, us, ws, float(vs[-1]), float(us[-1]), V_pi)


def measured_plate_stiffness(mesh: Mesh, dofs: DofMap, mat: Material,
                             probe_dof: int) -> float:
    """Effective spring constant seen by the facing surface.

    Applies a unit pressure on the FACING edges of the purely mechanical
    problem and reads the probe displacement; returns total force over
    displacement, the stiffness of the equivalent lumped oscillator.
    """
    from .assembly import SolidKernel
    kern = PlateKernel(mesh, dofs, 1.0, mat.width)
    solid = SolidKernel(mesh, dofs, mat)
    K = solid.stiffness()
    sw = np.einsum('eq,qm->em', kern.w, kern.S)
    yrow = dofs.u_dof[kern.nodes][:, :, 1]
    f = np.zeros(dofs.n_u)
    np.add.at(f, yrow.ravel()[yrow.ravel() >= 0],
              sw.ravel()[yrow.ravel() >= 0])
    u = spla.spsolve(K.tocsc(), f)
    area = kern.length.sum()
    return float(area / u[probe_dof])
