"""Operator assembly for the coupled electromechanical continuum model.

The structure is described by a Saint Venant-Kirchhoff solid on quadratic
triangles.  The surrounding dielectric carries three fields: a fictitious
extension displacement ``s`` that follows the structure at the interface
and vanishes on the remaining air boundary, a piecewise-linear (per
triangle, discontinuous) field ``psi`` that represents the electric field
pulled back to the reference domain, and the potential ``phi``.  Writing
the air equations in terms of ``psi`` makes every coupling polynomial:
quadratic in the air, cubic in the solid and on the loaded surface.

All assembly routines work about a given nodal state and return the
residual constants together with exact Jacobian / quadratic / cubic
operators of the expansion about that state.  Sign convention: operators
are derivatives of the residual as written, so a residual expands as

    r(x0 + d) = r(x0) + J d + Q(d, d) + T(d, d, d)

with no higher-order remainder.  The dynamic pencil applies its own signs.

Units are micrometre / microsecond / kilogram / volt throughout, which
puts Young's moduli near 1e-7, densities near 1e-15 and the vacuum
permittivity at 8.854e-18; frequencies come out in rad / us.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .elements import (TRI_QP, TRI_QW, EDGE_QP, EDGE_QW, tri6_shape,
                       tri6_shape_grad, p1_shape, edge3_shape,
                       edge3_shape_grad)
from .mesh import Mesh, AIR, SOLID

SOLID_SURFACE = "SOLID_SURFACE"
from .dofmap import DofMap, VOLT
from .tensors import QuadTensor, CubicTensor, CooBuilder, _gather

EPS0 = 8.854e-18  # vacuum permittivity, kg um / (us^2 V^2)

_I2 = np.eye(2)
# adjugate of a 2x2 matrix as a constant 4-tensor: adj(M)_ik = _ADJ[ikxy] M_xy
_ADJ = np.zeros((2, 2, 2, 2))
_ADJ[0, 0, 1, 1] = 1.0
_ADJ[0, 1, 0, 1] = -1.0
_ADJ[1, 0, 1, 0] = -1.0
_ADJ[1, 1, 0, 0] = 1.0


def adjugate(M: np.ndarray) -> np.ndarray:
    """adj(M) for fields of 2x2 matrices; linear in M, adj(I + M) = I + adj(M)."""
    return np.einsum('ikxy,...xy->...ik', _ADJ, M)


@dataclass
class Material:
    """Isotropic plane-stress solid with optional uniform pre-stress."""

    young: float
    poisson: float
    density: float
    prestress: Optional[np.ndarray] = None  # 2x2 second Piola stress at rest
    linear_only: bool = False
    width: float = 1.0  # out-of-plane extent, multiplies every operator

    @property
    def lam(self) -> float:
        return self.young * self.poisson / (1.0 - self.poisson ** 2)

    @property
    def mu(self) -> float:
        return self.young / (2.0 * (1.0 + self.poisson))

    def stiffen(self, M: np.ndarray) -> np.ndarray:
        """Apply the plane-stress elasticity tensor to symmetric 2x2 fields."""
        tr = M[..., 0, 0] + M[..., 1, 1]
        return self.lam * tr[..., None, None] * _I2 + 2.0 * self.mu * M


@dataclass
class FieldState:
    """Full nodal state about which operators are assembled.

    Arrays are indexed by mesh node (``psi`` by its own dof numbering);
    constrained values are stored explicitly so residual evaluation never
    needs the constraint table.
    """

    u: np.ndarray    # (nn, 2)
    s: np.ndarray    # (nn, 2)
    phi: np.ndarray  # (nn,)
    psi: np.ndarray  # (n_psi,)

    @classmethod
    def zero(cls, n_nodes: int, n_psi: int) -> "FieldState":
        return cls(np.zeros((n_nodes, 2)), np.zeros((n_nodes, 2)),
                   np.zeros(n_nodes), np.zeros(n_psi))

    def copy(self) -> "FieldState":
        return FieldState(self.u.copy(), self.s.copy(),
                          self.phi.copy(), self.psi.copy())


def tri_geometry(mesh: Mesh, tris: np.ndarray, width: float):
    """Quadrature tables for a batch of six-node triangles.

    Returns shape values ``N`` (q, 6), physical gradients ``dNp``
    (E, q, 6, 2) and weights ``w`` (E, q) that include the Jacobian
    determinant and the out-of-plane width.
    """
    N = tri6_shape(TRI_QP)
    dNr = tri6_shape_grad(TRI_QP)          # (q, 6, 2)
    X = mesh.nodes[mesh.tris[tris]]        # (E, 6, 2)
    J = np.einsum('eac,qad->eqcd', X, dNr)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0.0):
        raise ValueError("non-positive Jacobian in triangle batch")
    Jinv = np.empty_like(J)
    Jinv[..., 0, 0] = J[..., 1, 1]
    Jinv[..., 0, 1] = -J[..., 0, 1]
    Jinv[..., 1, 0] = -J[..., 1, 0]
    Jinv[..., 1, 1] = J[..., 0, 0]
    Jinv /= det[..., None, None]
    dNp = np.einsum('qad,eqdc->eqac', dNr, Jinv)
    w = TRI_QW[None, :] * det * width
    return N, dNp, w


def _grad_field(dNp, nodal):
    """Gradient G_id = d(field_i)/dx_d from local nodal values (E, n, 2)."""
    return np.einsum('eqad,eai->eqid', dNp, nodal)


def _scatter_vec(n_out, rows, vals):
    rows = np.asarray(rows).ravel()
    vals = np.asarray(vals).ravel()
    keep = rows >= 0
    if np.iscomplexobj(vals):
        out = np.bincount(rows[keep], weights=vals[keep].real, minlength=n_out)
        return out + 1j * np.bincount(rows[keep], weights=vals[keep].imag,
                                      minlength=n_out)
    return np.bincount(rows[keep], weights=vals[keep], minlength=n_out)


def _scatter_mat(builder: CooBuilder, loc, rdofs, cdofs):
    E, r = rdofs.shape
    c = cdofs.shape[1]
    rows = np.broadcast_to(rdofs[:, :, None], (E, r, c))
    cols = np.broadcast_to(cdofs[:, None, :], (E, r, c))
    builder.add(rows, cols, loc)


class SolidKernel:
    """Element tables and operators of the solid about a displacement state.

    The stiffness returned here is the exact tangent of the internal force
    at the state, and the quadratic / cubic maps complete the polynomial
    expansion: F(u0 + d) = F(u0) + K d + G(d, d) + H(d, d, d) identically.
    """

    def __init__(self, mesh: Mesh, dofs: DofMap, mat: Material,
                 u0: Optional[np.ndarray] = None):
        self.mesh = mesh
        self.dofs = dofs
        self.mat = mat
        self.tris = mesh.tris_where(SOLID)
        self.N, self.dNp, self.w = tri_geometry(mesh, self.tris, mat.width)
        conn = mesh.tris[self.tris]                      # (E, 6)
        self.conn = conn
        self.udof = dofs.u_dof[conn].reshape(len(conn), 12)
        if u0 is None:
            u0 = np.zeros((mesh.n_nodes, 2))
        self.u0 = u0
        self.u0loc = u0[conn]                            # (E, 6, 2)
        if mat.linear_only:
            self.G0 = np.zeros(self.dNp.shape[:2] + (2, 2))
        else:
            self.G0 = _grad_field(self.dNp, self.u0loc)
        self.F0 = _I2 + self.G0
        E0 = 0.5 * (self.G0 + np.swapaxes(self.G0, -1, -2)
                    + np.einsum('eqic,eqid->eqcd', self.G0, self.G0))
        pre = (np.zeros((2, 2)) if mat.prestress is None
               else np.asarray(mat.prestress, dtype=float))
        if pre.ndim == 0:
            # scalar convention: uniaxial tension along the first axis
            pre = np.array([[float(pre), 0.0], [0.0, 0.0]])
        self.pre = pre
        if mat.linear_only:
            self.PK0 = np.broadcast_to(pre, self.G0.shape)
        else:
            self.PK0 = pre + mat.stiffen(E0)
        # strain variation of the basis about u0: Elin_(ai) = sym(F0^T grad_ai)
        self.Elin = 0.5 * (np.einsum('eqic,eqad->eqaicd', self.F0, self.dNp)
                           + np.einsum('eqid,eqac->eqaicd', self.F0, self.dNp))
        self._K = None

    @property
    def n_u(self) -> int:
        return self.dofs.n_u

    def mass(self) -> sp.csr_matrix:
        loc = np.einsum('eq,qa,qb->eab', self.w * self.mat.density,
                        self.N, self.N)
        full = np.einsum('eab,ij->eaibj', loc, _I2).reshape(-1, 12, 12)
        b = CooBuilder((self.n_u, self.n_u))
        _scatter_mat(b, full, self.udof, self.udof)
        return b.tocsr()

    def stiffness(self) -> sp.csr_matrix:
        if self._K is not None:
            return self._K
        AE = self.mat.stiffen(self.Elin)
        loc = np.einsum('eq,eqaicd,eqbjcd->eaibj', self.w, self.Elin, AE,
                        optimize=True)
        if not self.mat.linear_only:
            geo = np.einsum('eq,eqac,eqcd,eqbd->eab', self.w, self.dNp,
                            self.PK0, self.dNp, optimize=True)
            loc += np.einsum('eab,ij->eaibj', geo, _I2)
        b = CooBuilder((self.n_u, self.n_u))
        _scatter_mat(b, loc.reshape(-1, 12, 12), self.udof, self.udof)
        self._K = b.tocsr()
        return self._K

    def internal_force(self) -> np.ndarray:
        """Internal force at the kernel state, on free displacement dofs."""
        if self.mat.linear_only:
            eps = 0.5 * (np.einsum('ic,eqad->eqaicd', _I2, self.dNp)
                         + np.einsum('id,eqac->eqaicd', _I2, self.dNp))
            f = np.einsum('eq,cd,eqaicd->eai', self.w, self.pre, eps)
            out = _scatter_vec(self.n_u, self.udof, f.reshape(-1, 12))
            return out + self.stiffness() @ self.dofs.u_vector(self.u0)
        f = np.einsum('eq,eqcd,eqaicd->eai', self.w, self.PK0, self.Elin)
        return _scatter_vec(self.n_u, self.udof, f.reshape(-1, 12))

    def _gradients(self, xvec):
        xl = _gather(xvec, self.udof).reshape(-1, 6, 2)
        return np.einsum('eqad,eai->eqid', self.dNp, xl)

    def quad_contract(self, x, y) -> np.ndarray:
        """Directional quadratic force G(x, y); arguments are ordered."""
        Gx, Gy = self._gradients(x), self._gradients(y)
        FtGx = np.einsum('eqic,eqid->eqcd', self.F0, Gx)
        Elx = 0.5 * (FtGx + np.swapaxes(FtGx, -1, -2))
        GxGy = np.einsum('eqic,eqid->eqcd', Gx, Gy)
        Exy = 0.5 * (GxGy + np.swapaxes(GxGy, -1, -2))
        Rm = (np.einsum('eqic,eqcd->eqid', Gy, self.mat.stiffen(Elx))
              + 0.5 * np.einsum('eqic,eqcd->eqid', self.F0,
                                self.mat.stiffen(Exy)))
        rows = np.einsum('eq,eqad,eqid->eai', self.w, self.dNp, Rm)
        return _scatter_vec(self.n_u, self.udof, rows.reshape(-1, 12))

    def cubic_contract(self, x, y, z) -> np.ndarray:
        """Directional cubic force H(x, y, z); arguments are ordered."""
        Gx, Gy, Gz = self._gradients(x), self._gradients(y), self._gradients(z)
        GxGy = np.einsum('eqic,eqid->eqcd', Gx, Gy)
        Exy = 0.5 * (GxGy + np.swapaxes(GxGy, -1, -2))
        Rm = 0.5 * np.einsum('eqic,eqcd->eqid', Gz, self.mat.stiffen(Exy))
        rows = np.einsum('eq,eqad,eqid->eai', self.w, self.dNp, Rm)
        return _scatter_vec(self.n_u, self.udof, rows.reshape(-1, 12))

    def _basis_fields(self):
        Grad = np.einsum('ic,eqad->eqaicd', _I2, self.dNp)
        g12 = Grad.reshape(Grad.shape[:2] + (12, 2, 2))
        e12 = self.Elin.reshape(self.Elin.shape[:2] + (12, 2, 2))
        GtG = np.einsum('eqmic,eqnid->eqmncd', g12, g12)
        Ebar = 0.5 * (GtG + np.swapaxes(GtG, -1, -2))
        return e12, Ebar

    def quad_coo(self) -> QuadTensor:
        """Quadratic force as a coordinate tensor, symmetrized in its slots."""
        e12, Ebar = self._basis_fields()
        AE = self.mat.stiffen(e12)
        ABar = self.mat.stiffen(Ebar)
        raw = (np.einsum('eq,eqncd,eqmpcd->emnp', self.w, AE, Ebar,
                         optimize=True)
               + 0.5 * np.einsum('eq,eqnpcd,eqmcd->emnp', self.w, ABar, e12,
                                 optimize=True))
        sym = 0.5 * (raw + np.swapaxes(raw, 2, 3))
        E = len(self.tris)
        sh = (E, 12, 12, 12)
        m = np.broadcast_to(self.udof[:, :, None, None], sh)
        n = np.broadcast_to(self.udof[:, None, :, None], sh)
        p = np.broadcast_to(self.udof[:, None, None, :], sh)
        keep = (m >= 0) & (n >= 0) & (p >= 0) & (sym != 0.0)
        t = QuadTensor(self.n_u, (self.n_u, self.n_u),
                       m[keep], n[keep], p[keep], sym[keep])
        return t.compress()

    def cubic_coo(self) -> CubicTensor:
        """Cubic force as a coordinate tensor, symmetrized in its slots."""
        _, Ebar = self._basis_fields()
        ABar = self.mat.stiffen(Ebar)
        raw = 0.5 * np.einsum('eq,eqnpcd,eqrmcd->emnpr', self.w, ABar, Ebar,
                              optimize=True)
        sym = (raw + np.transpose(raw, (0, 1, 2, 4, 3))
               + np.transpose(raw, (0, 1, 3, 2, 4))
               + np.transpose(raw, (0, 1, 3, 4, 2))
               + np.transpose(raw, (0, 1, 4, 2, 3))
               + np.transpose(raw, (0, 1, 4, 3, 2))) / 6.0
        E = len(self.tris)
        sh = (E, 12, 12, 12, 12)
        m = np.broadcast_to(self.udof[:, :, None, None, None], sh)
        n = np.broadcast_to(self.udof[:, None, :, None, None], sh)
        p = np.broadcast_to(self.udof[:, None, None, :, None], sh)
        r = np.broadcast_to(self.udof[:, None, None, None, :], sh)
        keep = (m >= 0) & (n >= 0) & (p >= 0) & (r >= 0) & (sym != 0.0)
        t = CubicTensor(self.n_u, (self.n_u,) * 3,
                        m[keep], n[keep], p[keep], r[keep], sym[keep])
        return t.compress()


class SolidQuad:
    """Quadratic solid force with fast contraction and COO export."""

    def __init__(self, kernel: SolidKernel):
        self.kernel = kernel
        self.n_out = kernel.n_u
        self.shape_in = (kernel.n_u, kernel.n_u)

    def contract(self, x, y):
        return self.kernel.quad_contract(x, y)

    def coo(self) -> QuadTensor:
        return self.kernel.quad_coo()


class SolidCubic:
    """Cubic solid force with fast contraction and COO export."""

    def __init__(self, kernel: SolidKernel):
        self.kernel = kernel
        self.n_out = kernel.n_u
        self.shape_in = (kernel.n_u,) * 3

    def contract(self, x, y, z):
        return self.kernel.cubic_contract(x, y, z)

    def coo(self) -> CubicTensor:
        return self.kernel.cubic_coo()


class AirKernel:
    """Tables and operators of the dielectric about an extension state.

    Covers the triangles that carry the pulled-back field ``psi``; with a
    boundary layer active this is the layer only and the remaining air is
    handled by :func:`plain_laplacian`.
    """

    def __init__(self, mesh: Mesh, dofs: DofMap, state: FieldState,
                 width: float):
        self.mesh = mesh
        self.dofs = dofs
        self.tris = dofs.psi_tri
        self.N, self.dNp, self.w = tri_geometry(mesh, self.tris, width)
        self.L = p1_shape(TRI_QP)                        # (q, 3)
        conn = mesh.tris[self.tris]
        self.conn = conn
        self.sext = dofs.s_ext_col[conn].reshape(len(conn), 12)
        self.phid = dofs.phi_dof[conn]                   # (E, 6) with codes
        base = dofs.psi_base[self.tris]
        self.psid = base[:, None] + np.arange(6)[None, :]  # (E, 6) global
        # state at quadrature points
        self.Gs0 = _grad_field(self.dNp, state.s[conn])
        self.F0 = _I2 + self.Gs0
        self.adjF0 = _I2 + adjugate(self.Gs0)
        psiv = state.psi[self.psid].reshape(-1, 3, 2)    # (E, 3, 2)
        self.psi0 = np.einsum('qv,evi->eqi', self.L, psiv)
        self.gphi0 = _grad_field(self.dNp, state.phi[conn][..., None])[..., 0, :]

    @property
    def n_psi(self):
        return self.dofs.n_psi

    def _phi_rows(self):
        return np.where(self.phid == VOLT, -1, self.phid)

    def _psi_field(self, x):
        xv = _gather(x, self.psid).reshape(len(self.tris), 3, 2)
        return np.einsum('qv,evi->eqi', self.L, xv)

    def _sgrad_field(self, x):
        xl = _gather(x, self.sext).reshape(-1, 6, 2)
        return np.einsum('eqad,eai->eqid', self.dNp, xl)

    def compat_matrices(self, n_sext: int, n_phi: int):
        """Jacobians of the compatibility rows, plus the voltage column."""
        E = len(self.tris)
        bC = CooBuilder((self.n_psi, self.n_psi))
        loc = np.einsum('eq,qa,qb,eqji->eaibj', self.w, self.L, self.L,
                        self.F0).reshape(E, 6, 6)
        _scatter_mat(bC, loc, self.psid, self.psid)

        bS = CooBuilder((self.n_psi, n_sext))
        loc = np.einsum('eq,qa,eqj,eqbi->eaibj', self.w, self.L, self.psi0,
                        self.dNp).reshape(E, 6, 12)
        _scatter_mat(bS, loc, self.psid, self.sext)

        loc = -np.einsum('eq,qa,eqbi->eaib', self.w, self.L,
                         self.dNp).reshape(E, 6, 6)
        bP = CooBuilder((self.n_psi, n_phi))
        _scatter_mat(bP, loc, self.psid, self._phi_rows())
        volt = self.phid == VOLT
        lv = np.where(volt[:, None, :], loc, 0.0).sum(axis=2)
        cv = _scatter_vec(self.n_psi, np.broadcast_to(self.psid, lv.shape), lv)
        return bC.tocsr(), bS.tocsr(), bP.tocsr(), cv

    def electro_matrices(self, n_sext: int, n_phi: int):
        """Jacobians of the potential rows with respect to psi and extension."""
        E = len(self.tris)
        phir = self._phi_rows()

        bPsi = CooBuilder((n_phi, self.n_psi))
        loc = np.einsum('eq,eqci,eqij,qb->ecbj', self.w, self.dNp,
                        self.adjF0, self.L).reshape(E, 6, 6)
        _scatter_mat(bPsi, loc, phir, self.psid)

        bS = CooBuilder((n_phi, n_sext))
        loc = np.einsum('eq,eqci,ikjd,eqbd,eqk->ecbj', self.w, self.dNp,
                        _ADJ, self.dNp, self.psi0,
                        optimize=True).reshape(E, 6, 12)
        _scatter_mat(bS, loc, phir, self.sext)
        return bPsi.tocsr(), bS.tocsr()

    def extension_matrix(self, n_sext: int) -> sp.csr_matrix:
        """Harmonic-extension rows over free extension dofs."""
        srow = self.dofs.s_dof[self.conn].reshape(-1, 12)
        b = CooBuilder((self.dofs.n_s, n_sext))
        loc = np.einsum('eq,eqad,eqbd,ij->eaibj', self.w, self.dNp, self.dNp,
                        _I2).reshape(len(self.tris), 12, 12)
        _scatter_mat(b, loc, srow, self.sext)
        return b.tocsr()

    def residuals(self, n_phi: int):
        """Residuals of the three air rows at the kernel state."""
        rq = np.einsum('eqji,eqj->eqi', self.F0, self.psi0) - self.gphi0
        rows = np.einsum('eq,qa,eqi->eai', self.w, self.L, rq)
        gidx = self.psid.reshape(len(self.tris), 3, 2)
        r_psi = _scatter_vec(self.n_psi, gidx, rows)

        dv = np.einsum('eqik,eqk->eqi', self.adjF0, self.psi0)
        rows = np.einsum('eq,eqci,eqi->ec', self.w, self.dNp, dv)
        r_phi = _scatter_vec(n_phi, self._phi_rows(), rows)

        srow = self.dofs.s_dof[self.conn].reshape(-1, 12)
        rows = np.einsum('eq,eqad,eqid->eai', self.w, self.dNp, self.Gs0)
        r_s = _scatter_vec(self.dofs.n_s, srow, rows.reshape(-1, 12))
        return r_psi, r_s, r_phi

    def quad_compat(self, n_sext: int) -> "AirQuad":
        return AirQuad(self, n_sext, row="psi")

    def quad_electro(self, n_sext: int, n_phi: int) -> "AirQuad":
        return AirQuad(self, n_sext, row="phi", n_phi=n_phi)


class AirQuad:
    """Bilinear (psi, extension) coupling of one air equation row."""

    def __init__(self, kern: AirKernel, n_sext: int, row: str, n_phi: int = 0):
        self.kern = kern
        self.row = row
        self.n_sext = n_sext
        self.n_out = kern.n_psi if row == "psi" else n_phi
        self.shape_in = (kern.n_psi, n_sext)

    def contract(self, xpsi, ysext):
        k = self.kern
        px = k._psi_field(xpsi)
        Gy = k._sgrad_field(ysext)
        if self.row == "psi":
            v = np.einsum('eqji,eqj->eqi', Gy, px)
            rows = np.einsum('eq,qa,eqi->eai', k.w, k.L, v)
            return _scatter_vec(self.n_out, k.psid.reshape(-1, 3, 2), rows)
        v = np.einsum('eqik,eqk->eqi', adjugate(Gy), px)
        rows = np.einsum('eq,eqci,eqi->ec', k.w, k.dNp, v)
        return _scatter_vec(self.n_out, k._phi_rows(), rows)

    def coo(self) -> QuadTensor:
        k = self.kern
        E = len(k.tris)
        if self.row == "psi":
            val = np.einsum('eq,qa,qb,eqci->eabci', k.w, k.L, k.L, k.dNp)
            val6 = np.einsum('eabci,jk->eaibjck', val, _I2).reshape(E, 6, 6, 12)
            rows = k.psid
        else:
            val6 = np.einsum('eq,eqci,ijly,eqdy,qb->ecbjdl', k.w, k.dNp,
                             _ADJ, k.dNp, k.L,
                             optimize=True).reshape(E, 6, 6, 12)
            rows = k._phi_rows()
        sh = val6.shape
        ii = np.broadcast_to(rows[:, :, None, None], sh)
        jj = np.broadcast_to(k.psid[:, None, :, None], sh)
        kk = np.broadcast_to(k.sext[:, None, None, :], sh)
        keep = (ii >= 0) & (kk >= 0) & (val6 != 0.0)
        t = QuadTensor(self.n_out, self.shape_in,
                       ii[keep], jj[keep], kk[keep], val6[keep])
        return t.compress()


def plain_laplacian(mesh: Mesh, dofs: DofMap, state: FieldState,
                    width: float):
    """Potential rows on air triangles that carry no pulled-back field.

    Returns the Laplacian over free potential dofs, the column for
    voltage-driven nodes and the residual at the state, or ``None`` when
    every air triangle carries the full field set.
    """
    air = mesh.tris_where(AIR)
    plain = np.setdiff1d(air, dofs.psi_tri)
    if len(plain) == 0:
        return None
    _, dNp, w = tri_geometry(mesh, plain, width)
    conn = mesh.tris[plain]
    phid = dofs.phi_dof[conn]
    phir = np.where(phid == VOLT, -1, phid)
    loc = np.einsum('eq,eqad,eqbd->eab', w, dNp, dNp)
    b = CooBuilder((dofs.n_phi, dofs.n_phi))
    _scatter_mat(b, loc, phir, phir)
    volt = phid == VOLT
    lv = np.where(volt[:, None, :], loc, 0.0).sum(axis=2)
    l_v = _scatter_vec(dofs.n_phi, phir, lv)
    g0 = _grad_field(dNp, state.phi[conn][..., None])[..., 0, :]
    rows = np.einsum('eq,eqad,eqd->ea', w, dNp, g0)
    r = _scatter_vec(dofs.n_phi, phir, rows)
    return b.tocsr(), l_v, r


class SurfaceKernel:
    """Electrostatic loading of the structure surface.

    Integrates the traction produced by the pulled-back field over the
    reference parametrisation of the loaded edges.  The identity used is
    that the area-weighted current normal equals the reference one plus
    the in-plane rotation of the tangential displacement derivative, so
    every term is polynomial in (u, psi).
    """

    def __init__(self, mesh: Mesh, dofs: DofMap, state: FieldState,
                 eps0: float, width: float):
        self.mesh = mesh
        self.dofs = dofs
        self.scale = eps0 * width
        edges = mesh.edges_where(SOLID_SURFACE)
        nbr = mesh.edge_neighbor(AIR)
        psi_ok = np.zeros(len(mesh.tris), dtype=bool)
        psi_ok[dofs.psi_tri] = True
        keep = [e for e in edges if nbr[e] >= 0 and psi_ok[nbr[e]]]
        if len(keep) != len(edges):
            raise ValueError("loaded surface edge without adjacent field-"
                             "carrying air triangle")
        self.edges = np.asarray(keep, dtype=int)
        nodes = mesh.edges[self.edges]                   # (Ne, 3)
        self.nodes = nodes
        self.udof = dofs.u_dof[nodes].reshape(len(nodes), 6)
        self.S = edge3_shape(EDGE_QP)                    # (q, 3)
        dS = edge3_shape_grad(EDGE_QP)                   # (q, 3)
        self.dS = dS
        X = mesh.nodes[nodes]                            # (Ne, 3, 2)
        self.xa = np.einsum('qa,eai->eqi', dS, X)        # reference tangent
        self.u0a = np.einsum('qa,eai->eqi', dS, state.u[nodes])
        # e_z x tangent of the current configuration, times the Jacobian
        self.Jn0 = _ez_cross(self.xa + self.u0a)
        # trace of psi from the adjacent air triangle, in its P1 basis
        tri = mesh.edge_neighbor(AIR)[self.edges]
        base = dofs.psi_base[tri]
        self.psid = base[:, None] + np.arange(6)[None, :]
        corners = mesh.nodes[mesh.tris[tri][:, :3]]      # (Ne, 3, 2)
        pts = np.einsum('qa,eai->eqi', self.S, X)        # edge qp coords
        self.Ltr = _barycentric(corners, pts)            # (Ne, q, 3)
        psiv = state.psi[self.psid].reshape(-1, 3, 2)
        self.psi0 = np.einsum('eqv,evi->eqi', self.Ltr, psiv)
        self.wq = EDGE_QW[None, :]

    def force(self, u_a=None, psi=None) -> np.ndarray:
        """Surface force at the given fields (defaults: kernel state)."""
        ua = self.u0a if u_a is None else u_a
        p = self.psi0 if psi is None else psi
        Jn = _ez_cross(self.xa + ua)
        p2 = np.einsum('eqi,eqi->eq', p, p)
        rows = 0.5 * self.scale * np.einsum('eq,eq,qm,eqi->emi',
                                            self.wq, p2, self.S, Jn)
        return _scatter_vec(self.dofs.n_u, self.udof.reshape(-1, 3, 2), rows)

    def matrices(self):
        """Jacobians of the surface force in displacement and field."""
        npsi = self.dofs.n_psi
        bU = CooBuilder((self.dofs.n_u, self.dofs.n_u))
        p2 = np.einsum('eqi,eqi->eq', self.psi0, self.psi0)
        # [(m,i),(n,j)]: 0.5 |psi0|^2 S_m (e_z x e_j)_i dS_n
        loc = 0.5 * self.scale * np.einsum('eq,eq,qm,ji,qn->eminj',
                                           self.wq, p2, self.S, _EZX,
                                           self.dS).reshape(-1, 6, 6)
        _scatter_mat(bU, loc, self.udof, self.udof)

        bP = CooBuilder((self.dofs.n_u, npsi))
        loc = self.scale * np.einsum('eq,qm,eqi,eqb,eqj->emibj',
                                     self.wq, self.S, self.Jn0, self.Ltr,
                                     self.psi0).reshape(-1, 6, 6)
        _scatter_mat(bP, loc, self.udof, self.psid)
        return bU.tocsr(), bP.tocsr()

    def quad_pp(self) -> QuadTensor:
        """Force quadratic in the field at frozen surface geometry."""
        val = 0.5 * self.scale * np.einsum('eq,qm,eqi,eqb,eqc->emibc',
                                           self.wq, self.S, self.Jn0,
                                           self.Ltr, self.Ltr)
        val6 = np.einsum('emibc,jk->emibjck', val, _I2).reshape(-1, 6, 6, 6)
        return self._pack_quad(val6, self.psid, self.psid,
                               (self.dofs.n_psi, self.dofs.n_psi))

    def quad_pu(self) -> QuadTensor:
        """Force bilinear in field perturbation and surface motion."""
        val = self.scale * np.einsum('eq,qm,eqb,eqj,ki,qn->emibjnk',
                                     self.wq, self.S, self.Ltr, self.psi0,
                                     _EZX, self.dS,
                                     optimize=True).reshape(-1, 6, 6, 6)
        return self._pack_quad(val, self.psid, self.udof,
                               (self.dofs.n_psi, self.dofs.n_u))

    def cubic_ppu(self) -> CubicTensor:
        """Force quadratic in the field times surface motion."""
        val = 0.5 * self.scale * np.einsum('eq,qm,eqb,eqc,li,qn->emibcnl',
                                           self.wq, self.S, self.Ltr,
                                           self.Ltr, _EZX, self.dS,
                                           optimize=True)
        val8 = np.einsum('emibcnl,jk->emibjcknl', val,
                         _I2).reshape(-1, 6, 6, 6, 6)
        sh = val8.shape
        ii = np.broadcast_to(self.udof[:, :, None, None, None], sh)
        jj = np.broadcast_to(self.psid[:, None, :, None, None], sh)
        kk = np.broadcast_to(self.psid[:, None, None, :, None], sh)
        ll = np.broadcast_to(self.udof[:, None, None, None, :], sh)
        keep = (ii >= 0) & (ll >= 0) & (val8 != 0.0)
        t = CubicTensor(self.dofs.n_u,
                        (self.dofs.n_psi, self.dofs.n_psi, self.dofs.n_u),
                        ii[keep], jj[keep], kk[keep], ll[keep], val8[keep])
        return t.compress()

    def _pack_quad(self, val, jd, kd, shape_in):
        sh = val.shape
        ii = np.broadcast_to(self.udof[:, :, None, None], sh)
        jj = np.broadcast_to(jd[:, None, :, None], sh)
        kk = np.broadcast_to(kd[:, None, None, :], sh)
        keep = (ii >= 0) & (jj >= 0) & (kk >= 0) & (val != 0.0)
        t = QuadTensor(self.dofs.n_u, shape_in,
                       ii[keep], jj[keep], kk[keep], val[keep])
        return t.compress()


_EZX = np.array([[0.0, 1.0], [-1.0, 0.0]])  # column j is e_z x e_j


def _ez_cross(v):
    """In-plane rotation by +90 degrees, e_z x v."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


def _barycentric(corners, pts):
    """Barycentric coordinates of points w.r.t. triangle corners.

    corners: (E, 3, 2), pts: (E, q, 2) -> (E, q, 3) matching the
    piecewise-linear basis (1 - xi - eta, xi, eta) on corner order.
    """
    d1 = corners[:, 1] - corners[:, 0]
    d2 = corners[:, 2] - corners[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    r = pts - corners[:, None, 0]
    lam1 = (r[..., 0] * d2[:, None, 1] - r[..., 1] * d2[:, None, 0]) / det[:, None]
    lam2 = (d1[:, None, 0] * r[..., 1] - d1[:, None, 1] * r[..., 0]) / det[:, None]
    return np.stack([1.0 - lam1 - lam2, lam1, lam2], axis=-1)


@dataclass
class OperatorSet:
    """Every block of the coupled problem, expanded about one state."""

    n_u: int
    n_s: int
    n_psi: int
    n_phi: int
    n_sext: int
    M: sp.csr_matrix
    K: sp.csr_matrix
    r_u: np.ndarray          # internal minus surface force at the state
    G: Optional[SolidQuad]
    H: Optional[SolidCubic]
    R_u: sp.csr_matrix       # surface force tangents
    R_psi: sp.csr_matrix
    Rq_pp: QuadTensor
    Rq_pu: QuadTensor
    Rc_ppu: CubicTensor
    E_ext: sp.csr_matrix     # extension rows over [free s | tied interface]
    r_s: np.ndarray
    C_psi: sp.csr_matrix     # compatibility rows
    C_sext: sp.csr_matrix
    C_phi: sp.csr_matrix
    C_V: np.ndarray          # d(compatibility)/d(applied voltage)
    Cq: AirQuad
    r_psi: np.ndarray
    D_psi: sp.csr_matrix     # potential rows
    D_sext: sp.csr_matrix
    Dq: AirQuad
    r_phi: np.ndarray
    L_phi: Optional[sp.csr_matrix] = None  # plain-air potential rows
    L_V: Optional[np.ndarray] = None


def assemble_operators(mesh: Mesh, dofs: DofMap, mat: Material,
                       state: FieldState, eps0: float = EPS0) -> OperatorSet:
    """Assemble every operator of the coupled model about a state."""
    solid = SolidKernel(mesh, dofs, mat, state.u)
    surf = SurfaceKernel(mesh, dofs, state, eps0, mat.width)
    air = AirKernel(mesh, dofs, state, mat.width)
    ns_ext = dofs.n_s_ext

    M = solid.mass()
    K = solid.stiffness()
    r_u = solid.internal_force() - surf.force()
    G = None if mat.linear_only else SolidQuad(solid)
    H = None if mat.linear_only else SolidCubic(solid)
    R_u, R_psi = surf.matrices()

    C_psi, C_sext, C_phi, C_V = air.compat_matrices(ns_ext, dofs.n_phi)
    D_psi, D_sext = air.electro_matrices(ns_ext, dofs.n_phi)
    E_ext = air.extension_matrix(ns_ext)
    r_psi, r_s, r_phi = air.residuals(dofs.n_phi)

    L_phi = L_V = None
    plain = plain_laplacian(mesh, dofs, state, mat.width)
    if plain is not None:
        L_phi, L_V, r_plain = plain
        r_phi = r_phi + r_plain

    return OperatorSet(
        n_u=dofs.n_u, n_s=dofs.n_s, n_psi=dofs.n_psi, n_phi=dofs.n_phi,
        n_sext=ns_ext, M=M, K=K, r_u=r_u, G=G, H=H, R_u=R_u, R_psi=R_psi,
        Rq_pp=surf.quad_pp(), Rq_pu=surf.quad_pu(), Rc_ppu=surf.cubic_ppu(),
        E_ext=E_ext, r_s=r_s, C_psi=C_psi, C_sext=C_sext, C_phi=C_phi,
        C_V=C_V, Cq=air.quad_compat(ns_ext), r_psi=r_psi, D_psi=D_psi,
        D_sext=D_sext, Dq=air.quad_electro(ns_ext, dofs.n_phi), r_phi=r_phi,
        L_phi=L_phi, L_V=L_V)


def split_sext(mat: sp.csr_matrix, dofs: DofMap):
    """Split extended-space columns into free-s and tied-displacement parts.

    Columns beyond the free extension dofs belong to interface values that
    equal the structural displacement; they are mapped onto displacement
    dofs (clamped interface values drop out).
    """
    mat = sp.csc_matrix(mat)
    ns = dofs.n_s
    A_s = mat[:, :ns].tocsr()
    tail = mat[:, ns:].tocoo()
    tgt = dofs.tied_u_cols[tail.col]
    keep = tgt >= 0
    A_u = sp.coo_matrix((tail.data[keep], (tail.row[keep], tgt[keep])),
                        shape=(mat.shape[0], dofs.n_u)).tocsr()
    return A_s, A_u


def sext_gather_map(dofs: DofMap, n_blocks_u_offset: int, s_offset: int):
    """Index map from a stacked [.. u .. s ..] vector to extended-s space."""
    idx = np.full(dofs.n_s_ext, -1, dtype=int)
    idx[:dofs.n_s] = s_offset + np.arange(dofs.n_s)
    tied = dofs.tied_u_cols
    ok = tied >= 0
    idx[dofs.n_s:][ok] = n_blocks_u_offset + tied[ok]
    return idx
