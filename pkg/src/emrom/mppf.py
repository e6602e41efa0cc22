"""Condensed parallel-plate model of the electrostatic coupling.

Instead of meshing the dielectric, each loaded surface edge carries a
single field value that plays the role of the plate field V / gap.  The
defining relation integrates the deformed gap against that value over
the reference edge, which keeps the coupling polynomial: the gap balance
is bilinear in (field, displacement) and the resulting traction is
quadratic in the field.  Valid whenever the facing surfaces stay nearly
parallel and fringing fields are negligible.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .elements import EDGE_QP, EDGE_QW, edge3_shape, edge3_shape_grad
from .mesh import Mesh
from .dofmap import DofMap
from .tensors import QuadTensor, CooBuilder, _gather
from .assembly import (EPS0, Material, SolidKernel, SolidQuad, SolidCubic,
                       _scatter_vec, _scatter_mat)

FACING = "FACING"


class PlateKernel:
    """Tables for the facing-surface edges of the parallel-plate model."""

    def __init__(self, mesh: Mesh, dofs: DofMap, gap: float, width: float,
                 eps0: float = EPS0):
        self.mesh = mesh
        self.dofs = dofs
        self.gap = float(gap)
        self.eps0 = eps0
        self.edges = mesh.edges_where(FACING)
        if len(self.edges) == 0:
            raise ValueError("mesh has no FACING edges")
        nodes = mesh.edges[self.edges]                    # (Ne, 3)
        self.nodes = nodes
        self.udof = dofs.u_dof[nodes].reshape(len(nodes), 6)
        self.S = edge3_shape(EDGE_QP)                     # (q, 3)
        dS = edge3_shape_grad(EDGE_QP)
        xa = np.einsum('qa,eai->eqi', dS, mesh.nodes[nodes])
        js = np.sqrt(np.einsum('eqi,eqi->eq', xa, xa))    # reference metric
        self.w = EDGE_QW[None, :] * js * width            # (Ne, q)
        self.length = self.w.sum(axis=1)                  # widths included
        self.n_psi = len(self.edges)

    def gap_at(self, u: np.ndarray) -> np.ndarray:
        """Deformed gap at edge quadrature points from nodal displacement."""
        u2 = np.einsum('qa,ea->eq', self.S, u[self.nodes][:, :, 1])
        return self.gap - u2

    def condense(self, u: np.ndarray, V: float) -> np.ndarray:
        """Closed-form field values at a given displacement and voltage."""
        den = (self.w * self.gap_at(u)).sum(axis=1)
        return V * self.length / den


@dataclass
class PlateOperatorSet:
    """Blocks of the parallel-plate model expanded about one state."""

    n_u: int
    n_psi: int
    M: sp.csr_matrix
    K: sp.csr_matrix
    r_u: np.ndarray
    G: Optional[SolidQuad]
    H: Optional[SolidCubic]
    R_psi: sp.csr_matrix      # traction tangent in the field
    Rq_pp: QuadTensor
    C_psi: sp.csr_matrix      # gap-balance rows (diagonal)
    C_u: sp.csr_matrix
    Cq: QuadTensor
    F_psi: np.ndarray         # -d(gap balance)/d(applied voltage)
    r_psi: np.ndarray         # gap balance at the state, voltage part removed


def assemble_plate_operators(mesh: Mesh, dofs: DofMap, mat: Material,
                             kern: PlateKernel, u0: np.ndarray,
                             psi0: np.ndarray) -> PlateOperatorSet:
    """Assemble the parallel-plate model about a displacement/field state.

    The returned ``r_psi`` excludes the -V * F_psi term so the caller can
    apply any voltage; all other blocks are voltage independent.
    """
    solid = SolidKernel(mesh, dofs, mat, u0)
    e0w = kern.eps0 * 0.5
    Ne = kern.n_psi
    eidx = np.arange(Ne)

    sw = np.einsum('eq,qm->em', kern.w, kern.S)           # edge lumped weights
    # traction rows act on the vertical displacement components only
    yrow = dofs.u_dof[kern.nodes][:, :, 1]                # (Ne, 3)

    r_u = solid.internal_force()
    pe = e0w * psi0[:, None] ** 2 * sw
    r_u = r_u - _scatter_vec(dofs.n_u, yrow, pe)

    bR = CooBuilder((dofs.n_u, Ne))
    _scatter_mat(bR, (2.0 * e0w * psi0[:, None] * sw)[:, :, None],
                 yrow, eidx[:, None])
    R_psi = bR.tocsr()

    v = e0w * sw
    ii = np.broadcast_to(yrow[:, :, None], v[:, :, None].shape)
    jj = np.broadcast_to(eidx[:, None, None], ii.shape)
    keep = ii >= 0
    Rq_pp = QuadTensor(dofs.n_u, (Ne, Ne), ii[keep], jj[keep], jj[keep],
                       v[:, :, None][keep]).compress()

    den = (kern.w * kern.gap_at(u0)).sum(axis=1)
    C_psi = sp.diags(den, format="csr")
    r_psi = psi0 * den

    bC = CooBuilder((Ne, dofs.n_u))
    _scatter_mat(bC, -(psi0[:, None] * sw)[:, None, :],
                 eidx[:, None], yrow)
    C_u = bC.tocsr()

    ii2 = np.broadcast_to(eidx[:, None], sw.shape)
    kk2 = yrow
    keep = kk2 >= 0
    Cq = QuadTensor(Ne, (Ne, dofs.n_u), ii2[keep], ii2[keep], kk2[keep],
                    -sw[keep]).compress()

    return PlateOperatorSet(
        n_u=dofs.n_u, n_psi=Ne, M=solid.mass(), K=solid.stiffness(),
        r_u=r_u, G=None if mat.linear_only else SolidQuad(solid),
        H=None if mat.linear_only else SolidCubic(solid),
        R_psi=R_psi, Rq_pp=Rq_pp, C_psi=C_psi, C_u=C_u, Cq=Cq,
        F_psi=kern.length.copy(), r_psi=r_psi)
