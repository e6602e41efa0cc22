"""Degree-of-freedom numbering for the coupled fields.

Fields and their supports:
  u    displacement, 2 components, TRI6 nodes of SOLID triangles
  s    extension of u into the air, 2 components, TRI6 nodes of the
       auxiliary-field air region
  psi  auxiliary electric field, piecewise-linear discontinuous vector,
       6 coefficients per auxiliary-field AIR triangle
  phi  electric potential, TRI6 nodes of all AIR triangles

Constraints are recorded explicitly and eliminated only when the DAE is
built:
  u = 0 on CLAMP edges
  s = u on the conductor surface, s = 0 on ELECTRODE/OUTER (and on the
      rim of the auxiliary layer when one is used)
  phi = applied voltage on the conductor surface, phi = 0 on ELECTRODE

Sentinel codes in the index arrays: -1 no dof, -2 prescribed zero,
-3 tied to u, -4 prescribed voltage.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import AIR, SOLID, Mesh

NO_DOF = -1
ZERO = -2
TIED = -3
VOLT = -4


@dataclass
class DofMap:
    mesh: Mesh
    u_dof: np.ndarray            # (nn, 2) int
    s_dof: np.ndarray            # (nn, 2) int
    phi_dof: np.ndarray          # (nn,) int
    psi_tri: np.ndarray          # auxiliary-field AIR triangle ids
    psi_base: np.ndarray         # (nt,) base psi dof per triangle, -1 elsewhere
    n_u: int = 0
    n_s: int = 0
    n_psi: int = 0
    n_phi: int = 0
    tied_pairs: list = field(default_factory=list)   # [(node, comp)]
    s_ext_col: np.ndarray = None  # (nn, 2): s-extended column or -1
    tied_u_cols: np.ndarray = None  # (len tied,) u dof fed by each tied column
    constraints: list = field(default_factory=list)  # (field, node, comp, kind)

    @property
    def n_s_ext(self) -> int:
        return self.n_s + len(self.tied_pairs)

    def psi_dof(self, tri: int, vertex: int, comp: int) -> int:
        base = self.psi_base[tri]
        if base < 0:
            raise KeyError(f"triangle {tri} carries no psi dofs")
        return base + 2 * vertex + comp

    def u_vector(self, u_nodal: np.ndarray) -> np.ndarray:
        """Gather free-u values from a full (nn, 2) nodal array."""
        out = np.zeros(self.n_u)
        mask = self.u_dof >= 0
        out[self.u_dof[mask]] = u_nodal[mask]
        return out

    def u_nodal(self, u_vec: np.ndarray) -> np.ndarray:
        """Scatter a free-u vector to a full (nn, 2) nodal array."""
        out = np.zeros((self.mesh.n_nodes, 2))
        mask = self.u_dof >= 0
        out[mask] = u_vec[self.u_dof[mask]]
        return out

    def nearest_u_dof(self, point, comp: int = 1) -> int:
        """Free u dof of the given component nearest to ``point``."""
        pts = self.mesh.nodes
        ok = self.u_dof[:, comp] >= 0
        idx = np.flatnonzero(ok)
        best = idx[np.argmin(np.hypot(*(pts[idx] - np.asarray(point)).T))]
        return int(self.u_dof[best, comp])


def build_dofmap(mesh: Mesh) -> DofMap:
    nn = mesh.n_nodes
    u_dof = np.full((nn, 2), NO_DOF, dtype=int)
    s_dof = np.full((nn, 2), NO_DOF, dtype=int)
    phi_dof = np.full(nn, NO_DOF, dtype=int)
    constraints: list = []

    solid_tris = mesh.tris_where(SOLID)
    air_tris = mesh.tris_where(AIR)
    psi_tris = mesh.psi_tris()

    solid_nodes = np.unique(mesh.tris[solid_tris]) if len(solid_tris) else np.array([], int)
    air_nodes = np.unique(mesh.tris[air_tris]) if len(air_tris) else np.array([], int)
    aux_nodes = np.unique(mesh.tris[psi_tris]) if len(psi_tris) else np.array([], int)

    u_dof[solid_nodes] = 0
    for e in mesh.edges_where("CLAMP"):
        for n in mesh.edges[e]:
            u_dof[n] = ZERO
            constraints.append(("u", int(n), None, "zero"))

    interface = set()
    for e in mesh.edges_where("SOLID_SURFACE"):
        interface.update(int(n) for n in mesh.edges[e])

    if len(aux_nodes):
        s_dof[aux_nodes] = 0
        # rim of a partial auxiliary layer: nodes also used by plain air
        if len(psi_tris) < len(air_tris):
            plain = np.setdiff1d(air_tris, psi_tris)
            rim = np.intersect1d(aux_nodes, np.unique(mesh.tris[plain]))
        else:
            rim = np.array([], int)
        zero_nodes = set(int(n) for n in rim)
        for tag in ("ELECTRODE", "OUTER"):
            for e in mesh.edges_where(tag):
                zero_nodes.update(int(n) for n in mesh.edges[e])
        for n in sorted(zero_nodes & set(int(m) for m in aux_nodes)):
            s_dof[n] = ZERO
            constraints.append(("s", n, None, "zero"))
        for n in sorted(interface):
            if s_dof[n, 0] == NO_DOF:
                continue
            for c in range(2):
                if s_dof[n, c] != ZERO:
                    s_dof[n, c] = TIED
                    constraints.append(("s", n, c, "tied-to-u"))

    if len(air_nodes):
        phi_dof[air_nodes] = 0
        for e in mesh.edges_where("ELECTRODE"):
            for n in mesh.edges[e]:
                phi_dof[n] = ZERO
                constraints.append(("phi", int(n), None, "zero"))
        for n in sorted(interface):
            if phi_dof[n] == NO_DOF:
                continue
            phi_dof[n] = VOLT
            constraints.append(("phi", n, None, "voltage"))

    def number(arr):
        free = arr == 0
        arr[free] = np.arange(int(free.sum()))
        return int(free.sum())

    n_u = number(u_dof)
    n_s = number(s_dof)
    n_phi = number(phi_dof)

    psi_base = np.full(len(mesh.tris), -1, dtype=int)
    for k, t in enumerate(psi_tris):
        psi_base[t] = 6 * k
    n_psi = 6 * len(psi_tris)

    tied_pairs = [(int(n), c) for n in range(nn) for c in range(2)
                  if s_dof[n, c] == TIED]
    s_ext_col = np.full((nn, 2), NO_DOF, dtype=int)
    mask = s_dof >= 0
    s_ext_col[mask] = s_dof[mask]
    tied_u_cols = np.empty(len(tied_pairs), dtype=int)
    for k, (n, c) in enumerate(tied_pairs):
        if u_dof[n, c] >= 0:
            s_ext_col[n, c] = n_s + k
            tied_u_cols[k] = u_dof[n, c]
        else:
            # tied to a clamped displacement: the extension is zero there
            tied_u_cols[k] = -1

    return DofMap(mesh=mesh, u_dof=u_dof, s_dof=s_dof, phi_dof=phi_dof,
                  psi_tri=psi_tris, psi_base=psi_base,
                  n_u=n_u, n_s=n_s, n_psi=n_psi, n_phi=n_phi,
                  tied_pairs=tied_pairs, s_ext_col=s_ext_col,
                  tied_u_cols=tied_u_cols, constraints=constraints)
