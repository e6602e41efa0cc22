"""First-order differential-algebraic form of the coupled semi-discrete model.

The second-order structural equations and the algebraic field equations
are stacked as B y' = A y + Q(y, y) + T(y, y, y) + C+ e^{i w t} + C- e^{-i w t}
with y = [velocity | displacement | extension | field | potential] for the
full formulation and y = [velocity | displacement | field] for the
parallel-plate one.  B is symmetric positive semi-definite (mass blocks),
so oscillatory modes are generalized eigenpairs of (A, B).

Because the physical blocks span ~19 orders of magnitude in these units,
the exported system is scaled: columns by a characteristic size per block
(displacement scale g, field scale V_ref / g, potential scale V_ref) and
rows by a data-driven equilibration.  Eigenvalues are unchanged up to the
reference rate; all exported quantities live in scaled coordinates, and
the scaling vectors are kept so physical fields can be recovered.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .dofmap import DofMap
from .assembly import OperatorSet, split_sext, sext_gather_map
from .mppf import PlateOperatorSet
from .tensors import QuadTensor, CubicTensor

_MAGIC = b"EMROMSYS"


def _gather_scaled(y, idx, scale):
    out = np.where(idx >= 0, y[np.clip(idx, 0, None)], 0.0)
    return out * scale


class _Term:
    """One operator block of a composite multilinear map."""

    def __init__(self, op, sign, rows, slot_idx, slot_scale, row_scale):
        self.op = op
        self.sign = float(sign)
        self.rows = rows
        self.slot_idx = slot_idx          # tuple of index arrays into y
        self.slot_scale = slot_scale      # tuple of per-entry scales
        self.row_scale = row_scale        # includes sign and row equilibration


class BlockQuad:
    """Quadratic map assembled from block operators with scaling built in."""

    def __init__(self, n: int):
        self.n = n
        self.terms: list = []

    def add(self, op, sign, rows, a_idx, b_idx, Sy, Sr):
        self.terms.append(_Term(
            op, sign, rows,
            (a_idx, b_idx),
            (np.where(a_idx >= 0, Sy[np.clip(a_idx, 0, None)], 0.0),
             np.where(b_idx >= 0, Sy[np.clip(b_idx, 0, None)], 0.0)),
            sign * Sr[rows]))

    def contract(self, ya, yb):
        dt = np.result_type(np.asarray(ya).dtype, np.asarray(yb).dtype, float)
        out = np.zeros(self.n, dtype=dt)
        for t in self.terms:
            ga = _gather_scaled(ya, t.slot_idx[0], t.slot_scale[0])
            gb = _gather_scaled(yb, t.slot_idx[1], t.slot_scale[1])
            out[t.rows] += t.row_scale * t.op.contract(ga, gb)
        return out

    def coo(self) -> QuadTensor:
        """Materialize in scaled y-space coordinates."""
        ii, jj, kk, vv = [], [], [], []
        for t in self.terms:
            c = t.op.coo() if hasattr(t.op, "coo") else t.op
            j = t.slot_idx[0][c.j]
            k = t.slot_idx[1][c.k]
            keep = (j >= 0) & (k >= 0)
            ii.append(t.rows[c.i[keep]])
            jj.append(j[keep])
            kk.append(k[keep])
            vv.append(c.v[keep] * t.row_scale[c.i[keep]]
                      * t.slot_scale[0][c.j[keep]]
                      * t.slot_scale[1][c.k[keep]])
        if not ii:
            return QuadTensor.empty(self.n, (self.n, self.n))
        t = QuadTensor(self.n, (self.n, self.n), np.concatenate(ii),
                       np.concatenate(jj), np.concatenate(kk),
                       np.concatenate(vv))
        return t.compress()


class BlockCubic:
    """Cubic counterpart of :class:`BlockQuad`."""

    def __init__(self, n: int):
        self.n = n
        self.terms: list = []

    def add(self, op, sign, rows, a_idx, b_idx, c_idx, Sy, Sr):
        scales = tuple(np.where(ix >= 0, Sy[np.clip(ix, 0, None)], 0.0)
                       for ix in (a_idx, b_idx, c_idx))
        self.terms.append(_Term(op, sign, rows, (a_idx, b_idx, c_idx),
                                scales, sign * Sr[rows]))

    def contract(self, ya, yb, yc):
        dt = np.result_type(np.asarray(ya).dtype, np.asarray(yb).dtype,
                            np.asarray(yc).dtype, float)
        out = np.zeros(self.n, dtype=dt)
        for t in self.terms:
            ga = _gather_scaled(ya, t.slot_idx[0], t.slot_scale[0])
            gb = _gather_scaled(yb, t.slot_idx[1], t.slot_scale[1])
            gc = _gather_scaled(yc, t.slot_idx[2], t.slot_scale[2])
            out[t.rows] += t.row_scale * t.op.contract(ga, gb, gc)
        return out

    def coo(self) -> CubicTensor:
        ii, jj, kk, ll, vv = [], [], [], [], []
        for t in self.terms:
            c = t.op.coo() if hasattr(t.op, "coo") else t.op
            j = t.slot_idx[0][c.j]
            k = t.slot_idx[1][c.k]
            l = t.slot_idx[2][c.l]
            keep = (j >= 0) & (k >= 0) & (l >= 0)
            ii.append(t.rows[c.i[keep]])
            jj.append(j[keep])
            kk.append(k[keep])
            ll.append(l[keep])
            vv.append(c.v[keep] * t.row_scale[c.i[keep]]
                      * t.slot_scale[0][c.j[keep]]
                      * t.slot_scale[1][c.k[keep]]
                      * t.slot_scale[2][c.l[keep]])
        if not ii:
            return CubicTensor.empty(self.n, (self.n,) * 3)
        t = CubicTensor(self.n, (self.n,) * 3, np.concatenate(ii),
                        np.concatenate(jj), np.concatenate(kk),
                        np.concatenate(ll), np.concatenate(vv))
        return t.compress()


@dataclass
class SemiDiscreteSystem:
    """Scaled first-order pencil with polynomial nonlinearities."""

    n: int
    B: sp.csr_matrix
    A: sp.csr_matrix
    Q: object                 # quadratic map, or None
    T: object                 # cubic map, or None
    c: np.ndarray             # forcing direction (per volt of drive)
    slices: dict
    Sy: np.ndarray
    Sr: np.ndarray
    omega_ref: float = 1.0
    meta: dict = field(default_factory=dict)

    def physical(self, yhat: np.ndarray) -> np.ndarray:
        return self.Sy * yhat

    def block(self, yhat: np.ndarray, name: str) -> np.ndarray:
        return self.physical(yhat)[self.slices[name]]

    def u_index(self, u_dof: int) -> int:
        return self.slices["U"].start + int(u_dof)

    def rhs(self, yhat, quad: bool = True, cubic: bool = True):
        out = self.A @ yhat
        if quad and self.Q is not None:
            out = out + self.Q.contract(yhat, yhat)
        if cubic and self.T is not None:
            out = out + self.T.contract(yhat, yhat, yhat)
        return out


def _row_equilibration(B, A, Sy, omega_ref):
    Ac = abs(A) @ sp.diags(Sy)
    Bc = abs(B) @ sp.diags(Sy) * omega_ref
    rmax = np.maximum(Ac.max(axis=1).toarray().ravel(),
                      Bc.max(axis=1).toarray().ravel())
    if np.any(rmax == 0.0):
        raise ValueError("pencil has an empty row")
    return 1.0 / rmax


def _finish(B, A, Qb, Tb, c, slices, Sy, omega_ref, meta):
    Sr = _row_equilibration(B, A, Sy, omega_ref)
    Dr, Dy = sp.diags(Sr), sp.diags(Sy)
    Bh = (Dr @ B @ Dy * omega_ref).tocsr()
    Ah = (Dr @ A @ Dy).tocsr()
    return SemiDiscreteSystem(n=B.shape[0], B=Bh, A=Ah, Q=Qb, T=Tb,
                              c=Sr * c, slices=slices, Sy=Sy, Sr=Sr,
                              omega_ref=omega_ref, meta=meta)


def condensed_stiffness_plate(ops) -> sp.csr_matrix:
    """Displacement-block tangent after eliminating the edge field.

    The algebraic row ties the field to the gap, so its elimination adds
    the electrostatic softening to the mechanical tangent; eigenpairs of
    (M, K_c) match the oscillatory pairs of the full pencil.
    """
    inv_den = sp.diags(1.0 / ops.C_psi.diagonal())
    return (ops.K + ops.R_psi @ inv_den @ ops.C_u).tocsr()


def condensed_stiffness_field(ops: OperatorSet, dofs: DofMap) -> sp.csr_matrix:
    """Displacement-block tangent after eliminating mesh, field and
    potential unknowns of the full-field formulation."""
    import scipy.sparse.linalg as spla
    E_s, E_u = split_sext(ops.E_ext, dofs)
    C_s, C_u = split_sext(ops.C_sext, dofs)
    D_s, D_u = split_sext(ops.D_sext, dofs)
    Acc = sp.bmat([[E_s, None, None],
                   [C_s, ops.C_psi, ops.C_phi],
                   [D_s, ops.D_psi, ops.L_phi]], format="csc")
    rhs = sp.bmat([[E_u], [C_u], [D_u]], format="csc")
    sol = spla.splu(Acc).solve(rhs.toarray())      # alg = -sol @ u
    ns = E_s.shape[1]
    psi_rows = sol[ns:ns + ops.n_psi]
    K_c = (ops.K - ops.R_u).toarray() + ops.R_psi @ psi_rows
    return sp.csr_matrix(K_c)


def build_dae(ops: OperatorSet, dofs: DofMap, alpha: float, beta: float,
              g: float, V_ref: float = 1.0,
              omega_ref: float = 1.0) -> SemiDiscreteSystem:
    """Assemble the five-block pencil of the full-field formulation.

    The stiffness-proportional part of the damping acts on the condensed
    tangent, so modal ratios follow the biased frequencies.
    """
    nu, ns, npsi, nphi = ops.n_u, ops.n_s, ops.n_psi, ops.n_phi
    sizes = [nu, nu, ns, npsi, nphi]
    off = np.concatenate([[0], np.cumsum(sizes)])
    n = int(off[-1])
    sl = {"V": slice(off[0], off[1]), "U": slice(off[1], off[2]),
          "S": slice(off[2], off[3]), "PSI": slice(off[3], off[4]),
          "PHI": slice(off[4], off[5])}

    E_s, E_u = split_sext(ops.E_ext, dofs)
    C_s, C_u = split_sext(ops.C_sext, dofs)
    D_s, D_u = split_sext(ops.D_sext, dofs)

    K_damp = (ops.K if beta == 0.0
              else condensed_stiffness_field(ops, dofs))
    Z = None
    A = sp.bmat([
        [-(alpha * ops.M + beta * K_damp), -(ops.K - ops.R_u), Z, ops.R_psi, Z],
        [ops.M, Z, Z, Z, Z],
        [Z, -E_u, -E_s, Z, Z],
        [Z, -C_u, -C_s, -ops.C_psi, -ops.C_phi],
        [Z, -D_u, -D_s, -ops.D_psi,
         None if ops.L_phi is None else -ops.L_phi]], format="csr")
    B = sp.bmat([
        [ops.M, Z, Z, Z, Z],
        [Z, ops.M, Z, Z, Z],
        [Z, Z, sp.csr_matrix((ns, ns)), Z, Z],
        [Z, Z, Z, sp.csr_matrix((npsi, npsi)), Z],
        [Z, Z, Z, Z, sp.csr_matrix((nphi, nphi))]], format="csr")

    c = np.zeros(n)
    c[sl["PSI"]] = -ops.C_V
    if ops.L_V is not None:
        c[sl["PHI"]] -= ops.L_V

    Sy = np.concatenate([np.full(nu, g * omega_ref), np.full(nu, g),
                         np.full(ns, g), np.full(npsi, V_ref / g),
                         np.full(nphi, V_ref)])
    Sr = _row_equilibration(B, A, Sy, omega_ref)

    uo, so = sl["U"].start, sl["S"].start
    u_idx = uo + np.arange(nu)
    psi_idx = sl["PSI"].start + np.arange(npsi)
    sext_idx = sext_gather_map(dofs, uo, so)

    Qb = BlockQuad(n)
    if ops.G is not None:
        Qb.add(ops.G, -1.0, np.arange(nu), u_idx, u_idx, Sy, Sr)
    Qb.add(ops.Rq_pp, +1.0, np.arange(nu), psi_idx, psi_idx, Sy, Sr)
    Qb.add(ops.Rq_pu, +1.0, np.arange(nu), psi_idx, u_idx, Sy, Sr)
    Qb.add(ops.Cq, -1.0, sl["PSI"].start + np.arange(npsi),
           psi_idx, sext_idx, Sy, Sr)
    Qb.add(ops.Dq, -1.0, sl["PHI"].start + np.arange(nphi),
           psi_idx, sext_idx, Sy, Sr)

    Tb = BlockCubic(n)
    if ops.H is not None:
        Tb.add(ops.H, -1.0, np.arange(nu), u_idx, u_idx, u_idx, Sy, Sr)
    Tb.add(ops.Rc_ppu, +1.0, np.arange(nu), psi_idx, psi_idx, u_idx, Sy, Sr)

    meta = {"formulation": "field", "alpha": alpha, "beta": beta,
            "g": g, "V_ref": V_ref,
            "sizes": {"V": nu, "U": nu, "S": ns, "PSI": npsi, "PHI": nphi}}
    return _finish(B, A, Qb, Tb, c, sl, Sy, omega_ref, meta)


def build_plate_dae(ops: PlateOperatorSet, dofs: DofMap, alpha: float,
                    beta: float, g: float, V_ref: float = 1.0,
                    omega_ref: float = 1.0) -> SemiDiscreteSystem:
    """Assemble the three-block pencil of the parallel-plate formulation.

    The stiffness-proportional part of the damping acts on the condensed
    tangent, so modal ratios follow the biased frequencies.
    """
    nu, npsi = ops.n_u, ops.n_psi
    sizes = [nu, nu, npsi]
    off = np.concatenate([[0], np.cumsum(sizes)])
    n = int(off[-1])
    sl = {"V": slice(off[0], off[1]), "U": slice(off[1], off[2]),
          "PSI": slice(off[2], off[3])}

    K_damp = ops.K if beta == 0.0 else condensed_stiffness_plate(ops)
    Z = None
    A = sp.bmat([
        [-(alpha * ops.M + beta * K_damp), -ops.K, ops.R_psi],
        [ops.M, Z, Z],
        [Z, -ops.C_u, -ops.C_psi]], format="csr")
    B = sp.bmat([
        [ops.M, Z, Z],
        [Z, ops.M, Z],
        [Z, Z, sp.csr_matrix((npsi, npsi))]], format="csr")

    c = np.zeros(n)
    c[sl["PSI"]] = ops.F_psi

    Sy = np.concatenate([np.full(nu, g * omega_ref), np.full(nu, g),
                         np.full(npsi, V_ref / g)])
    Sr = _row_equilibration(B, A, Sy, omega_ref)

    u_idx = sl["U"].start + np.arange(nu)
    psi_idx = sl["PSI"].start + np.arange(npsi)

    Qb = BlockQuad(n)
    if ops.G is not None:
        Qb.add(ops.G, -1.0, np.arange(nu), u_idx, u_idx, Sy, Sr)
    Qb.add(ops.Rq_pp, +1.0, np.arange(nu), psi_idx, psi_idx, Sy, Sr)
    Qb.add(ops.Cq, -1.0, sl["PSI"].start + np.arange(npsi),
           psi_idx, u_idx, Sy, Sr)

    Tb = BlockCubic(n)
    if ops.H is not None:
        Tb.add(ops.H, -1.0, np.arange(nu), u_idx, u_idx, u_idx, Sy, Sr)

    meta = {"formulation": "plate", "alpha": alpha, "beta": beta,
            "g": g, "V_ref": V_ref,
            "sizes": {"V": nu, "U": nu, "PSI": npsi}}
    return _finish(B, A, Qb, Tb, c, sl, Sy, omega_ref, meta)


def from_matrices(B, A, Q: Optional[QuadTensor] = None,
                  T: Optional[CubicTensor] = None,
                  c: Optional[np.ndarray] = None,
                  slices: Optional[dict] = None) -> SemiDiscreteSystem:
    """Wrap explicit (small, already well-scaled) matrices as a system."""
    B = sp.csr_matrix(B)
    A = sp.csr_matrix(A)
    n = A.shape[0]
    return SemiDiscreteSystem(
        n=n, B=B, A=A, Q=Q, T=T,
        c=np.zeros(n) if c is None else np.asarray(c, dtype=float),
        slices=slices or {"U": slice(0, n)},
        Sy=np.ones(n), Sr=np.ones(n), omega_ref=1.0,
        meta={"formulation": "explicit", "sizes": {"U": n}})


# ---------------------------------------------------------------------------
# serialization: one little-endian container holding named arrays

def _pack_arrays(fh, meta, arrays):
    header = []
    payload = io.BytesIO()
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        if arr.dtype.kind == "i":
            arr = arr.astype("<i4")
        elif arr.dtype.kind == "f":
            arr = arr.astype("<f8")
        else:
            raise TypeError(f"unsupported dtype for {name}")
        header.append({"name": name, "dtype": str(arr.dtype),
                       "shape": list(arr.shape)})
        payload.write(arr.tobytes())
    hdr = json.dumps({"meta": meta, "arrays": header}).encode()
    fh.write(_MAGIC)
    fh.write(struct.pack("<i", 1))
    fh.write(struct.pack("<i", len(hdr)))
    fh.write(hdr)
    fh.write(payload.getvalue())


def _unpack_arrays(fh):
    if fh.read(8) != _MAGIC:
        raise ValueError("not a system container")
    version, = struct.unpack("<i", fh.read(4))
    if version != 1:
        raise ValueError(f"unsupported container version {version}")
    hlen, = struct.unpack("<i", fh.read(4))
    header = json.loads(fh.read(hlen).decode())
    out = {}
    for ent in header["arrays"]:
        dt = np.dtype(ent["dtype"])
        count = int(np.prod(ent["shape"])) if ent["shape"] else 1
        data = np.frombuffer(fh.read(dt.itemsize * count), dtype=dt)
        out[ent["name"]] = data.reshape(ent["shape"])
    return header["meta"], out


def save_system(path, sys: SemiDiscreteSystem) -> None:
    """Write the scaled system (with materialized tensors) to one file."""
    arrays = []

    def put_csr(prefix, M):
        M = M.tocsr()
        arrays.append((prefix + ".indptr", M.indptr.astype(np.int64)))
        arrays.append((prefix + ".indices", M.indices.astype(np.int64)))
        arrays.append((prefix + ".data", M.data.astype(float)))
        arrays.append((prefix + ".shape", np.asarray(M.shape)))

    put_csr("B", sys.B)
    put_csr("A", sys.A)
    if sys.Q is not None:
        q = sys.Q.coo() if hasattr(sys.Q, "terms") else sys.Q
        arrays.append(("Q.i", q.i))
        arrays.append(("Q.j", q.j))
        arrays.append(("Q.k", q.k))
        arrays.append(("Q.v", q.v))
    if sys.T is not None:
        t = sys.T.coo() if hasattr(sys.T, "terms") else sys.T
        arrays.append(("T.i", t.i))
        arrays.append(("T.j", t.j))
        arrays.append(("T.k", t.k))
        arrays.append(("T.l", t.l))
        arrays.append(("T.v", t.v))
    arrays.append(("c", sys.c))
    arrays.append(("Sy", sys.Sy))
    arrays.append(("Sr", sys.Sr))
    arrays.append(("omega_ref", np.asarray([sys.omega_ref])))
    blocks = sorted(sys.slices, key=lambda k: sys.slices[k].start)
    meta = dict(sys.meta)
    meta["blocks"] = [[b, sys.slices[b].start, sys.slices[b].stop]
                      for b in blocks]
    with open(path, "wb") as fh:
        _pack_arrays(fh, meta, arrays)


def load_system(path) -> SemiDiscreteSystem:
    with open(path, "rb") as fh:
        meta, arrs = _unpack_arrays(fh)

    def get_csr(prefix):
        shape = tuple(arrs[prefix + ".shape"])
        return sp.csr_matrix((arrs[prefix + ".data"],
                              arrs[prefix + ".indices"],
                              arrs[prefix + ".indptr"]), shape=shape)

    B = get_csr("B")
    A = get_csr("A")
    n = A.shape[0]
    Q = T = None
    if "Q.i" in arrs:
        Q = QuadTensor(n, (n, n), arrs["Q.i"], arrs["Q.j"], arrs["Q.k"],
                       arrs["Q.v"])
    if "T.i" in arrs:
        T = CubicTensor(n, (n,) * 3, arrs["T.i"], arrs["T.j"], arrs["T.k"],
                        arrs["T.l"], arrs["T.v"])
    slices = {b: slice(int(a), int(z)) for b, a, z in meta.pop("blocks")}
    return SemiDiscreteSystem(
        n=n, B=B, A=A, Q=Q, T=T, c=arrs["c"].copy(),
        slices=slices, Sy=arrs["Sy"].copy(), Sr=arrs["Sr"].copy(),
        omega_ref=float(arrs["omega_ref"][0]), meta=meta)


def audit_structure(sys: SemiDiscreteSystem):
    """Verify the declared block sparsity of the assembled pencil.

    Returns (ok, checks) where checks is a list of (name, passed, detail).
    """
    sl = sys.slices
    names = sorted(sl, key=lambda k: sl[k].start)
    form = sys.meta.get("formulation", "explicit")
    if form == "field":
        zero_A = [("V", "S"), ("V", "PHI"), ("KIN:V", None),
                  ("S", "V"), ("S", "PSI"), ("S", "PHI"),
                  ("PSI", "V"), ("PHI", "V")]
    elif form == "plate":
        zero_A = [("PSI", "V")]
    else:
        zero_A = []
    checks = []
    Ad = sys.A
    Bd = sys.B

    def blk(M, r, c):
        return M[sl[r], :][:, sl[c]]

    # kinematic rows: B == speed coupling, A couples only to V
    if "U" in sl and "V" in sl:
        row = slice(sl["U"].start, sl["U"].stop)
        Arow = Ad[row, :]
        mask = np.ones(sys.n, dtype=bool)
        mask[sl["V"]] = False
        off = abs(Arow[:, mask]).max() if Arow[:, mask].nnz else 0.0
        checks.append(("kinematic rows couple only to velocity",
                       off == 0.0, f"max off-block {off:.2e}"))
    for r, c in zero_A:
        if r == "KIN:V" or r not in sl or c not in sl:
            continue
        m = blk(Ad, r, c)
        off = abs(m).max() if m.nnz else 0.0
        checks.append((f"A[{r},{c}] empty", off == 0.0, f"max {off:.2e}"))
    # B carries mass on the first two block rows only
    for r in names:
        for c in names:
            m = blk(Bd, r, c)
            expect = (r, c) in (("V", "V"), ("U", "U"))
            off = abs(m).max() if m.nnz else 0.0
            ok = (off > 0.0) == expect if expect else off == 0.0
            checks.append((f"B[{r},{c}] {'mass' if expect else 'empty'}",
                           bool(ok), f"max {off:.2e}"))
    ok = all(c[1] for c in checks)
    return ok, checks
