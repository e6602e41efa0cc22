"""Sparse multilinear operators.

Linear blocks are plain ``scipy.sparse`` matrices.  Quadratic and cubic
couplings are kept as coordinate-format tensors with a ``contract``
method; entries are stored symmetrized over argument slots of like type,
so contraction with equal or mixed arguments needs no extra bookkeeping.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class CooBuilder:
    """Accumulates (row, col, value) triplets into a CSR matrix."""

    def __init__(self, shape):
        self.shape = shape
        self.rows: list = []
        self.cols: list = []
        self.vals: list = []

    def add(self, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        keep = (rows >= 0) & (cols >= 0) & (vals != 0.0)
        self.rows.append(rows[keep])
        self.cols.append(cols[keep])
        self.vals.append(vals[keep])

    def tocsr(self) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(self.shape)
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        mat = sp.coo_matrix((vals, (rows, cols)), shape=self.shape)
        return mat.tocsr()


def _gather(vec, idx):
    """Gather with -1 entries reading as zero."""
    vec = np.asarray(vec)
    out = np.where(idx >= 0, vec[np.clip(idx, 0, None)], 0.0)
    return out


class QuadTensor:
    """T[i; j, k]: vector-valued bilinear map stored in coordinates."""

    def __init__(self, n_out: int, shape_in, i, j, k, v):
        self.n_out = int(n_out)
        self.shape_in = tuple(shape_in)
        self.i = np.asarray(i, dtype=np.int64)
        self.j = np.asarray(j, dtype=np.int64)
        self.k = np.asarray(k, dtype=np.int64)
        self.v = np.asarray(v, dtype=float)

    @classmethod
    def empty(cls, n_out, shape_in):
        z = np.zeros(0)
        return cls(n_out, shape_in, z, z, z, z)

    @property
    def nnz(self) -> int:
        return len(self.v)

    def compress(self) -> "QuadTensor":
        """Sum duplicate index triplets (deterministic lexicographic order)."""
        if not self.nnz:
            return self
        order = np.lexsort((self.k, self.j, self.i))
        i, j, k, v = self.i[order], self.j[order], self.k[order], self.v[order]
        new = np.ones(len(i), dtype=bool)
        new[1:] = (np.diff(i) != 0) | (np.diff(j) != 0) | (np.diff(k) != 0)
        grp = np.cumsum(new) - 1
        vv = np.bincount(grp, weights=v)
        keep = np.flatnonzero(new)
        return QuadTensor(self.n_out, self.shape_in,
                          i[keep], j[keep], k[keep], vv)

    def contract(self, x, y) -> np.ndarray:
        """T(x, y) -> vector of length n_out."""
        if not self.nnz:
            dt = np.result_type(np.asarray(x).dtype, np.asarray(y).dtype, float)
            return np.zeros(self.n_out, dtype=dt)
        prod = self.v * np.asarray(x)[self.j] * np.asarray(y)[self.k]
        if np.iscomplexobj(prod):
            re = np.bincount(self.i, weights=prod.real, minlength=self.n_out)
            im = np.bincount(self.i, weights=prod.imag, minlength=self.n_out)
            return re + 1j * im
        return np.bincount(self.i, weights=prod, minlength=self.n_out)

    def slot_matrix(self, slot: int, vec) -> sp.csr_matrix:
        """Freeze one argument slot: returns the matrix T(., vec) or T(vec, .)."""
        if slot == 0:
            vals = self.v * _gather(vec, self.j)
            return sp.coo_matrix((vals, (self.i, self.k)),
                                 shape=(self.n_out, self.shape_in[1])).tocsr()
        vals = self.v * _gather(vec, self.k)
        return sp.coo_matrix((vals, (self.i, self.j)),
                             shape=(self.n_out, self.shape_in[0])).tocsr()


class CubicTensor:
    """T[i; j, k, l]: vector-valued trilinear map stored in coordinates."""

    def __init__(self, n_out: int, shape_in, i, j, k, l, v):
        self.n_out = int(n_out)
        self.shape_in = tuple(shape_in)
        self.i = np.asarray(i, dtype=np.int64)
        self.j = np.asarray(j, dtype=np.int64)
        self.k = np.asarray(k, dtype=np.int64)
        self.l = np.asarray(l, dtype=np.int64)
        self.v = np.asarray(v, dtype=float)

    @classmethod
    def empty(cls, n_out, shape_in):
        z = np.zeros(0)
        return cls(n_out, shape_in, z, z, z, z, z)

    @property
    def nnz(self) -> int:
        return len(self.v)

    def compress(self) -> "CubicTensor":
        if not self.nnz:
            return self
        order = np.lexsort((self.l, self.k, self.j, self.i))
        i, j, k, l, v = (self.i[order], self.j[order], self.k[order],
                         self.l[order], self.v[order])
        new = np.ones(len(i), dtype=bool)
        new[1:] = ((np.diff(i) != 0) | (np.diff(j) != 0)
                   | (np.diff(k) != 0) | (np.diff(l) != 0))
        grp = np.cumsum(new) - 1
        vv = np.bincount(grp, weights=v)
        keep = np.flatnonzero(new)
        return CubicTensor(self.n_out, self.shape_in,
                           i[keep], j[keep], k[keep], l[keep], vv)

    def contract(self, x, y, z) -> np.ndarray:
        if not self.nnz:
            dt = np.result_type(np.asarray(x).dtype, np.asarray(y).dtype,
                                np.asarray(z).dtype, float)
            return np.zeros(self.n_out, dtype=dt)
        prod = (self.v * np.asarray(x)[self.j] * np.asarray(y)[self.k]
                * np.asarray(z)[self.l])
        if np.iscomplexobj(prod):
            re = np.bincount(self.i, weights=prod.real, minlength=self.n_out)
            im = np.bincount(self.i, weights=prod.imag, minlength=self.n_out)
            return re + 1j * im
        return np.bincount(self.i, weights=prod, minlength=self.n_out)
