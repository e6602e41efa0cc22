"""Eigenpairs of the first-order pencil and their normalization.

The pencil (A, B) has finite oscillatory eigenvalues in conjugate pairs
plus an infinite set from the singular algebraic rows; shift-invert
iteration near a purely imaginary shift retrieves the oscillatory pairs
only.  Left eigenvectors reuse the same factorization through transpose
solves, which keeps the decomposition deterministic and cheap.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_DENSE_LIMIT = 400


@dataclass
class ModeSet:
    """Right / left eigentriplets with X^T B Y = I."""

    lam: np.ndarray   # (k,) eigenvalues, positive imaginary part first
    Y: np.ndarray     # (n, k) right eigenvectors
    X: np.ndarray     # (n, k) left eigenvectors

    def omega(self, k: int = 0) -> float:
        """Undamped rate |lambda_k|."""
        return float(np.abs(self.lam[k]))

    def zeta(self, k: int = 0) -> float:
        """Damping ratio -Re(lambda_k) / |lambda_k|."""
        return float(-self.lam[k].real / np.abs(self.lam[k]))


def eig_pencil(B, A, k: int = 4, sigma: complex = 0.05j, v0=None):
    """Oscillatory eigenpairs of B y' = A y nearest the shift.

    Returns (lam, Y, X) for the ``k`` eigenvalues with positive imaginary
    part closest to the shift, sorted by imaginary part.  Left vectors
    satisfy X^T (lam B - A) = 0 (plain transpose, no conjugation).

    Krylov iteration locates the eigenvalues; each pair of vectors is then
    polished by inverse iteration with its own slightly offset shift,
    which is deterministic and accurate for left vectors where a single
    transposed Krylov run is not.
    """
    n = A.shape[0]
    if n <= _DENSE_LIMIT:
        return _eig_dense(B, A, k)
    A = sp.csc_matrix(A, dtype=complex)
    B = sp.csc_matrix(B, dtype=complex)
    lu = spla.splu(A - sigma * B)
    if v0 is None:
        v0 = np.ones(n, dtype=complex) / np.sqrt(n)

    opr = spla.LinearOperator((n, n), matvec=lambda x: lu.solve(B @ x),
                              dtype=complex)
    # over-request: conjugates of wanted modes may converge as well
    kk = min(2 * k + 4, n - 2)
    try:
        mu, V = spla.eigs(opr, k=kk, which="LM", v0=v0)
    except spla.ArpackNoConvergence as err:
        # strong damping can leave far-from-shift stragglers unconverged;
        # the dominant pairs converge first and are the ones requested
        mu, V = err.eigenvalues, err.eigenvectors
    lam = sigma + 1.0 / mu
    lam, V = _positive_branch(lam, V, k)
    if len(lam) < k:
        raise RuntimeError(
            f"eigensolver resolved only {len(lam)} of {k} requested "
            "oscillatory pairs near the shift")

    X = np.empty_like(V)
    for i, lv in enumerate(lam):
        lam[i], V[:, i], X[:, i] = _polish(B, A, lv, V[:, i], v0)
    return lam, V, X


def _polish(B, A, lam, y, x0, rounds: int = 3):
    """Inverse iteration for one right / left pair at a known eigenvalue."""
    shift = lam + 1e-7 * max(abs(lam), 1.0) * (1.0 + 1.0j)
    lu = spla.splu(A - shift * B)
    x = x0.copy()
    for _ in range(rounds):
        y = lu.solve(B @ y)
        y /= np.linalg.norm(y)
        x = lu.solve(B.T @ x, trans="T")
        x /= np.linalg.norm(x)
    num = x @ (A @ y)
    den = x @ (B @ y)
    return num / den, y, x


def _eig_dense(B, A, k: int):
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    Bd = B.toarray() if sp.issparse(B) else np.asarray(B, dtype=float)
    lam, W, V = sla.eig(Ad, Bd, left=True, right=True)
    ok = np.isfinite(lam)
    lam, W, V = lam[ok], W[:, ok], V[:, ok]
    lam_p, V = _positive_branch(lam, V, k)
    # scipy returns conjugated left vectors: w^H A = lam w^H B, so the
    # transpose-convention left vector is conj(w)
    X = np.empty_like(V)
    for i, lv in enumerate(lam_p):
        j = int(np.argmin(np.abs(lam - lv)))
        X[:, i] = np.conj(W[:, j])
    return lam_p, V, X


def _positive_branch(lam, V, k: int):
    pos = lam.imag > 1e-12 * np.abs(lam).max()
    lam, V = lam[pos], V[:, pos]
    order = np.argsort(lam.imag)
    lam, V = lam[order], V[:, order]
    # drop near-duplicates from over-requested Krylov pairs
    keep = []
    for i in range(len(lam)):
        if not keep or abs(lam[i] - lam[keep[-1]]) > 1e-8 * abs(lam[i]):
            keep.append(i)
    lam, V = lam[keep], V[:, keep]
    return lam[:k], V[:, :k]


def normalize_modes(lam, Y, X, B, u_slice: slice) -> ModeSet:
    """Fix phases and enforce X^T B Y = I.

    Each right vector is scaled so its largest displacement entry equals
    one exactly; the left vector then absorbs the remaining factor.  With
    this convention the master coordinate reads directly as the modal
    displacement at that point (peak amplitude = twice its modulus), and
    every downstream expansion is reproducible.
    """
    Y = Y.copy()
    X = X.copy()
    for i in range(len(lam)):
        ub = Y[u_slice, i]
        j = int(np.argmax(np.abs(ub)))
        Y[:, i] /= ub[j]
        b = X[:, i] @ (B @ Y[:, i])
        if abs(b) == 0.0:
            raise RuntimeError("defective eigenpair: X^T B Y vanished")
        X[:, i] /= b
    return ModeSet(np.asarray(lam), Y, X)


def modes_of(sys, k: int = 4, sigma: complex = None) -> ModeSet:
    """Eigentriplets of a built system, shift defaulting near the origin."""
    if sigma is None:
        sigma = 0.05j * sys.omega_ref
    lam, Y, X = eig_pencil(sys.B, sys.A, k=k, sigma=sigma)
    return normalize_modes(lam, Y, X, sys.B, sys.slices["U"])


def write_modes_csv(path, sys, modes: ModeSet) -> None:
    """Frequencies, damping and probe shapes in plain CSV."""
    import csv
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["mode", "omega", "zeta", "re_lambda", "im_lambda"])
        for i, lv in enumerate(modes.lam):
            wr.writerow([i + 1, f"{abs(lv) * sys.omega_ref:.12g}",
                         f"{modes.zeta(i):.12g}",
                         f"{lv.real * sys.omega_ref:.12g}",
                         f"{lv.imag * sys.omega_ref:.12g}"])
