"""Arbitrary-order parametrisation of the resonant invariant manifold.

The scaled pencil B y' = A y + Q(y, y) + T(y, y, y) + C+ e^{iwt} + C- e^{-iwt}
is reduced to one complex master coordinate by expanding both the
embedding y = W(z) and the reduced dynamics z' = f(z) in monomials of
four formal coordinates: the master pair (z1, z2 = conj z1) and a
forcing pair (z3, z4) that evolves as e^{+-iwt}.  Matching powers gives
one bordered linear solve per monomial; coefficients whose frequency
signature lands on the master eigenvalue are kept in the reduced
dynamics (complex normal form), everything else is pushed into the
embedding.  Conjugate monomials are filled by symmetry, so only half the
solves are performed.

Orders: ``p`` bounds the total degree, ``q`` the degree in the forcing
pair, so ``q = 1`` keeps classical first-order forcing terms while
higher ``q`` captures parametric and superharmonic mechanisms.
"""
from __future__ import annotations

import itertools
import struct
import json
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .spectral import ModeSet

Monomial = Tuple[int, int, int, int]


def enumerate_monomials(p: int, q: int) -> list:
    """All exponent tuples with 1 <= total degree <= p, forcing degree <= q.

    Order is graded lexicographic (by total degree, then tuple order),
    which fixes file layouts and iteration order everywhere downstream.
    """
    if p < 1 or q < 0:
        raise ValueError("need p >= 1 and q >= 0")
    out = []
    for a1, a2, a3, a4 in itertools.product(range(p + 1), repeat=4):
        al = (a1, a2, a3, a4)
        d = sum(al)
        if 1 <= d <= p and a3 + a4 <= q:
            out.append(al)
    out.sort(key=lambda a: (sum(a), a))
    return out


def conj_monomial(a: Monomial) -> Monomial:
    """Mirror z1 <-> z2 and z3 <-> z4."""
    return (a[1], a[0], a[3], a[2])


def _canonical(a: Monomial) -> Monomial:
    b = conj_monomial(a)
    return a if (sum(a), a) >= (sum(b), b) else b


def _splits2(alpha, have):
    """Ordered decompositions alpha = beta + gamma into stored monomials."""
    r1, r2, r3, r4 = (range(x + 1) for x in alpha)
    for b in itertools.product(r1, r2, r3, r4):
        if b in have:
            g = tuple(a - x for a, x in zip(alpha, b))
            if g in have:
                yield b, g


def _splits3(alpha, have):
    r1, r2, r3, r4 = (range(x + 1) for x in alpha)
    for b in itertools.product(r1, r2, r3, r4):
        if b not in have:
            continue
        rest = tuple(a - x for a, x in zip(alpha, b))
        s1, s2, s3, s4 = (range(x + 1) for x in rest)
        for g in itertools.product(s1, s2, s3, s4):
            if g in have:
                d = tuple(a - x for a, x in zip(rest, g))
                if d in have:
                    yield b, g, d


@dataclass
class Parametrisation:
    """Embedding and reduced dynamics of one resonant manifold."""

    p: int
    q: int
    n: int
    lam1: complex
    omega: float              # forcing rate baked into the expansion
    v_ac: float
    nu: float                 # forcing normalization |X1 . C| per volt
    eps: float                # nu * v_ac, the effective forcing scale
    monomials: list = field(default_factory=list)
    W: Dict[Monomial, np.ndarray] = field(default_factory=dict)
    f1: Dict[Monomial, complex] = field(default_factory=dict)
    resonant: list = field(default_factory=list)
    residual_max: float = 0.0
    meta: dict = field(default_factory=dict)

    def f2(self, a: Monomial) -> complex:
        v = self.f1.get(conj_monomial(a))
        return np.conj(v) if v is not None else 0.0

    def _powers(self, z1: complex, z3: complex) -> Dict[Monomial, complex]:
        z = (z1, np.conj(z1), z3, np.conj(z3))
        return {a: z[0] ** a[0] * z[1] ** a[1] * z[2] ** a[2] * z[3] ** a[3]
                for a in self.monomials}

    def rhs1(self, z1: complex, z3: complex) -> complex:
        """Reduced master equation dz1/dt at the given coordinates."""
        z = (z1, np.conj(z1), z3, np.conj(z3))
        out = 0.0 + 0.0j
        for a, c in self.f1.items():
            out += c * z[0] ** a[0] * z[1] ** a[1] * z[2] ** a[2] * z[3] ** a[3]
        return out

    def rhs1_grad(self, z1: complex, z3: complex):
        """Value and Wirtinger derivatives (d/dz1, d/dconj(z1)) of rhs1."""
        z = (z1, np.conj(z1), z3, np.conj(z3))
        val = dz = dzb = 0.0 + 0.0j
        for a, c in self.f1.items():
            m = c * z[2] ** a[2] * z[3] ** a[3]
            p1 = z[0] ** a[0]
            p2 = z[1] ** a[1]
            val += m * p1 * p2
            if a[0] > 0:
                dz += m * a[0] * z[0] ** (a[0] - 1) * p2
            if a[1] > 0:
                dzb += m * a[1] * p1 * z[1] ** (a[1] - 1)
        return val, dz, dzb

    def embed(self, z1: complex, z3: complex) -> np.ndarray:
        """Evaluate the manifold point y(z) in scaled coordinates."""
        pw = self._powers(z1, z3)
        out = np.zeros(self.n, dtype=complex)
        for a, w in self.W.items():
            out += w * pw[a]
        return out


def parametrise(sys, modes: ModeSet, p: int, q: int,
                omega: Optional[float] = None, v_ac: float = 0.0,
                mode_index: int = 0, resonance_tol: float = 1e-3,
                residual_tol: float = 1e-9) -> Parametrisation:
    """Solve the order-(p, q) parametrisation about a built system.

    ``omega`` is the forcing rate the expansion is built at (in the same
    scaled units as the eigenvalues); with q = 0 the system is treated as
    autonomous and the forcing channel stays empty.
    """
    n = sys.n
    lam1 = complex(modes.lam[mode_index])
    Y1 = modes.Y[:, mode_index].astype(complex)
    X1 = modes.X[:, mode_index].astype(complex)
    Y2, X2 = np.conj(Y1), np.conj(X1)
    if q > 0:
        if omega is None:
            raise ValueError("forcing order q > 0 needs a forcing rate")
        Cp = sys.c.astype(complex) * (v_ac / 2.0j)
        Cm = -sys.c.astype(complex) * (v_ac / 2.0j)
        nu = abs(X1 @ (sys.c / 2.0)) if np.any(sys.c) else 0.0
    else:
        omega = 0.0
        Cp = Cm = np.zeros(n, dtype=complex)
        nu = 0.0
    lams = np.array([lam1, np.conj(lam1), 1j * omega, -1j * omega])
    om_char = abs(lam1.imag)

    par = Parametrisation(p=p, q=q, n=n, lam1=lam1, omega=float(omega),
                          v_ac=v_ac, nu=nu, eps=nu * v_ac)
    par.monomials = enumerate_monomials(p, q)
    B, A = sys.B.tocsc(), sys.A.tocsc()
    Bc = sp.csc_matrix(B, dtype=complex)
    Ac = sp.csc_matrix(A, dtype=complex)
    BY = (Bc @ np.column_stack([Y1, Y2]))
    XB = np.vstack([X1 @ Bc, X2 @ Bc])

    lu_cache: dict = {}

    def factor(sigma):
        key = (round(sigma.real, 10), round(sigma.imag, 10))
        if key not in lu_cache:
            lu_cache[key] = spla.splu(sigma * Bc - Ac)
        return lu_cache[key]

    W: Dict[Monomial, np.ndarray] = {}
    f1: Dict[Monomial, complex] = {}
    f2: Dict[Monomial, complex] = {}
    fnl = ({}, {})            # nonlinear reduced terms, per master direction

    e1, e2 = (1, 0, 0, 0), (0, 1, 0, 0)
    e3, e4 = (0, 0, 1, 0), (0, 0, 0, 1)

    def store(a, w, g1, g2):
        W[a] = w
        f1[a] = g1
        f2[a] = g2
        if sum(a) >= 2:
            if g1 != 0.0:
                fnl[0][a] = g1
            if g2 != 0.0:
                fnl[1][a] = g2
        ac = conj_monomial(a)
        if ac != a:
            W[ac] = np.conj(w)
            f1[ac] = np.conj(g2)
            f2[ac] = np.conj(g1)
            if sum(a) >= 2:
                if f1[ac] != 0.0:
                    fnl[0][ac] = f1[ac]
                if f2[ac] != 0.0:
                    fnl[1][ac] = f2[ac]

    def solve_monomial(alpha, rhs):
        sigma = complex(np.dot(alpha, lams))
        dirs = [d for d in (0, 1)
                if abs(sigma.imag - lams[d].imag) <= resonance_tol * om_char]
        if dirs:
            cols = BY[:, dirs]
            rows = XB[dirs, :]
            Mb = sp.bmat([[sigma * Bc - Ac, sp.csc_matrix(cols)],
                          [sp.csc_matrix(rows), None]], format="csc")
            sol = spla.splu(Mb).solve(np.concatenate([rhs,
                                                      np.zeros(len(dirs),
                                                               complex)]))
            w = sol[:n]
            g = np.zeros(2, dtype=complex)
            g[dirs] = sol[n:]
            par.resonant.append((alpha, tuple(d + 1 for d in dirs)))
        else:
            w = factor(sigma).solve(rhs)
            g = np.zeros(2, dtype=complex)
        res = (sigma * (Bc @ w) - Ac @ w + BY @ g - rhs)
        scale = max(np.linalg.norm(rhs), 1e-300)
        rel = np.linalg.norm(res) / scale
        par.residual_max = max(par.residual_max, rel)
        return w, g[0], g[1]

    # order one: the master pair seeds the expansion, the forcing pair
    # solves the linear response (resonant part kept in the dynamics)
    store(e1, Y1, lam1, 0.0)
    if q > 0:
        w, g1, g2 = solve_monomial(e3, Cp)
        store(e3, w, g1, g2)

    by_grade: Dict[int, list] = {}
    for a in par.monomials:
        by_grade.setdefault(sum(a), []).append(a)

    for grade in sorted(by_grade):
        if grade == 1:
            continue
        for alpha in by_grade[grade]:
            if alpha != _canonical(alpha) or alpha in W:
                continue
            rhs = np.zeros(n, dtype=complex)
            if sys.Q is not None:
                for b, g in _splits2(alpha, W):
                    rhs += sys.Q.contract(W[b], W[g])
            if sys.T is not None:
                for b, g, d in _splits3(alpha, W):
                    rhs += sys.T.contract(W[b], W[g], W[d])
            for i in (0, 1):
                ei = e1 if i == 0 else e2
                for gam, fg in fnl[i].items():
                    beta = tuple(a - g + e for a, g, e in
                                 zip(alpha, gam, ei))
                    if min(beta) < 0 or beta not in W:
                        continue
                    mult = beta[i]
                    if mult:
                        rhs -= mult * fg * (Bc @ W[beta])
            w, g1, g2 = solve_monomial(alpha, rhs)
            store(alpha, w, g1, g2)

    if par.residual_max > residual_tol:
        raise RuntimeError(
            f"homological solves lost accuracy: max relative residual "
            f"{par.residual_max:.3e} exceeds {residual_tol:.1e}")
    par.W = W
    par.f1 = f1
    par.meta = {"mode_index": mode_index, "resonance_tol": resonance_tol}
    return par


def invariance_residual(sys, par: Parametrisation, z1: complex,
                        z3: complex) -> float:
    """Norm of the manifold defect at one point of coordinate space.

    Evaluates B dW/dt - [A W + Q(W,W) + T(W,W,W) + C terms] with every
    series truncated as parametrised; decays like rho^(p+1) along scaled
    rays when the expansion is correct.
    """
    z = (z1, np.conj(z1), z3, np.conj(z3))
    pw = {a: z[0] ** a[0] * z[1] ** a[1] * z[2] ** a[2] * z[3] ** a[3]
          for a in par.W}
    y = np.zeros(par.n, dtype=complex)
    for a, w in par.W.items():
        y += w * pw[a]

    f1v = sum(c * pw.get(a, 0.0) for a, c in par.f1.items())
    zdot = (f1v, np.conj(f1v), 1j * par.omega * z3,
            -1j * par.omega * np.conj(z3))
    dwdt = np.zeros(par.n, dtype=complex)
    for a, w in par.W.items():
        acc = 0.0 + 0.0j
        for i in range(4):
            if a[i] == 0:
                continue
            am = list(a)
            am[i] -= 1
            mon = (z[0] ** am[0] * z[1] ** am[1]
                   * z[2] ** am[2] * z[3] ** am[3])
            acc += a[i] * mon * zdot[i]
        dwdt += w * acc

    rhs = sys.A @ y
    if sys.Q is not None:
        rhs = rhs + sys.Q.contract(y, y)
    if sys.T is not None:
        rhs = rhs + sys.T.contract(y, y, y)
    if par.q > 0 and par.v_ac:
        rhs = rhs + sys.c * (par.v_ac / 2.0j) * z3
        rhs = rhs - sys.c * (par.v_ac / 2.0j) * np.conj(z3)
    return float(np.linalg.norm(sys.B @ dwdt - rhs))


_ROM_MAGIC = b"EMROMROM"


def save_rom(prefix, par: Parametrisation) -> None:
    """Write the reduced dynamics as text and the embedding as binary."""
    txt = [f"# reduced dynamics, order p={par.p} q={par.q}"]
    txt.append(f"p {par.p}")
    txt.append(f"q {par.q}")
    txt.append(f"n {par.n}")
    txt.append(f"omega {float(par.omega)!r}")
    txt.append(f"v_ac {float(par.v_ac)!r}")
    txt.append(f"nu {float(par.nu)!r}")
    txt.append(f"eps {float(par.eps)!r}")
    txt.append(f"lam1 {float(par.lam1.real)!r} {float(par.lam1.imag)!r}")
    txt.append("# a1 a2 a3 a4 re(f1) im(f1)")
    for a in sorted(par.f1, key=lambda m: (sum(m), m)):
        c = par.f1[a]
        txt.append(f"f {a[0]} {a[1]} {a[2]} {a[3]} "
                   f"{float(c.real)!r} {float(c.imag)!r}")
    with open(str(prefix) + ".rom", "w") as fh:
        fh.write("\n".join(txt) + "\n")

    mons = sorted(par.W, key=lambda m: (sum(m), m))
    Wm = np.array([par.W[a] for a in mons])
    header = {"monomials": [list(m) for m in mons], "n": par.n}
    hdr = json.dumps(header).encode()
    with open(str(prefix) + ".w", "wb") as fh:
        fh.write(_ROM_MAGIC)
        fh.write(struct.pack("<i", len(hdr)))
        fh.write(hdr)
        fh.write(np.ascontiguousarray(Wm.real, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(Wm.imag, dtype="<f8").tobytes())


def load_rom(prefix) -> Parametrisation:
    vals = {}
    f1 = {}
    with open(str(prefix) + ".rom") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "f":
                a = tuple(int(x) for x in parts[1:5])
                f1[a] = float(parts[5]) + 1j * float(parts[6])
            elif parts[0] == "lam1":
                vals["lam1"] = float(parts[1]) + 1j * float(parts[2])
            else:
                vals[parts[0]] = float(parts[1])
    par = Parametrisation(
        p=int(vals["p"]), q=int(vals["q"]), n=int(vals["n"]),
        lam1=vals["lam1"], omega=vals["omega"], v_ac=vals["v_ac"],
        nu=vals["nu"], eps=vals["eps"])
    par.f1 = f1
    par.monomials = enumerate_monomials(par.p, par.q)
    try:
        with open(str(prefix) + ".w", "rb") as fh:
            if fh.read(8) != _ROM_MAGIC:
                raise ValueError("not an embedding container")
            hlen, = struct.unpack("<i", fh.read(4))
            header = json.loads(fh.read(hlen).decode())
            mons = [tuple(m) for m in header["monomials"]]
            count = len(mons) * header["n"]
            re = np.frombuffer(fh.read(8 * count), dtype="<f8")
            im = np.frombuffer(fh.read(8 * count), dtype="<f8")
            Wm = (re + 1j * im).reshape(len(mons), header["n"])
            par.W = {m: Wm[i].copy() for i, m in enumerate(mons)}
    except FileNotFoundError:
        par.W = {}
    return par
