"""Periodic response curves of the reduced dynamics.

The master equation dz/dt = f(z, conj z, e^{iwt}) is integrated in real
coordinates with an analytic Jacobian obtained from the Wirtinger
derivatives of f.  Periodic orbits are located by single shooting over
one response period and continued in the drive rate with pseudo
arclength steps; the 2x2 monodromy supplies stability, fold and period
doubling indicators along the way.  Physical displacement histories come
from pushing the orbit through the stored embedding.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from .dpim import Parametrisation, conj_monomial

_E3 = (0, 0, 1, 0)


class ReducedDynamics:
    """Vectorized evaluation of the reduced vector field and its Jacobian."""

    def __init__(self, par: Parametrisation):
        self.par = par
        terms = [(a, c) for a, c in par.f1.items() if c != 0.0]
        exps, coefs = [], []
        for a, c in terms:
            exps.append(a)
            coefs.append(c)
        d1e, d1c, d2e, d2c = [], [], [], []
        for a, c in terms:
            if a[0] > 0:
                d1e.append((a[0] - 1, a[1], a[2], a[3]))
                d1c.append(a[0] * c)
            if a[1] > 0:
                d2e.append((a[0], a[1] - 1, a[2], a[3]))
                d2c.append(a[1] * c)
        self._m = len(exps)
        self._m1 = len(d1e)
        self._exps = np.array(exps + d1e + d2e, dtype=float).reshape(-1, 4)
        self._coefs = np.concatenate([
            np.array(coefs, complex) if coefs else np.zeros(0, complex),
            np.array(d1c, complex) if d1c else np.zeros(0, complex),
            np.array(d2c, complex) if d2c else np.zeros(0, complex)])

    def _mono(self, z1: complex, z3: complex) -> np.ndarray:
        z = np.array([z1, np.conj(z1), z3, np.conj(z3)])
        zs = np.where(z == 0.0, 1.0, z)
        pw = zs[None, :] ** self._exps
        pw[(z == 0.0)[None, :] & (self._exps > 0)] = 0.0
        return pw.prod(axis=1) * self._coefs

    def f(self, z1: complex, z3: complex) -> complex:
        return self._mono(z1, z3)[:self._m].sum()

    def f_grad(self, z1: complex, z3: complex):
        v = self._mono(z1, z3)
        return (v[:self._m].sum(), v[self._m:self._m + self._m1].sum(),
                v[self._m + self._m1:].sum())

    def rhs(self, tau: float, s, Om: float):
        F = self.f(s[0] + 1j * s[1], np.exp(1j * Om * tau))
        return [F.real, F.imag]

    def rhs_var(self, tau: float, S, Om: float):
        F, Fz, Fzb = self.f_grad(S[0] + 1j * S[1], np.exp(1j * Om * tau))
        J = np.array([[(Fz + Fzb).real, -(Fz - Fzb).imag],
                      [(Fz + Fzb).imag, (Fz - Fzb).real]])
        dM = J @ S[2:].reshape(2, 2)
        return [F.real, F.imag, dM[0, 0], dM[0, 1], dM[1, 0], dM[1, 1]]

    def flow(self, s0, Om: float, k: int = 1, variational: bool = False,
             t_eval=None, rtol: float = 1e-9, atol: float = 1e-12):
        T = k * 2.0 * np.pi / Om
        if variational:
            y0 = np.concatenate([s0, [1.0, 0.0, 0.0, 1.0]])
            sol = solve_ivp(self.rhs_var, (0.0, T), y0, method="DOP853",
                            rtol=rtol, atol=atol, args=(Om,), t_eval=t_eval)
        else:
            sol = solve_ivp(self.rhs, (0.0, T), np.asarray(s0, float),
                            method="DOP853", rtol=rtol, atol=atol,
                            args=(Om,), t_eval=t_eval)
        if not sol.success:
            raise RuntimeError("reduced-model integration failed")
        return sol

    def trivial_monodromy(self, Om: float, rtol: float = 1e-10) -> np.ndarray:
        """Monodromy of the linearization about z = 0 over one drive period."""
        def rhs(tau, S):
            _, Fz, Fzb = self.f_grad(0.0, np.exp(1j * Om * tau))
            J = np.array([[(Fz + Fzb).real, -(Fz - Fzb).imag],
                          [(Fz + Fzb).imag, (Fz - Fzb).real]])
            return (J @ S.reshape(2, 2)).ravel()
        sol = solve_ivp(rhs, (0.0, 2.0 * np.pi / Om),
                        np.eye(2).ravel(), method="DOP853",
                        rtol=rtol, atol=1e-13)
        if not sol.success:
            raise RuntimeError("variational integration failed")
        return sol.y[:, -1].reshape(2, 2)


@dataclass
class FRCPoint:
    omega: float
    s0: np.ndarray
    rho: float
    amp: float
    stable: bool
    fold: bool = False
    pd: bool = False
    branch: int = 0


@dataclass
class FRCResult:
    points: List[FRCPoint] = field(default_factory=list)
    pd_omegas: List[float] = field(default_factory=list)

    def arrays(self, branch: Optional[int] = None):
        pts = [p for p in self.points
               if branch is None or p.branch == branch]
        om = np.array([p.omega for p in pts])
        rho = np.array([p.rho for p in pts])
        amp = np.array([p.amp for p in pts])
        st = np.array([p.stable for p in pts])
        return om, rho, amp, st

    def peak(self, branch: Optional[int] = None) -> Tuple[float, float]:
        om, _, amp, _ = self.arrays(branch)
        i = int(np.argmax(amp))
        return float(om[i]), float(amp[i])


class OrbitSampler:
    """Physical displacement histories of a reduced orbit at one probe."""

    def __init__(self, par: Parametrisation, probe_index: int,
                 probe_scale: float = 1.0):
        mons = sorted(par.W, key=lambda m: (sum(m), m))
        self.exps = np.array(mons, dtype=float).reshape(-1, 4)
        self.wp = np.array([par.W[a][probe_index] for a in mons]) * probe_scale
        self.par = par

    def displacement(self, z1: np.ndarray, z3: np.ndarray) -> np.ndarray:
        z = np.stack([z1, np.conj(z1), z3, np.conj(z3)])
        zs = np.where(z == 0.0, 1.0, z)
        pw = zs[None, :, :] ** self.exps[:, :, None]
        pw[(z == 0.0)[None, :, :] & (self.exps[:, :, None] > 0)] = 0.0
        return (self.wp[:, None] * pw.prod(axis=1)).real.sum(axis=0)

    def orbit(self, dyn: ReducedDynamics, s0, Om: float, k: int = 1,
              n: int = 128, rtol: float = 1e-9):
        T = k * 2.0 * np.pi / Om
        t = np.linspace(0.0, T, n, endpoint=False)
        sol = dyn.flow(s0, Om, k=k, t_eval=t, rtol=rtol)
        z1 = sol.y[0] + 1j * sol.y[1]
        z3 = np.exp(1j * Om * t)
        return t, z1, self.displacement(z1, z3)

    def measure(self, dyn, s0, Om, k=1, n=128) -> Tuple[float, float]:
        """(max |z1|, half peak-to-peak displacement) over one period."""
        _, z1, u = self.orbit(dyn, s0, Om, k=k, n=n)
        return float(np.abs(z1).max()), float(0.5 * (u.max() - u.min()))


def linear_amplitude(par: Parametrisation, Om: float) -> float:
    """|z| of the harmonic master response with nonlinear terms dropped."""
    f3 = par.f1.get(_E3, 0.0)
    return abs(f3 / (1j * Om - par.lam1))


def _shoot(dyn: ReducedDynamics, s0, Om: float, k: int, rtol: float):
    sol = dyn.flow(s0, Om, k=k, variational=True, rtol=rtol)
    sT = sol.y[:2, -1]
    M = sol.y[2:, -1].reshape(2, 2)
    return sT - s0, M


def newton_periodic(dyn: ReducedDynamics, s0, Om: float, k: int = 1,
                    tol: float = 1e-11, max_iter: int = 14,
                    rtol: float = 1e-9):
    """Locate a periodic orbit at fixed drive rate by single shooting."""
    s = np.asarray(s0, float).copy()
    for _ in range(max_iter):
        R, M = _shoot(dyn, s, Om, k, rtol)
        if np.linalg.norm(R) < tol * max(1.0, np.linalg.norm(s)):
            return s, M, True
        ds = np.linalg.solve(M - np.eye(2), -R)
        s = s + ds
    R, M = _shoot(dyn, s, Om, k, rtol)
    ok = np.linalg.norm(R) < 100 * tol * max(1.0, np.linalg.norm(s))
    return s, M, ok


def _multiplier_flags(M: np.ndarray, tol: float = 1e-7):
    mu = np.linalg.eigvals(M)
    stable = bool(np.max(np.abs(mu)) <= 1.0 + tol)
    det_pd = float(np.linalg.det(M + np.eye(2)))
    return stable, det_pd


def frc_sweep(par: Parametrisation, sampler: OrbitSampler,
              om_lo: float, om_hi: float, k: int = 1,
              ds0: float = 0.008, max_points: int = 1200,
              seed: Optional[np.ndarray] = None, start_high: bool = False,
              start_om: Optional[float] = None,
              rtol: float = 1e-9, branch: int = 0,
              state_scale: float = 0.1,
              result: Optional[FRCResult] = None) -> FRCResult:
    """Continue the forced response through a rate window.

    Runs pseudo-arclength continuation in (state, rate); folds are taken
    in stride, so hardening or softening overhangs come out as a single
    connected curve.  Arclength is measured with the state scaled by
    ``state_scale`` and the rate by the window width, so the step size
    ``ds0`` is a fraction of the window regardless of physical units.
    Starts at a window end by default, or at ``start_om`` (with
    ``start_high`` picking the initial direction); a branch that returns
    to its starting point (a closed loop) terminates there.
    """
    dyn = ReducedDynamics(par)
    res = result or FRCResult()
    if start_om is not None:
        Om = start_om
    else:
        Om = om_hi if start_high else om_lo
    if seed is None:
        a = par.f1.get(_E3, 0.0) / (1j * Om - par.lam1)
        seed = np.array([a.real, a.imag])
    s, M, ok = newton_periodic(dyn, seed, Om, k=k, rtol=rtol)
    if not ok:
        raise RuntimeError("no periodic orbit at the sweep start")
    scale = np.array([state_scale, state_scale, om_hi - om_lo])
    ds_max, ds_min = 6.0 * ds0, 1e-7 * ds0

    def record(s, M, Om, fold=False, pd=False):
        stable, det_pd = _multiplier_flags(M)
        rho, amp = sampler.measure(dyn, s, Om, k=k)
        res.points.append(FRCPoint(Om, s.copy(), rho, amp, stable,
                                   fold, pd, branch))
        return det_pd

    def tangent(s, M, Om):
        h = 1e-6 * max(1.0, Om)
        R, _ = _shoot(dyn, s, Om, k, rtol)
        Rp, _ = _shoot(dyn, s, Om + h, k, rtol)
        J = np.column_stack([M - np.eye(2), (Rp - R) / h]) * scale[None, :]
        return _nullspace(J)

    det_pd_prev = record(s, M, Om)
    t = tangent(s, M, Om)
    want = -1.0 if start_high else 1.0
    if t[2] * want < 0:
        t = -t
    X = np.array([s[0], s[1], Om]) / scale
    ds = ds0
    t_prev_om = t[2]
    X0 = X.copy()
    moved = False

    while len(res.points) < max_points:
        Xp = X + ds * t
        Xn, M, ok, iters = _corrector(dyn, Xp, t, k, rtol, scale)
        if not ok:
            ds *= 0.5
            if ds < ds_min:
                break
            continue
        if iters <= 3:
            ds = min(2.0 * ds, ds_max)
        elif iters >= 8:
            ds = max(0.5 * ds, ds_min)
        s, Om = Xn[:2] * scale[:2], Xn[2] * scale[2]
        tn = tangent(s, M, Om)
        if np.dot(tn, t) < 0:
            tn = -tn
        fold = tn[2] * t_prev_om < 0
        det_pd = _multiplier_flags(M)[1]
        pd = det_pd * det_pd_prev < 0
        if pd:
            res.pd_omegas.append(Om)
        det_pd_prev = record(s, M, Om, fold=fold, pd=pd)
        t, X, t_prev_om = tn, Xn, tn[2]
        d0 = np.linalg.norm(Xn - X0)
        if not moved and d0 > 5.0 * ds0:
            moved = True
        if moved and d0 < ds:
            break
        if Om > om_hi + 0.02 * (om_hi - om_lo) or \
           Om < om_lo - 0.02 * (om_hi - om_lo):
            break
    return res


def _nullspace(J: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(J)
    return vt[-1]


def _corrector(dyn, Xp, t, k, rtol, scale, tol=1e-10, max_iter=10):
    X = Xp.copy()
    for it in range(1, max_iter + 1):
        s, Om = X[:2] * scale[:2], X[2] * scale[2]
        if Om <= 0:
            return X, np.eye(2), False, it
        R, M = _shoot(dyn, s, Om, k, rtol)
        g = np.array([R[0], R[1], np.dot(t, X - Xp)])
        if np.linalg.norm(g) < tol * max(1.0, np.linalg.norm(X)):
            return X, M, True, it
        h = 1e-6 * max(1.0, Om)
        Rp, _ = _shoot(dyn, s, Om + h, k, rtol)
        Js = np.column_stack([M - np.eye(2), (Rp - R) / h]) * scale[None, :]
        J = np.vstack([Js, t])
        try:
            X = X + np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            return X, M, False, it
    return X, M, False, max_iter


def parametric_branch_points(par: Parametrisation) -> Optional[Tuple[float, float]]:
    """Closed-form rates where the flat response loses stability.

    Valid when the drive enters the master equation only parametrically:
    the linearization about z = 0 is a constant-plus-rotating pair whose
    neutral curves give the two tongue edges.  Returns None below onset.
    """
    lam_eff = par.lam1 + par.f1.get((1, 0, 1, 1), 0.0)
    f2 = par.f1.get((0, 1, 1, 0), 0.0)
    disc = abs(f2) ** 2 - lam_eff.real ** 2
    if disc <= 0.0:
        return None
    half = 2.0 * np.sqrt(disc)
    return (2.0 * lam_eff.imag - half, 2.0 * lam_eff.imag + half)


def pd_scan(par: Parametrisation, om_lo: float, om_hi: float,
            n_grid: int = 80, refine_tol: float = 1e-10) -> List[float]:
    """Drive rates where the flat branch acquires a -1 multiplier."""
    dyn = ReducedDynamics(par)
    grid = np.linspace(om_lo, om_hi, n_grid)
    vals = []
    for Om in grid:
        M = dyn.trivial_monodromy(Om)
        vals.append(float(np.linalg.det(M + np.eye(2))))
    out = []
    for i in range(len(grid) - 1):
        if vals[i] * vals[i + 1] < 0:
            a, b = grid[i], grid[i + 1]
            fa = vals[i]
            while b - a > refine_tol * max(1.0, b):
                m = 0.5 * (a + b)
                fm = float(np.linalg.det(
                    dyn.trivial_monodromy(m) + np.eye(2)))
                if fa * fm <= 0:
                    b = m
                else:
                    a, fa = m, fm
            out.append(0.5 * (a + b))
    return out


def flat_branch(par: Parametrisation, sampler: OrbitSampler,
                om_lo: float, om_hi: float, n: int = 60,
                branch: int = 0,
                result: Optional[FRCResult] = None) -> FRCResult:
    """The z = 0 response under purely parametric drive, with stability."""
    dyn = ReducedDynamics(par)
    res = result or FRCResult()
    for Om in np.linspace(om_lo, om_hi, n):
        M = dyn.trivial_monodromy(Om)
        stable, _ = _multiplier_flags(M)
        t = np.linspace(0.0, 2.0 * np.pi / Om, 128, endpoint=False)
        z3 = np.exp(1j * Om * t)
        u = sampler.displacement(np.zeros_like(z3), z3)
        res.points.append(FRCPoint(Om, np.zeros(2), 0.0,
                                   0.5 * (u.max() - u.min()), stable,
                                   branch=branch))
    return res


def pd_amplitude_estimate(par: Parametrisation, Om: float) -> float:
    """Master-coordinate modulus of the subharmonic fixed point.

    In the frame rotating at half the drive rate the master equation has
    constant coefficients; its nontrivial fixed points satisfy
    ``|lam_r + i delta + c rho^2| = |f2|``, a quadratic in rho^2.
    Returns 0 outside the tongue or when the cubic term is missing.
    """
    lam_eff = par.lam1 + par.f1.get((1, 0, 1, 1), 0.0)
    f2 = par.f1.get((0, 1, 1, 0), 0.0)
    c = par.f1.get((2, 1, 0, 0), 0.0)
    if abs(c) == 0.0 or abs(f2) == 0.0:
        return 0.0
    delta = lam_eff.imag - 0.5 * Om
    a = abs(c) ** 2
    b = 2.0 * (lam_eff.real * c.real + delta * c.imag)
    e = lam_eff.real ** 2 + delta ** 2 - abs(f2) ** 2
    disc = b * b - 4.0 * a * e
    if disc <= 0.0:
        return 0.0
    x = (-b + np.sqrt(disc)) / (2.0 * a)
    return float(np.sqrt(max(x, 0.0)))


def period_doubled_branch(par: Parametrisation, sampler: OrbitSampler,
                          om_pd: float, om_lo: float, om_hi: float,
                          om_other: Optional[float] = None,
                          ds0: Optional[float] = None,
                          max_points: int = 900, branch: int = 1,
                          rtol: float = 1e-9,
                          result: Optional[FRCResult] = None) -> FRCResult:
    """Follow the subharmonic branch through the instability tongue.

    Shooting is seeded in the tongue interior (between the two edges
    when both are known) along the unstable direction of the flat-orbit
    monodromy, with the amplitude preset by the rotating-frame fixed
    point; ordinary continuation then sweeps towards both window ends.
    """
    if ds0 is None:
        ds0 = 0.008
    dyn = ReducedDynamics(par)
    res = result or FRCResult()
    res.pd_omegas.append(om_pd)
    if om_other is not None:
        res.pd_omegas.append(om_other)

    bp = parametric_branch_points(par)
    if om_other is not None:
        om_in = 0.5 * (om_pd + om_other)
    elif bp is not None:
        om_in = 0.5 * (bp[0] + bp[1])
    else:
        probe = dyn.trivial_monodromy(om_pd * (1 + 1e-4))
        inward = (1.0 if np.max(np.abs(np.linalg.eigvals(probe))) > 1.0
                  else -1.0)
        om_in = om_pd * (1.0 + inward * 5e-3)
    om_in = min(max(om_in, om_lo), om_hi)

    M = dyn.trivial_monodromy(om_in)
    mu, V = np.linalg.eig(M)
    v = np.real(V[:, int(np.argmax(np.abs(mu)))])
    if np.linalg.norm(v) == 0.0:
        return res
    v /= np.linalg.norm(v)

    rho = pd_amplitude_estimate(par, om_in)
    mags = [rho * f for f in (1.0, 0.5, 2.0) if rho > 0.0] + [1e-3, 1e-2]
    for mag in mags:
        s, Mk, ok = newton_periodic(dyn, mag * v, om_in, k=2, rtol=rtol)
        if ok and np.linalg.norm(s) > 0.25 * mag:
            break
    else:
        return res
    n0 = len(res.points)
    frc_sweep(par, sampler, om_lo, om_hi, k=2, ds0=ds0,
              max_points=max_points, seed=s, start_om=om_in,
              start_high=True, rtol=rtol, branch=branch, result=res)
    # the tongue branch is a closed loop; sweep the other way only if
    # the first pass stalled before closing it
    if len(res.points) - n0 < max_points // 2:
        loop_closed = (len(res.points) > n0 + 2 and np.linalg.norm(
            res.points[-1].s0 - s) < 0.05 * np.linalg.norm(s))
        if not loop_closed:
            frc_sweep(par, sampler, om_lo, om_hi, k=2, ds0=ds0,
                      max_points=max_points, seed=s, start_om=om_in,
                      start_high=False, rtol=rtol, branch=branch,
                      result=res)
    return res


def write_frc_csv(path, res: FRCResult, omega_ref: float = 1.0) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["omega", "rho", "um_micron", "stable",
                     "fold_flag", "pd_flag"])
        for p in res.points:
            wr.writerow([f"{p.omega * omega_ref:.12g}", f"{p.rho:.12g}",
                         f"{p.amp:.12g}", int(p.stable),
                         int(p.fold), int(p.pd)])


def read_frc_csv(path) -> FRCResult:
    res = FRCResult()
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header[:3] != ["omega", "rho", "um_micron"]:
            raise ValueError("not a response-curve table")
        for row in rd:
            res.points.append(FRCPoint(float(row[0]), np.zeros(2),
                                       float(row[1]), float(row[2]),
                                       bool(int(row[3])), bool(int(row[4])),
                                       bool(int(row[5]))))
    return res
