"""Configuration-driven studies and the command line front end.

A study file is INI-style: geometry, material, actuation, damping,
reduction orders, formulation and solver sections.  ``run`` executes the
pipeline mesh -> static -> spectrum -> reduction -> response curves (and
optionally the full-order transient check), ``pullin`` runs the
quasi-static sweep, ``compare`` reports deviations between two response
tables, ``audit`` prints structural diagnostics of the assembled pencil.

Exit codes: 0 ok, 1 numerical failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import json
import os
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from .mesh import generate_beam_mesh, generate_pullin_mesh
from .dofmap import build_dofmap
from .assembly import EPS0, Material, assemble_operators
from . import mppf, statics, dae, spectral, dpim, rom, fom, io as artio


class ConfigError(Exception):
    pass


_TARGETS = ("primary", "superharmonic2", "parametric")
_FORMULATIONS = ("MPPF", "MGF")


@dataclass
class SystemConfig:
    """One study: geometry, drive, damping, orders and solver knobs.

    Unit conventions follow the micrometre/microsecond/kilogram system
    used across the package: config material data is given in lab units
    (GPa, kg/m^3, N) and converted on load; damping coefficients are
    read as 1/us (alpha, applied to the mass) and us (beta, applied to
    the stiffness).
    """
    benchmark: str = "beam"
    length: float = 510.0
    thickness: float = 1.5
    gap: float = 1.18
    nx: int = 24
    ny: int = 2
    n_air: int = 6
    bl_rows: int = 0
    # pull-in benchmark geometry
    mass_w: float = 6.0
    mass_h: float = 3.0
    beam_len: float = 5.0
    beam_t: float = 0.5
    refine: int = 1

    young_gpa: float = 154.0
    poisson: float = 0.0
    density_kgm3: float = 2330.0
    axial_force_n: float = 0.0
    width: float = 100.0
    linear_only: bool = False

    v_dc: float = 0.0
    v_ac: float = 0.0
    target: str = "primary"
    omega_window: Tuple[float, float] = (0.98, 1.03)
    v_guess: float = 0.0          # pull-in sweep start scale

    alpha: float = 0.0
    beta: float = 0.0

    p: int = 5
    q: int = 1

    formulation: str = "MPPF"

    ds0: float = 0.008
    max_points: int = 1200
    n_modes: int = 4
    fom_points: int = 0
    fom_cycles: int = 0
    steps_per_cycle: int = 120

    out_dir: str = "run"

    @property
    def young(self) -> float:
        return self.young_gpa * 1e-9       # GPa in um-us-kg units

    @property
    def density(self) -> float:
        return self.density_kgm3 * 1e-18

    @property
    def prestress(self) -> float:
        area = self.thickness * self.width
        return self.axial_force_n * 1e-6 / area

    def material(self) -> Material:
        return Material(young=self.young, poisson=self.poisson,
                        density=self.density, prestress=self.prestress,
                        linear_only=self.linear_only, width=self.width)


_SCHEMA = {
    "geometry": {"benchmark": str, "length": float, "thickness": float,
                 "gap": float, "nx": int, "ny": int, "n_air": int,
                 "bl_rows": int, "mass_w": float, "mass_h": float,
                 "beam_len": float, "beam_t": float, "refine": int},
    "material": {"young_gpa": float, "poisson": float,
                 "density_kgm3": float, "axial_force_n": float,
                 "width": float, "linear_only": bool},
    "actuation": {"v_dc": float, "v_ac": float, "target": str,
                  "omega_window": str, "v_guess": float},
    "damping": {"alpha": float, "beta": float},
    "reduction": {"p": int, "q": int},
    "formulation": {"kind": str},
    "solver": {"ds0": float, "max_points": int, "n_modes": int,
               "fom_points": int, "fom_cycles": int,
               "steps_per_cycle": int},
    "output": {"dir": str},
}

_RENAME = {("formulation", "kind"): "formulation", ("output", "dir"): "out_dir"}
_REQUIRED = [("actuation", "v_dc")]


def load_config(path) -> SystemConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file: {path}")
    cfg = SystemConfig()
    for sec, keys in _SCHEMA.items():
        if not cp.has_section(sec):
            continue
        for key in cp[sec]:
            if key not in keys:
                raise ConfigError(f"unknown field: {sec}.{key}")
        for key, typ in keys.items():
            if key not in cp[sec]:
                continue
            raw = cp[sec][key]
            attr = _RENAME.get((sec, key), key)
            try:
                if typ is bool:
                    val = cp[sec].getboolean(key)
                elif key == "omega_window":
                    lo, hi = (float(x) for x in raw.split(","))
                    val = (lo, hi)
                else:
                    val = typ(raw)
            except (ValueError, TypeError):
                raise ConfigError(f"bad value for {sec}.{key}: {raw!r}")
            setattr(cfg, attr, val)
    for sec, key in _REQUIRED:
        if not cp.has_option(sec, key):
            raise ConfigError(f"missing required field: {sec}.{key}")
    _validate(cfg)
    return cfg


def _validate(cfg: SystemConfig) -> None:
    if cfg.benchmark not in ("beam", "pullin"):
        raise ConfigError(f"unknown benchmark: {cfg.benchmark}")
    if cfg.v_ac < 0:
        raise ConfigError("actuation.v_ac must be nonnegative")
    if cfg.formulation not in _FORMULATIONS:
        raise ConfigError(f"formulation.kind must be one of {_FORMULATIONS}")
    if cfg.target not in _TARGETS:
        raise ConfigError(f"actuation.target must be one of {_TARGETS}")
    if cfg.benchmark == "beam" and cfg.v_ac > 0:
        if cfg.p < 3:
            raise ConfigError(
                "reduction.p must be at least 3 for a nonlinear study")
        if cfg.target == "superharmonic2" and cfg.q < 2:
            raise ConfigError(
                "superharmonic2 runs need reduction.q >= 2: the response "
                "at twice the drive rate enters the reduced dynamics only "
                "through second-order products of the drive coordinates")
    if cfg.omega_window[0] >= cfg.omega_window[1]:
        raise ConfigError("actuation.omega_window must be increasing")


def save_config(path, cfg: SystemConfig) -> None:
    cp = configparser.ConfigParser()
    for sec, keys in _SCHEMA.items():
        cp.add_section(sec)
        for key in keys:
            attr = _RENAME.get((sec, key), key)
            val = getattr(cfg, attr)
            if key == "omega_window":
                cp[sec][key] = f"{val[0]:.12g},{val[1]:.12g}"
            elif isinstance(val, bool):
                cp[sec][key] = "true" if val else "false"
            elif isinstance(val, float):
                cp[sec][key] = f"{val:.12g}"
            else:
                cp[sec][key] = str(val)
    with open(path, "w") as fh:
        cp.write(fh)


@dataclass
class StudyState:
    """Everything the pipeline produced, for reuse by callers and tests."""
    cfg: SystemConfig
    mesh: object = None
    dofs: object = None
    mat: Material = None
    static_x: np.ndarray = None
    ops: object = None
    sys: object = None
    modes: object = None
    om1: float = 0.0
    om_target: float = 0.0
    par: Optional[dpim.Parametrisation] = None
    sampler: Optional[rom.OrbitSampler] = None
    frc: Optional[rom.FRCResult] = None
    fom_pts: Optional[list] = None
    outputs: List[str] = field(default_factory=list)


def build_system(cfg: SystemConfig) -> StudyState:
    """Mesh, bias the structure, assemble and scale the pencil."""
    st = StudyState(cfg)
    mat = cfg.material()
    if cfg.benchmark != "beam":
        raise ConfigError("build_system supports the beam benchmark only")
    if cfg.formulation == "MGF":
        mesh = generate_beam_mesh(cfg.length, cfg.thickness, cfg.gap,
                                  cfg.nx, cfg.ny, cfg.n_air, with_air=True,
                                  bl_rows=cfg.bl_rows)
    else:
        mesh = generate_beam_mesh(cfg.length, cfg.thickness, cfg.gap,
                                  cfg.nx, cfg.ny, with_air=False)
    dofs = build_dofmap(mesh)
    st.mesh, st.dofs, st.mat = mesh, dofs, mat

    if cfg.formulation == "MGF":
        prob = statics.CoupledStatic(mesh, dofs, mat)
        x, V, rep = statics.voltage_ramp(prob, cfg.v_dc)
        if not rep.converged:
            raise RuntimeError("static stage: bias ramp did not converge")
        state = prob.unpack(x, cfg.v_dc)
        ops = assemble_operators(mesh, dofs, mat, state)
        st.sys = dae.build_dae(ops, dofs, cfg.alpha, cfg.beta, g=cfg.gap)
    else:
        prob = statics.PlateStatic(mesh, dofs, mat, gap=cfg.gap)
        x, V, rep = statics.voltage_ramp(prob, cfg.v_dc)
        if not rep.converged:
            raise RuntimeError("static stage: bias ramp did not converge")
        u0, psi0 = prob.unpack(x, cfg.v_dc)
        ops = mppf.assemble_plate_operators(mesh, dofs, mat, prob.kern,
                                            u0, psi0)
        st.sys = dae.build_plate_dae(ops, dofs, cfg.alpha, cfg.beta,
                                     g=cfg.gap)
    st.ops = ops
    st.static_x = x
    st.modes = spectral.modes_of(st.sys, k=cfg.n_modes)
    st.om1 = float(st.modes.lam[0].imag)
    st.om_target = {"primary": st.om1, "superharmonic2": 0.5 * st.om1,
                    "parametric": 2.0 * st.om1}[cfg.target]
    return st


def reduce_system(st: StudyState) -> StudyState:
    cfg = st.cfg
    st.par = dpim.parametrise(st.sys, st.modes, cfg.p, cfg.q,
                              omega=st.om_target, v_ac=cfg.v_ac)
    probe = st.dofs.nearest_u_dof(np.array([cfg.length / 2.0, 0.0]), comp=1)
    idx = st.sys.u_index(probe)
    st.sampler = rom.OrbitSampler(st.par, idx, float(st.sys.Sy[idx]))
    return st


def response_curve(st: StudyState) -> rom.FRCResult:
    cfg = st.cfg
    lo = cfg.omega_window[0] * st.om_target
    hi = cfg.omega_window[1] * st.om_target
    if cfg.target == "parametric":
        res = rom.flat_branch(st.par, st.sampler, lo, hi,
                              n=max(40, cfg.max_points // 10))
        pds = rom.pd_scan(st.par, lo, hi)
        if pds:
            rom.period_doubled_branch(
                st.par, st.sampler, pds[0], lo, hi,
                om_other=pds[1] if len(pds) > 1 else None,
                ds0=cfg.ds0, max_points=cfg.max_points, result=res)
        st.frc = res
    else:
        st.frc = rom.frc_sweep(st.par, st.sampler, lo, hi, ds0=cfg.ds0,
                               max_points=cfg.max_points)
    return st.frc


def fom_check(st: StudyState, omegas=None) -> list:
    cfg = st.cfg
    if cfg.formulation != "MPPF":
        raise ConfigError("the transient check runs on the MPPF "
                          "formulation only")
    zeta = max(st.modes.zeta(0), 1e-4)
    cycles = cfg.fom_cycles or int(np.ceil(1.5 / zeta))
    if omegas is None:
        lo = cfg.omega_window[0] * st.om_target
        hi = cfg.omega_window[1] * st.om_target
        omegas = np.linspace(lo, hi, cfg.fom_points)
    k_damp = (None if cfg.beta == 0.0
              else dae.condensed_stiffness_plate(st.ops))
    prob = fom.TransientPlate(st.mesh, st.dofs, st.mat, gap=cfg.gap,
                              alpha=cfg.alpha, beta=cfg.beta, k_damp=k_damp)
    probe = st.dofs.nearest_u_dof(np.array([cfg.length / 2.0, 0.0]), comp=1)
    st.fom_pts = fom.fom_frc(prob, cfg.v_dc, cfg.v_ac, omegas, cycles,
                             cfg.steps_per_cycle, probe_dof=probe)
    return st.fom_pts


def _static_vtk(st: StudyState, path) -> None:
    cfg, dofs, mesh = st.cfg, st.dofs, st.mesh
    if cfg.formulation == "MGF":
        prob = statics.CoupledStatic(mesh, dofs, st.mat)
        fs = prob.unpack(st.static_x, cfg.v_dc)
        cell = np.zeros((len(mesh.tris), 2))
        for t in mesh.psi_tris():
            base = dofs.psi_base[t]
            vals = fs.psi[base:base + 6].reshape(3, 2)
            cell[t] = vals.mean(axis=0)
        artio.write_vtk(path, mesh,
                        point_data={"u": fs.u, "s": fs.s, "phi": fs.phi},
                        cell_data={"psi": cell})
    else:
        prob = statics.PlateStatic(mesh, dofs, st.mat, gap=cfg.gap)
        u0, _ = prob.unpack(st.static_x, cfg.v_dc)
        artio.write_vtk(path, mesh, point_data={"u": u0})


def run_study(cfg_path, out_root: Optional[str] = None,
              verbose: bool = True) -> StudyState:
    cfg = load_config(cfg_path)
    out = _out_dir(cfg, out_root)
    out.mkdir(parents=True, exist_ok=True)

    def log(msg):
        if verbose:
            print(msg, flush=True)

    stage = "mesh/static/assembly"
    try:
        st = build_system(cfg)
        log(f"[{stage}] n={st.sys.n} dofs, omega1={st.om1:.6g} rad/us, "
            f"zeta1={st.modes.zeta(0):.3g}")
        spectral.write_modes_csv(out / "modes.csv", st.sys, st.modes)
        st.outputs.append("modes.csv")
        _static_vtk(st, out / "static.vtk")
        st.outputs.append("static.vtk")

        if cfg.v_ac > 0:
            stage = "reduction"
            reduce_system(st)
            dpim.save_rom(out / "rom", st.par)
            st.outputs += ["rom.rom", "rom.w"]
            log(f"[{stage}] O({cfg.p},{cfg.q}), {len(st.par.W)} monomials, "
                f"defect {st.par.residual_max:.2e}, eps={st.par.eps:.3g}")

            stage = "continuation"
            response_curve(st)
            rom.write_frc_csv(out / "frc.csv", st.frc)
            st.outputs.append("frc.csv")
            pk_om, pk_amp = st.frc.peak()
            log(f"[{stage}] {len(st.frc.points)} points, peak "
                f"{pk_amp:.4g} um at {pk_om:.6g} rad/us"
                + (f", branch points {[f'{o:.5g}' for o in st.frc.pd_omegas]}"
                   if st.frc.pd_omegas else ""))

            if cfg.fom_points > 0:
                stage = "transient verification"
                fom_check(st)
                fom.write_fom_csv(out / "fom_frc.csv", st.fom_pts)
                st.outputs.append("fom_frc.csv")
                bad = sum(not p.converged for p in st.fom_pts)
                log(f"[{stage}] {len(st.fom_pts)} points"
                    + (f", {bad} unconverged" if bad else ""))
    except ConfigError:
        raise
    except Exception as exc:
        raise RuntimeError(f"stage '{stage}' failed: {exc}") from exc

    _write_manifest(out, cfg_path, cfg, st)
    st.outputs.append("manifest.json")
    log(f"artifacts in {out}")
    return st


def run_pullin(cfg_path, out_root: Optional[str] = None,
               verbose: bool = True) -> statics.PullInResult:
    cfg = load_config(cfg_path)
    if cfg.benchmark != "pullin":
        raise ConfigError("pullin command needs geometry.benchmark=pullin")
    out = _out_dir(cfg, out_root)
    out.mkdir(parents=True, exist_ok=True)
    mesh = generate_pullin_mesh(cfg.mass_w, cfg.mass_h, cfg.beam_len,
                                cfg.beam_t, cfg.gap, cfg.refine,
                                with_air=False)
    dofs = build_dofmap(mesh)
    mat = cfg.material()
    prob = statics.PlateStatic(mesh, dofs, mat, gap=cfg.gap)
    probe = dofs.nearest_u_dof(np.array([0.0, cfg.mass_h]), comp=1)

    tr = fom.TransientPlate(mesh, dofs, mat, gap=cfg.gap)

    def omega1(problem, x, V):
        from scipy.sparse.linalg import eigsh
        u_nodal, _ = problem.unpack(x, V)
        Kt = tr.tangent(u_nodal, V)
        w2 = eigsh(Kt.tocsc(), k=1, M=tr.M.tocsc(), sigma=0.0)[0]
        return float(np.sqrt(max(w2[0], 0.0)))

    v_guess = cfg.v_guess or _lumped_pullin_estimate(mesh, dofs, mat, prob,
                                                     probe, cfg)
    res = statics.pullin_sweep(prob, v_guess, probe, omega_fn=omega1)
    artio.write_pullin_csv(out / "pullin.csv", res, cfg.gap)
    if verbose:
        print(f"last stable: V={res.V_last:.6g} V, |u|/g="
              f"{abs(res.u_last) / cfg.gap:.4f}")
        print(f"extrapolated instability voltage: {res.V_pullin:.6g} V")
        print(f"artifacts in {out}")
    _write_manifest(out, cfg_path, cfg, None,
                    extra={"V_pullin": res.V_pullin,
                           "u_last_over_g": abs(res.u_last) / cfg.gap},
                    outputs=["pullin.csv"])
    return res


def _lumped_pullin_estimate(mesh, dofs, mat, prob, probe, cfg) -> float:
    k = statics.measured_plate_stiffness(mesh, dofs, mat, probe)
    area = prob.kern.length.sum()
    return float(np.sqrt(8.0 * k * cfg.gap ** 3 / (27.0 * EPS0 * area)))


def compare_runs(path_a, path_b) -> Dict[str, float]:
    """Deviation statistics between two response tables.

    Stable points only; each table is split into continuation segments,
    overlapping segments are matched and the second table interpolated
    onto the first.  Deviations are fractions of the first table's peak
    amplitude.
    """
    a = rom.read_frc_csv(path_a)
    b = rom.read_frc_csv(path_b)
    sa = _stable_segments(a)
    sb = _stable_segments(b)
    if not sa or not sb:
        raise ConfigError("no stable points to compare")
    lo = max(min(p.omega for p in a.points), min(p.omega for p in b.points))
    hi = min(max(p.omega for p in a.points), max(p.omega for p in b.points))
    if hi <= lo:
        raise ConfigError("tables cover disjoint rate ranges")
    ref = max(p.amp for p in a.points if p.stable)
    devs = []
    for oa, va in sa:
        best = None
        for ob, vb in sb:
            l, h = max(oa.min(), ob.min()), min(oa.max(), ob.max())
            if h <= l:
                continue
            msk = (oa >= l) & (oa <= h)
            if msk.sum() < 2:
                continue
            order = np.argsort(ob)
            vi = np.interp(oa[msk], ob[order], vb[order])
            d = np.abs(vi - va[msk]) / ref
            cand = (np.median(d), d)
            if best is None or cand[0] < best[0]:
                best = cand
        if best is not None:
            devs.append(best[1])
    if not devs:
        raise ConfigError("no overlapping stable segments")
    alld = np.concatenate(devs)
    return {"max": float(alld.max()),
            "rms": float(np.sqrt(np.mean(alld ** 2))),
            "n": int(alld.size), "ref_peak": float(ref)}


def _stable_segments(res: rom.FRCResult):
    segs = []
    cur_o, cur_a = [], []
    for p in res.points:
        if p.stable:
            cur_o.append(p.omega)
            cur_a.append(p.amp)
        elif cur_o:
            segs.append((np.array(cur_o), np.array(cur_a)))
            cur_o, cur_a = [], []
    if cur_o:
        segs.append((np.array(cur_o), np.array(cur_a)))
    return [(o, a) for o, a in segs if len(o) >= 2]


def run_audit(cfg_path, verbose: bool = True) -> bool:
    cfg = load_config(cfg_path)
    st = build_system(cfg)
    ok, checks = dae.audit_structure(st.sys)
    if verbose:
        print(f"pencil: n={st.sys.n}, formulation="
              f"{st.sys.meta.get('formulation')}")
        print(_block_map(st.sys))
        for name, good, detail in checks:
            print(f"  {'ok ' if good else 'FAIL'} {name} ({detail})")
        for i in range(len(st.modes.lam)):
            lv = st.modes.lam[i]
            print(f"  mode {i + 1}: omega={abs(lv):.6g} rad/us, "
                  f"zeta={st.modes.zeta(i):.3g}")
    return ok


def _block_map(sys) -> str:
    names = [k for k in sys.slices]
    lines = ["block nnz of A (rows x cols):"]
    hdr = "        " + "".join(f"{n:>10s}" for n in names)
    lines.append(hdr)
    A = sys.A.tocsr()
    for rn in names:
        r = sys.slices[rn]
        row = [f"{rn:>8s}"]
        for cn in names:
            c = sys.slices[cn]
            nnz = A[r, :][:, c].nnz
            row.append(f"{nnz:10d}")
        lines.append("".join(row))
    return "\n".join(lines)


def _out_dir(cfg: SystemConfig, out_root: Optional[str]) -> Path:
    root = Path(out_root if out_root is not None
                else os.environ.get("EMROM_OUT", "."))
    p = Path(cfg.out_dir)
    return p if p.is_absolute() else root / p


def _write_manifest(out: Path, cfg_path, cfg: SystemConfig,
                    st: Optional[StudyState], extra: Optional[dict] = None,
                    outputs: Optional[list] = None) -> None:
    import scipy
    h = hashlib.sha256(Path(cfg_path).read_bytes()).hexdigest()
    man = {
        "config": str(cfg_path),
        "config_sha256": h,
        "package_version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config_values": dataclasses.asdict(cfg),
        "outputs": outputs if outputs is not None
        else (st.outputs if st else []),
    }
    if st is not None:
        man["results"] = {"omega1_rad_per_us": st.om1,
                          "zeta1": float(st.modes.zeta(0))}
        if st.frc is not None:
            pk_om, pk_amp = st.frc.peak()
            man["results"]["peak_omega"] = pk_om
            man["results"]["peak_um"] = pk_amp
            if st.frc.pd_omegas:
                man["results"]["pd_omegas"] = list(st.frc.pd_omegas)
    if extra:
        man.setdefault("results", {}).update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv: Optional[List[str]] = None) -> int:
    ap = argparse.ArgumentParser(
        prog="emrom",
        description="electromechanical reduced-order modelling studies")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="execute study config files")
    p_run.add_argument("configs", nargs="+")
    p_run.add_argument("--out", default=None, help="output root directory")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="parallel workers across config files")
    p_run.add_argument("-q", "--quiet", action="store_true")

    p_pi = sub.add_parser("pullin", help="quasi-static pull-in sweep")
    p_pi.add_argument("config")
    p_pi.add_argument("--out", default=None)
    p_pi.add_argument("-q", "--quiet", action="store_true")

    p_cmp = sub.add_parser("compare", help="deviation between two "
                                           "response tables")
    p_cmp.add_argument("table_a")
    p_cmp.add_argument("table_b")
    p_cmp.add_argument("--tol", type=float, default=None,
                       help="fail (exit 1) when max deviation exceeds this")

    p_aud = sub.add_parser("audit", help="pencil structure and spectrum "
                                         "diagnostics")
    p_aud.add_argument("config")

    ns = ap.parse_args(argv)
    try:
        if ns.cmd == "run":
            if ns.jobs > 1 and len(ns.configs) > 1:
                import concurrent.futures as cf
                with cf.ProcessPoolExecutor(max_workers=ns.jobs) as ex:
                    futs = [ex.submit(run_study, c, ns.out, not ns.quiet)
                            for c in ns.configs]
                    for f in futs:
                        f.result()
            else:
                for c in ns.configs:
                    run_study(c, ns.out, verbose=not ns.quiet)
            return 0
        if ns.cmd == "pullin":
            run_pullin(ns.config, ns.out, verbose=not ns.quiet)
            return 0
        if ns.cmd == "compare":
            stats = compare_runs(ns.table_a, ns.table_b)
            print(f"points compared: {stats['n']}")
            print(f"reference peak:  {stats['ref_peak']:.6g} um")
            print(f"max deviation:   {stats['max']:.4%} of peak")
            print(f"rms deviation:   {stats['rms']:.4%} of peak")
            if ns.tol is not None and stats["max"] > ns.tol:
                print(f"FAIL: exceeds tolerance {ns.tol:.4%}")
                return 1
            return 0
        if ns.cmd == "audit":
            return 0 if run_audit(ns.config) else 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    _sys.exit(main())
