"""Meshes for coupled solid/air electro-mechanical models.

A mesh holds six-node triangles tagged SOLID or AIR plus three-node
boundary edges carrying role tags:

  CLAMP          solid boundary with zero displacement
  SOLID_SURFACE  movable conductor surface between solid and air
  FACING         subset of the conductor surface used by parallel-plate models
  ELECTRODE      fixed electrode boundary of the air domain
  OUTER          truncation boundary of the air domain

AIR triangles may carry the BL flag; when any triangle is flagged, the
auxiliary extension and electric-field unknowns are restricted to the
flagged layer and the remaining air keeps only the scalar potential.

Text format (``#`` starts a comment)::

    node <id> <x> <y>
    tri6 <id> <n1> ... <n6> <SOLID|AIR|AIR_BL>
    edge3 <id> <n1> <n2> <n3> <tag> [tag ...]

Node order in ``tri6`` lines is three corners then midsides (1-2, 2-3,
3-1); ``edge3`` lines are (end, end, mid).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SOLID = "SOLID"
AIR = "AIR"
EDGE_TAGS = ("CLAMP", "SOLID_SURFACE", "FACING", "ELECTRODE", "OUTER")


@dataclass
class Mesh:
    nodes: np.ndarray                 # (nn, 2)
    tris: np.ndarray                  # (nt, 6) int
    tri_domain: np.ndarray            # (nt,) '<U8'
    tri_bl: np.ndarray                # (nt,) bool, BL flag on AIR triangles
    edges: np.ndarray                 # (ne, 3) int
    edge_tags: list = field(default_factory=list)   # list[frozenset[str]]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def tris_where(self, domain: str) -> np.ndarray:
        return np.flatnonzero(self.tri_domain == domain)

    def edges_where(self, tag: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.edge_tags) if tag in t],
                        dtype=int)

    def psi_tris(self) -> np.ndarray:
        """AIR triangles carrying auxiliary-field unknowns."""
        air = self.tri_domain == AIR
        if self.tri_bl.any():
            return np.flatnonzero(air & self.tri_bl)
        return np.flatnonzero(air)

    def corner_pairs(self) -> dict:
        """Map frozenset of two corner node ids -> list of triangle ids."""
        out: dict = {}
        for t, tri in enumerate(self.tris):
            for a, b in ((0, 1), (1, 2), (2, 0)):
                out.setdefault(frozenset((int(tri[a]), int(tri[b]))), []).append(t)
        return out

    def edge_neighbor(self, domain: str) -> np.ndarray:
        """Per edge, the id of an adjacent triangle of ``domain`` (-1 if none)."""
        pairs = self.corner_pairs()
        out = np.full(len(self.edges), -1, dtype=int)
        for e, edge in enumerate(self.edges):
            key = frozenset((int(edge[0]), int(edge[1])))
            for t in pairs.get(key, ()):
                if self.tri_domain[t] == domain:
                    out[e] = t
                    break
        return out

    def validate(self, fix_orientation: bool = True) -> None:
        """Check orientation, straightness and tag consistency.

        Triangles must be counter-clockwise.  Edges tagged SOLID_SURFACE
        or FACING are (re)oriented so the normal e_z x tangent points away
        from the adjacent solid triangle.
        """
        nn = self.n_nodes
        if self.tris.size and (self.tris.min() < 0 or self.tris.max() >= nn):
            raise ValueError("triangle node id out of range")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= nn):
            raise ValueError("edge node id out of range")
        x = self.nodes
        for t, tri in enumerate(self.tris):
            p = x[tri[:3]]
            a, b = p[1] - p[0], p[2] - p[0]
            det = a[0] * b[1] - a[1] * b[0]
            if det <= 0.0:
                raise ValueError(f"triangle {t} is not counter-clockwise")
            for (a, b, m) in ((0, 1, 3), (1, 2, 4), (2, 0, 5)):
                mid = 0.5 * (x[tri[a]] + x[tri[b]])
                if np.linalg.norm(x[tri[m]] - mid) > 1e-9 * (1.0 + np.abs(mid).max()):
                    raise ValueError(f"triangle {t} has a displaced midside node")
        for tags in self.edge_tags:
            for tag in tags:
                if tag not in EDGE_TAGS:
                    raise ValueError(f"unknown edge tag {tag!r}")
        for e, edge in enumerate(self.edges):
            mid = 0.5 * (x[edge[0]] + x[edge[1]])
            if np.linalg.norm(x[edge[2]] - mid) > 1e-9 * (1.0 + np.abs(mid).max()):
                raise ValueError(f"edge {e} mid node is not at the midpoint")
        solid_of = self.edge_neighbor(SOLID)
        for e, tags in enumerate(self.edge_tags):
            if "SOLID_SURFACE" in tags or "FACING" in tags:
                t = solid_of[e]
                if t < 0:
                    raise ValueError(f"surface edge {e} has no solid neighbor")
                n0, n1, nm = self.edges[e]
                tang = x[n1] - x[n0]
                normal = np.array([-tang[1], tang[0]])
                cen = x[self.tris[t][:3]].mean(axis=0)
                outward = 0.5 * (x[n0] + x[n1]) - cen
                if normal @ outward < 0.0:
                    if not fix_orientation:
                        raise ValueError(f"surface edge {e} is inverted")
                    self.edges[e] = (n1, n0, nm)


def save_mesh(path: str, mesh: Mesh) -> None:
    with open(path, "w") as fh:
        fh.write("# emrom mesh\n")
        for i, (px, py) in enumerate(mesh.nodes):
            fh.write(f"node {i} {float(px)!r} {float(py)!r}\n")
        for i, tri in enumerate(mesh.tris):
            dom = mesh.tri_domain[i]
            if dom == AIR and mesh.tri_bl[i]:
                dom = "AIR_BL"
            fh.write("tri6 %d %s %s\n" % (i, " ".join(str(n) for n in tri), dom))
        for i, edge in enumerate(mesh.edges):
            tags = " ".join(sorted(mesh.edge_tags[i]))
            fh.write("edge3 %d %s %s\n" % (i, " ".join(str(n) for n in edge), tags))


def load_mesh(path: str) -> Mesh:
    nodes: list = []
    tris: list = []
    doms: list = []
    bls: list = []
    edges: list = []
    etags: list = []
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kind = parts[0]
            try:
                if kind == "node":
                    idx = int(parts[1])
                    if idx != len(nodes):
                        raise ValueError("node ids must be consecutive")
                    nodes.append((float(parts[2]), float(parts[3])))
                elif kind == "tri6":
                    idx = int(parts[1])
                    if idx != len(tris):
                        raise ValueError("tri6 ids must be consecutive")
                    tris.append([int(p) for p in parts[2:8]])
                    dom = parts[8]
                    if dom == "AIR_BL":
                        doms.append(AIR)
                        bls.append(True)
                    elif dom in (SOLID, AIR):
                        doms.append(dom)
                        bls.append(False)
                    else:
                        raise ValueError(f"unknown domain {dom!r}")
                elif kind == "edge3":
                    idx = int(parts[1])
                    if idx != len(edges):
                        raise ValueError("edge3 ids must be consecutive")
                    edges.append([int(p) for p in parts[2:5]])
                    etags.append(frozenset(parts[5:]))
                else:
                    raise ValueError(f"unknown record {kind!r}")
            except (IndexError, ValueError) as err:
                raise ValueError(f"{path}:{ln}: {err}") from None
    mesh = Mesh(
        nodes=np.asarray(nodes, dtype=float).reshape(-1, 2),
        tris=np.asarray(tris, dtype=int).reshape(-1, 6),
        tri_domain=np.asarray(doms, dtype="<U8"),
        tri_bl=np.asarray(bls, dtype=bool),
        edges=np.asarray(edges, dtype=int).reshape(-1, 3),
        edge_tags=etags,
    )
    mesh.validate()
    return mesh


class _Builder:
    """Structured block mesher with node merging on shared block faces."""

    def __init__(self, round_digits: int = 9):
        self.digits = round_digits
        self.coords: dict = {}
        self.nodes: list = []
        self.tris: list = []
        self.doms: list = []
        self.bls: list = []
        self.edges: list = []
        self.etags: list = []

    def node(self, x: float, y: float) -> int:
        key = (round(x, self.digits), round(y, self.digits))
        idx = self.coords.get(key)
        if idx is None:
            idx = len(self.nodes)
            self.coords[key] = idx
            self.nodes.append((x, y))
        return idx

    def block(self, x0, x1, y0, y1, nx, ny, domain, bl=False):
        """Add an nx-by-ny rectangle of TRI6 pairs covering [x0,x1]x[y0,y1]."""
        xs = np.linspace(x0, x1, 2 * nx + 1)
        ys = np.linspace(y0, y1, 2 * ny + 1)
        grid = np.array([[self.node(px, py) for py in ys] for px in xs])
        for i in range(nx):
            for j in range(ny):
                a, b = 2 * i, 2 * j
                n = lambda di, dj: grid[a + di, b + dj]
                # lower-right triangle, counter-clockwise
                self._tri([n(0, 0), n(2, 0), n(2, 2),
                           n(1, 0), n(2, 1), n(1, 1)], domain, bl)
                # upper-left triangle
                self._tri([n(0, 0), n(2, 2), n(0, 2),
                           n(1, 1), n(1, 2), n(0, 1)], domain, bl)

    def _tri(self, ids, domain, bl):
        self.tris.append(ids)
        self.doms.append(domain)
        self.bls.append(bool(bl))

    def hline(self, x0, x1, y, nx, tags, flip=False):
        """Add nx EDGE3 edges along y with the given tags."""
        xs = np.linspace(x0, x1, 2 * nx + 1)
        for i in range(nx):
            n0 = self.node(xs[2 * i], y)
            n1 = self.node(xs[2 * i + 2], y)
            nm = self.node(xs[2 * i + 1], y)
            self.edges.append([n1, n0, nm] if flip else [n0, n1, nm])
            self.etags.append(frozenset(tags))

    def vline(self, x, y0, y1, ny, tags):
        ys = np.linspace(y0, y1, 2 * ny + 1)
        for j in range(ny):
            n0 = self.node(x, ys[2 * j])
            n1 = self.node(x, ys[2 * j + 2])
            nm = self.node(x, ys[2 * j + 1])
            self.edges.append([n0, n1, nm])
            self.etags.append(frozenset(tags))

    def finish(self) -> Mesh:
        mesh = Mesh(
            nodes=np.asarray(self.nodes, dtype=float),
            tris=np.asarray(self.tris, dtype=int).reshape(-1, 6),
            tri_domain=np.asarray(self.doms, dtype="<U8"),
            tri_bl=np.asarray(self.bls, dtype=bool),
            edges=np.asarray(self.edges, dtype=int).reshape(-1, 3),
            edge_tags=self.etags,
        )
        mesh.validate()
        return mesh


def generate_beam_mesh(length: float = 510.0, thickness: float = 1.5,
                       gap: float = 1.18, nx: int = 64, ny: int = 2,
                       n_air: int = 3, with_air: bool = True,
                       bl_rows: int = 0) -> Mesh:
    """Clamped-clamped beam with an air gap to a rigid electrode above.

    Lengths in micrometres.  The solid occupies [0,L]x[0,h], the air strip
    [0,L]x[h,h+g].  ``bl_rows`` > 0 flags only that many air rows next to
    the beam for the auxiliary fields.  ``with_air=False`` drops the air
    domain (parallel-plate models only need the FACING edges).
    """
    b = _Builder()
    h = thickness
    b.block(0.0, length, 0.0, h, nx, ny, SOLID)
    b.vline(0.0, 0.0, h, ny, ("CLAMP",))
    b.vline(length, 0.0, h, ny, ("CLAMP",))
    b.hline(0.0, length, h, nx, ("SOLID_SURFACE", "FACING"))
    if with_air:
        if bl_rows and bl_rows < n_air:
            dy = gap / n_air
            b.block(0.0, length, h, h + bl_rows * dy, nx, bl_rows, AIR, bl=True)
            b.block(0.0, length, h + bl_rows * dy, h + gap, nx, n_air - bl_rows, AIR)
        else:
            b.block(0.0, length, h, h + gap, nx, n_air, AIR)
        b.hline(0.0, length, h + gap, nx, ("ELECTRODE",))
        b.vline(0.0, h, h + gap, n_air, ("OUTER",))
        b.vline(length, h, h + gap, n_air, ("OUTER",))
    return b.finish()


def generate_pullin_mesh(mass_w: float = 6.0, mass_h: float = 3.0,
                         beam_len: float = 5.0, beam_t: float = 0.5,
                         gap: float = 1.0, refine: int = 1,
                         with_air: bool = True) -> Mesh:
    """Suspended rigid-ish mass between two support beams, electrode above.

    The mass spans [-W/2, W/2] x [0, H]; each support beam attaches at the
    mass side walls around mid height and is clamped at its far end.  The
    air strip sits between the mass top and the electrode.
    """
    b = _Builder()
    w2 = mass_w / 2.0
    d = beam_t        # cell size: beam thickness, so the side walls align
    r = max(int(refine), 1)
    nxm = int(round(mass_w / d)) * r
    nym = int(round(mass_h / d)) * r
    b.block(-w2, w2, 0.0, mass_h, nxm, nym, SOLID)
    y0 = 0.5 * (mass_h - beam_t)
    y0 = round(y0 / d) * d          # align the attachment to the mass grid
    nxb = int(round(beam_len / d)) * r
    b.block(-w2 - beam_len, -w2, y0, y0 + beam_t, nxb, r, SOLID)
    b.block(w2, w2 + beam_len, y0, y0 + beam_t, nxb, r, SOLID)
    b.vline(-w2 - beam_len, y0, y0 + beam_t, r, ("CLAMP",))
    b.vline(w2 + beam_len, y0, y0 + beam_t, r, ("CLAMP",))
    b.hline(-w2, w2, mass_h, nxm, ("SOLID_SURFACE", "FACING"))
    if with_air:
        nya = int(round(gap / d)) * r
        b.block(-w2, w2, mass_h, mass_h + gap, nxm, nya, AIR)
        b.hline(-w2, w2, mass_h + gap, nxm, ("ELECTRODE",))
        b.vline(-w2, mass_h, mass_h + gap, nya, ("OUTER",))
        b.vline(w2, mass_h, mass_h + gap, nya, ("OUTER",))
    return b.finish()
