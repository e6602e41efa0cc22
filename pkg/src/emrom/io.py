"""Artifact writers: VTK snapshots and study tables."""
from __future__ import annotations

import csv
from typing import Dict, Optional

import numpy as np

from .mesh import Mesh
from .statics import PullInResult

_VTK_TRI6 = 22


def write_vtk(path, mesh: Mesh, point_data: Optional[Dict] = None,
              cell_data: Optional[Dict] = None) -> None:
    """Legacy-ASCII unstructured grid of quadratic triangles.

    ``point_data`` maps names to (n_nodes,) scalars or (n_nodes, 2)
    vectors; ``cell_data`` likewise per triangle.  Vector fields are
    padded to three components.
    """
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("coupled electromechanical state\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        n = mesh.n_nodes
        fh.write(f"POINTS {n} double\n")
        for x, y in mesh.nodes:
            fh.write(f"{x:.10g} {y:.10g} 0\n")
        ne = len(mesh.tris)
        fh.write(f"CELLS {ne} {7 * ne}\n")
        for conn in mesh.tris:
            fh.write("6 " + " ".join(str(int(i)) for i in conn) + "\n")
        fh.write(f"CELL_TYPES {ne}\n")
        fh.write("\n".join([str(_VTK_TRI6)] * ne) + "\n")

        def emit(name, arr):
            arr = np.asarray(arr)
            if arr.ndim == 1:
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in arr:
                    fh.write(f"{v:.10g}\n")
            else:
                fh.write(f"VECTORS {name} double\n")
                for row in arr:
                    z = row[2] if len(row) > 2 else 0.0
                    fh.write(f"{row[0]:.10g} {row[1]:.10g} {z:.10g}\n")

        if point_data:
            fh.write(f"POINT_DATA {n}\n")
            for name, arr in point_data.items():
                emit(name, arr)
        if cell_data:
            fh.write(f"CELL_DATA {ne}\n")
            for name, arr in cell_data.items():
                emit(name, arr)


def write_pullin_csv(path, result: PullInResult,
                     gap: float, omega_ref: float = 1.0) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["V", "um_over_g", "omega1"])
        for v, u, w in result.rows():
            wr.writerow([f"{v:.12g}", f"{abs(u) / gap:.12g}",
                         f"{w * omega_ref:.12g}"])


def read_pullin_csv(path):
    V, ug, om = [], [], []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        next(rd)
        for row in rd:
            V.append(float(row[0]))
            ug.append(float(row[1]))
            om.append(float(row[2]))
    return np.array(V), np.array(ug), np.array(om)
