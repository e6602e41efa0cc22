"""Reference elements and quadrature rules.

Two element types are used everywhere: six-node quadratic triangles (TRI6)
for the displacement, extension and potential fields, and three-node
quadratic line elements (EDGE3) for boundary integrals.  The auxiliary
electric field is piecewise linear and discontinuous, so it reuses the
barycentric P1 basis of the parent triangle.

Conventions:
  * TRI6 node order: three corners, then midsides (1-2, 2-3, 3-1).
  * TRI6 reference coordinates (xi, eta) with corners (0,0), (1,0), (0,1).
  * EDGE3 node order: (end, end, mid), reference coordinate a in [-1, 1].
"""
from __future__ import annotations

import numpy as np

# degree-5, 7-point rule on the reference triangle (weights sum to 1/2)
_TRI_A1 = 0.0597158717897698
_TRI_B1 = 0.4701420641051151
_TRI_A2 = 0.7974269853530873
_TRI_B2 = 0.1012865073234563
_TRI_W0 = 0.225
_TRI_W1 = 0.1323941527885062
_TRI_W2 = 0.1259391805448271

TRI_QP = np.array([
    [1.0 / 3.0, 1.0 / 3.0],
    [_TRI_B1, _TRI_B1],
    [_TRI_A1, _TRI_B1],
    [_TRI_B1, _TRI_A1],
    [_TRI_B2, _TRI_B2],
    [_TRI_A2, _TRI_B2],
    [_TRI_B2, _TRI_A2],
])
TRI_QW = 0.5 * np.array([_TRI_W0, _TRI_W1, _TRI_W1, _TRI_W1,
                         _TRI_W2, _TRI_W2, _TRI_W2])

# 3-point Gauss rule on [-1, 1] (degree 5)
EDGE_QP = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
EDGE_QW = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def tri6_shape(points: np.ndarray) -> np.ndarray:
    """TRI6 shape functions at reference points (n, 2) -> (n, 6)."""
    pts = np.atleast_2d(points)
    xi, eta = pts[:, 0], pts[:, 1]
    lam = 1.0 - xi - eta
    return np.stack([
        lam * (2.0 * lam - 1.0),
        xi * (2.0 * xi - 1.0),
        eta * (2.0 * eta - 1.0),
        4.0 * lam * xi,
        4.0 * xi * eta,
        4.0 * eta * lam,
    ], axis=1)


def tri6_shape_grad(points: np.ndarray) -> np.ndarray:
    """TRI6 shape gradients wrt (xi, eta) at reference points -> (n, 6, 2)."""
    pts = np.atleast_2d(points)
    xi, eta = pts[:, 0], pts[:, 1]
    lam = 1.0 - xi - eta
    zero = np.zeros_like(xi)
    dxi = np.stack([
        1.0 - 4.0 * lam,
        4.0 * xi - 1.0,
        zero,
        4.0 * (lam - xi),
        4.0 * eta,
        -4.0 * eta,
    ], axis=1)
    deta = np.stack([
        1.0 - 4.0 * lam,
        zero,
        4.0 * eta - 1.0,
        -4.0 * xi,
        4.0 * xi,
        4.0 * (lam - eta),
    ], axis=1)
    return np.stack([dxi, deta], axis=2)


def p1_shape(points: np.ndarray) -> np.ndarray:
    """Barycentric P1 basis of the triangle at reference points -> (n, 3)."""
    pts = np.atleast_2d(points)
    xi, eta = pts[:, 0], pts[:, 1]
    return np.stack([1.0 - xi - eta, xi, eta], axis=1)


def edge3_shape(a: np.ndarray) -> np.ndarray:
    """EDGE3 shape functions at reference coordinates (n,) -> (n, 3)."""
    a = np.atleast_1d(a)
    return np.stack([0.5 * a * (a - 1.0),
                     0.5 * a * (a + 1.0),
                     1.0 - a * a], axis=1)


def edge3_shape_grad(a: np.ndarray) -> np.ndarray:
    """EDGE3 shape derivatives d/da at reference coordinates -> (n, 3)."""
    a = np.atleast_1d(a)
    return np.stack([a - 0.5, a + 0.5, -2.0 * a], axis=1)
