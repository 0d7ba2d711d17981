"""Bilinear plane-strain quadrilateral: shape gradients, internal force, CFL."""
from __future__ import annotations

import math

import numpy as np

from ..errors import GeometryError, InvalidArgument
from .material import ElementState, MaterialModel, radial_return

_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])
_G = 1.0 / math.sqrt(3.0)
GAUSS_FULL = [(-_G, -_G), (_G, -_G), (_G, _G), (-_G, _G)]
GAUSS_REDUCED = [(0.0, 0.0)]
# hourglass base vector for CCW node order
HOURGLASS = np.array([1.0, -1.0, 1.0, -1.0])


def gauss_points(integration):
    if integration == "full":
        return GAUSS_FULL, np.ones(4)
    if integration == "reduced":
        return GAUSS_REDUCED, np.array([4.0])
    raise InvalidArgument(f"integration must be 'full' or 'reduced', got {integration!r}")


def b_matrix(coords, xi, eta, element=None):
    """Strain-displacement matrix (3x8, engineering shear) and det J."""
    dN = np.vstack((_XI * (1 + _ETA * eta), _ETA * (1 + _XI * xi))) / 4.0  # d/dxi, d/deta
    J = dN @ coords
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if not det > 0:
        name = "" if element is None else f" {element}"
        raise GeometryError(f"element{name} is inverted or degenerate (det J = {det:.3e})")
    dNx = np.linalg.solve(J, dN)
    B = np.zeros((3, 8))
    B[0, 0::2] = dNx[0]
    B[1, 1::2] = dNx[1]
    B[2, 0::2] = dNx[1]
    B[2, 1::2] = dNx[0]
    return B, det


def square_operators(h, integration="full"):
    """B at each Gauss point and weight*detJ for an axis-aligned square of side ``h``."""
    coords = np.array([[0, 0], [h, 0], [h, h], [0, h]], dtype=float)
    pts, w = gauss_points(integration)
    Bs, wd = [], []
    for (xi, eta), wi in zip(pts, w):
        B, det = b_matrix(coords, xi, eta)
        Bs.append(B)
        wd.append(wi * det)
    return np.ascontiguousarray(np.array(Bs)), np.array(wd)


def elastic_matrix(mat: MaterialModel):
    """(xx, yy, gxy) strain increment -> (xx, yy, zz, xy) stress increment."""
    lam, G = mat.lam, mat.G
    c11 = lam + 2 * G
    return np.array([[c11, lam, 0.0], [lam, c11, 0.0], [lam, lam, 0.0], [0.0, 0.0, G]])


def element_internal_force(coords, du, states, mat: MaterialModel, dt, integration="full",
                           velocity=None, hg_coef=0.0, element=None):
    """Nodal internal forces (8,) per unit thickness and updated Gauss-point states.

    ``du`` is the displacement increment of the step (8,), node-major
    ``(u0x, u0y, u1x, ...)``; ``states`` holds one :class:`ElementState` per
    Gauss point.  With reduced integration a viscous hourglass force driven
    by ``velocity`` is added.
    """
    coords = np.asarray(coords, dtype=float)
    du = np.asarray(du, dtype=float)
    pts, w = gauss_points(integration)
    if len(states) != len(pts):
        raise InvalidArgument(f"expected {len(pts)} Gauss-point states, got {len(states)}")
    C = elastic_matrix(mat)
    f = np.zeros(8)
    new_states = []
    for (xi, eta), wi, st in zip(pts, w, states):
        B, det = b_matrix(coords, xi, eta, element)
        trial = st.stress + C @ (B @ du)
        new = radial_return(trial, dt, st, mat)
        new_states.append(new)
        f += B.T @ new.stress[[0, 1, 3]] * wi * det
    if integration == "reduced" and velocity is not None and hg_coef > 0:
        v = np.asarray(velocity, dtype=float)
        qx = HOURGLASS @ v[0::2]
        qy = HOURGLASS @ v[1::2]
        f[0::2] += hg_coef * qx * HOURGLASS
        f[1::2] += hg_coef * qy * HOURGLASS
    return f, new_states


def fresh_states(integration="full"):
    return [ElementState() for _ in gauss_points(integration)[0]]


def stable_dt(edge, mat: MaterialModel, safety=0.9):
    """Critical explicit step ``safety * edge / c_d``; ``edge`` in metres."""
    if not 0 < safety <= 1:
        raise InvalidArgument(f"safety must be in (0, 1], got {safety!r}")
    if not edge > 0:
        raise InvalidArgument("edge must be positive")
    return safety * edge / mat.wave_speed
