"""Signed distance fields with first and second derivatives.

Analytic primitives cover the task objects (plane, sphere, box, rounded box,
box-with-rectangular-hole); a cubic-B-spline grid field supports arbitrary
meshes.  Values are negative inside.  Gradients are unit length almost
everywhere; queries landing on a medial-axis tie region are flagged so the
contact assembly can skip them for that step.
"""

import struct

import numpy as np

MEDIAL_TOL = 1e-4  # tie margin (m) flagged as a medial-axis query


class QueryResult:
    __slots__ = ("phi", "grad", "hess", "medial")

    def __init__(self, phi, grad, hess, medial):
        self.phi = phi          # (n,)
        self.grad = grad        # (n, 3) local frame
        self.hess = hess        # (n, 3, 3)
        self.medial = medial    # (n,) bool


class PlaneSDF:
    """Half space phi = n . p - offset; the region below the plane is inside."""

    kind = "plane"

    def __init__(self, normal=(0.0, 0.0, 1.0), offset=0.0):
        n = np.asarray(normal, dtype=float)
        self.normal = n / np.linalg.norm(n)
        self.offset = float(offset)

    def query(self, pts):
        pts = np.atleast_2d(pts)
        n = pts.shape[0]
        phi = pts @ self.normal - self.offset
        grad = np.tile(self.normal, (n, 1))
        return QueryResult(phi, grad, np.zeros((n, 3, 3)), np.zeros(n, dtype=bool))


class SphereSDF:
    kind = "sphere"

    def __init__(self, radius):
        self.radius = float(radius)

    def query(self, pts):
        pts = np.atleast_2d(pts)
        r = np.linalg.norm(pts, axis=1)
        medial = r < MEDIAL_TOL
        rs = np.where(medial, 1.0, r)
        phi = r - self.radius
        grad = pts / rs[:, None]
        eye = np.eye(3)[None]
        hess = (eye - grad[:, :, None] * grad[:, None, :]) / rs[:, None, None]
        return QueryResult(phi, grad, hess, medial)


class BoxSDF:
    """Axis-aligned box of given half extents, exact Euclidean distance outside."""

    kind = "box"

    def __init__(self, half_extents):
        self.half = np.asarray(half_extents, dtype=float)

    def query(self, pts):
        pts = np.atleast_2d(pts)
        n = pts.shape[0]
        s = np.where(pts >= 0.0, 1.0, -1.0)
        a = np.abs(pts)
        qv = a - self.half[None, :]
        outside = np.any(qv > 0.0, axis=1)

        phi = np.empty(n)
        grad = np.zeros((n, 3))
        hess = np.zeros((n, 3, 3))
        medial = np.zeros(n, dtype=bool)

        if np.any(outside):
            u = np.maximum(qv[outside], 0.0)
            d = np.linalg.norm(u, axis=1)
            phi[outside] = d
            gu = u / d[:, None]
            grad[outside] = s[outside] * gu
            act = (qv[outside] > 0.0).astype(float)
            eye = np.eye(3)[None]
            h = (act[:, :, None] * eye * act[:, None, :] - gu[:, :, None] * gu[:, None, :]) / d[:, None, None]
            hess[outside] = s[outside][:, :, None] * h * s[outside][:, None, :]

        inside = ~outside
        if np.any(inside):
            qi = qv[inside]
            order = np.argsort(qi, axis=1)
            imax = order[:, -1]
            second = qi[np.arange(qi.shape[0]), order[:, -2]]
            top = qi[np.arange(qi.shape[0]), imax]
            phi[inside] = top
            g = np.zeros((qi.shape[0], 3))
            g[np.arange(qi.shape[0]), imax] = 1.0
            grad[inside] = s[inside] * g
            medial[inside] = (top - second) < MEDIAL_TOL
        return QueryResult(phi, grad, hess, medial)


class RoundedBoxSDF:
    """Box with edges/corners rounded by `radius` (a true SDF offset)."""

    kind = "rounded_box"

    def __init__(self, half_extents, radius):
        self.radius = float(radius)
        self.inner = BoxSDF(np.asarray(half_extents, dtype=float) - self.radius)
        self.half = np.asarray(half_extents, dtype=float)

    def query(self, pts):
        res = self.inner.query(pts)
        res.phi = res.phi - self.radius
        return res


class BoxWithHoleSDF:
    """Box with a rectangular through/blind hole: max(box, -hole_box).

    Not an exact distance everywhere but sign-correct with unit gradients
    away from the blend surface; the blend set is flagged as medial.
    """

    kind = "box_with_hole"

    def __init__(self, half_extents, hole_half_extents, hole_center=(0.0, 0.0, 0.0)):
        self.outer = BoxSDF(half_extents)
        self.hole = BoxSDF(hole_half_extents)
        self.hole_center = np.asarray(hole_center, dtype=float)

    def query(self, pts):
        pts = np.atleast_2d(pts)
        a = self.outer.query(pts)
        b = self.hole.query(pts - self.hole_center[None, :])
        pick_a = a.phi >= -b.phi
        phi = np.where(pick_a, a.phi, -b.phi)
        grad = np.where(pick_a[:, None], a.grad, -b.grad)
        hess = np.where(pick_a[:, None, None], a.hess, -b.hess)
        medial = a.medial | b.medial | (np.abs(a.phi + b.phi) < MEDIAL_TOL)
        return QueryResult(phi, grad, hess, medial)


# ---------------------------------------------------------------------------
# grid field with cubic B-spline reconstruction (C^2)

_BSPLINE = np.array([
    [1.0, -3.0, 3.0, -1.0],
    [4.0, 0.0, -6.0, 3.0],
    [1.0, 3.0, 3.0, -3.0],
    [0.0, 0.0, 0.0, 1.0],
]) / 6.0


def _bspline_weights(t, deriv):
    """Cubic uniform B-spline basis values (4,) at local coordinate t."""
    if deriv == 0:
        mono = np.array([1.0, t, t * t, t ** 3])
    elif deriv == 1:
        mono = np.array([0.0, 1.0, 2.0 * t, 3.0 * t * t])
    else:
        mono = np.array([0.0, 0.0, 2.0, 6.0 * t])
    return _BSPLINE @ mono


class GridSDF:
    """Signed distances sampled on a regular grid, C^2 B-spline reconstruction.

    The samples act as spline coefficients (approximating spline); gradients
    are normalized in `query` with the normalization folded into the reported
    Hessian.
    """

    kind = "grid"

    def __init__(self, origin, spacing, values):
        self.origin = np.asarray(origin, dtype=float)
        self.spacing = float(spacing)
        self.values = np.asarray(values, dtype=float)

    def query(self, pts):
        pts = np.atleast_2d(pts)
        n = pts.shape[0]
        phi = np.empty(n)
        grad = np.empty((n, 3))
        hess = np.empty((n, 3, 3))
        medial = np.zeros(n, dtype=bool)
        h = self.spacing
        dims = np.array(self.values.shape)
        for i, p in enumerate(pts):
            x = (p - self.origin) / h
            cell = np.floor(x).astype(int)
            cell = np.clip(cell, 1, dims - 3)
            t = x - cell
            w = [[_bspline_weights(t[ax], d) for d in range(3)] for ax in range(3)]
            block = self.values[cell[0] - 1: cell[0] + 3,
                                cell[1] - 1: cell[1] + 3,
                                cell[2] - 1: cell[2] + 3]
            def ev(dx, dy, dz):
                return np.einsum("i,j,k,ijk->", w[0][dx], w[1][dy], w[2][dz], block)
            phi[i] = ev(0, 0, 0)
            g = np.array([ev(1, 0, 0), ev(0, 1, 0), ev(0, 0, 1)]) / h
            hs = np.array([
                [ev(2, 0, 0), ev(1, 1, 0), ev(1, 0, 1)],
                [ev(1, 1, 0), ev(0, 2, 0), ev(0, 1, 1)],
                [ev(1, 0, 1), ev(0, 1, 1), ev(0, 0, 2)],
            ]) / (h * h)
            gn = np.linalg.norm(g)
            if gn < 1e-6:
                medial[i] = True
                grad[i] = np.array([0.0, 0.0, 1.0])
                hess[i] = 0.0
                phi[i] = phi[i]
                continue
            # report unit gradient; fold normalization into the Hessian
            u = g / gn
            proj = (np.eye(3) - np.outer(u, u)) / gn
            grad[i] = u
            hess[i] = proj @ hs
        return QueryResult(phi, grad, hess, medial)


GRID_MAGIC = b"DCSDF01\x00"


def write_grid_sdf(path, grid):
    """Header: magic, dims (3 uint32), origin (3 float64), spacing (float64);
    then nx*ny*nz little-endian float32, x-major."""
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<3I", *grid.values.shape))
        fh.write(struct.pack("<3d", *grid.origin))
        fh.write(struct.pack("<d", grid.spacing))
        fh.write(grid.values.astype("<f4").tobytes(order="C"))


def read_grid_sdf(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != GRID_MAGIC:
            raise ValueError("not a grid SDF file")
        dims = struct.unpack("<3I", fh.read(12))
        origin = struct.unpack("<3d", fh.read(24))
        spacing = struct.unpack("<d", fh.read(8))[0]
        data = np.frombuffer(fh.read(), dtype="<f4").astype(float)
    return GridSDF(origin, spacing, data.reshape(dims))
