"""Cage-based deformation with mean value coordinates.

A component mesh is enclosed by a coarse, closed triangular cage.  Each mesh
point gets one row of normalized deformation weights over the cage handles;
deformation is then a constant linear map from handle positions to point
positions.  The weight construction follows the mean value coordinates
scheme for closed triangular meshes, with two exact special cases (point on
a handle, point on a cage face) that make the on-face locality property hold
exactly on connection surfaces.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonClosedCage, PointOutsideCage

HANDLE_SNAP_TOL = 1e-8    # point-to-handle distance treated as coincident
FACE_SNAP_TOL = 1e-8      # point-to-face-plane distance treated as on-face
OUTSIDE_TOL = 1e-9        # allowed signed excursion outside the cage
PLANARITY_TOL = 1e-9


@dataclass(frozen=True)
class Cage:
    """Closed triangular cage: handle rest positions plus labeled connection faces."""

    handles: np.ndarray                  # (H, 3) rest positions
    faces: np.ndarray                    # (F, 3) vertex index triples, outward oriented
    connection_face_ids: dict = field(default_factory=dict)  # label -> list of face ids

    def __post_init__(self):
        object.__setattr__(self, "handles", np.asarray(self.handles, dtype=float))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=int))
        self.validate_closed()
        self._validate_connection_planarity()

    def validate_closed(self):
        """Every directed edge must appear exactly once (closed, consistent orientation)."""
        edges = {}
        for fi, (i, j, k) in enumerate(self.faces):
            for a, b in ((i, j), (j, k), (k, i)):
                if (a, b) in edges:
                    raise NonClosedCage(f"directed edge {(a, b)} repeated (faces {edges[(a, b)]}, {fi})")
                edges[(a, b)] = fi
        for (a, b) in edges:
            if (b, a) not in edges:
                raise NonClosedCage(f"edge {(a, b)} has no opposite; surface not closed")

    def _validate_connection_planarity(self):
        for label, fids in self.connection_face_ids.items():
            hids = sorted({int(h) for f in fids for h in self.faces[f]})
            pts = self.handles[hids]
            centroid = pts.mean(axis=0)
            rel = pts - centroid
            # smallest singular direction = plane normal; residual = distance to plane
            _, svals, vt = np.linalg.svd(rel, full_matrices=False)
            normal = vt[-1]
            dist = np.abs(rel @ normal)
            if dist.max(initial=0.0) > PLANARITY_TOL:
                raise NonClosedCage(
                    f"connection surface '{label}' is not planar (max deviation {dist.max():.3e})")

    def connection_handles(self, label):
        """Sorted handle indices of one connection surface."""
        fids = self.connection_face_ids[label]
        return sorted({int(h) for f in fids for h in self.faces[f]})

    @property
    def n_handles(self):
        return self.handles.shape[0]


@dataclass(frozen=True)
class WeightMatrix:
    """Dense |V| x |H| deformation-weight matrix with normalized rows."""

    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        rows = self.weights.sum(axis=1)
        if self.weights.size and np.max(np.abs(rows - 1.0)) > 1e-9:
            raise ValueError("weight rows must sum to 1 within 1e-9")

    @property
    def shape(self):
        return self.weights.shape


@dataclass(frozen=True)
class ComponentMesh:
    """Triangulated component surface with presampled contact points."""

    vertices: np.ndarray                     # (V, 3)
    faces: np.ndarray                        # (F, 3)
    contact_samples: np.ndarray              # (S, 3), on the surface
    contact_sample_rest_areas: np.ndarray    # (S,), m^2

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=int))
        object.__setattr__(self, "contact_samples", np.asarray(self.contact_samples, dtype=float))
        object.__setattr__(self, "contact_sample_rest_areas",
                           np.asarray(self.contact_sample_rest_areas, dtype=float))

    @property
    def surface_area(self):
        return float(triangle_areas(self.vertices, self.faces).sum())


def triangle_areas(vertices, faces):
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=int)
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def surface_area_with_gradient(vertices, faces):
    """Total triangle-mesh area and its gradient w.r.t. vertex positions."""
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=int)
    e1 = v[f[:, 1]] - v[f[:, 0]]
    e2 = v[f[:, 2]] - v[f[:, 0]]
    cr = np.cross(e1, e2)
    nrm = np.linalg.norm(cr, axis=1)
    area = 0.5 * nrm.sum()
    unit = cr / nrm[:, None]
    grad = np.zeros_like(v)
    # dA/dv0 = 0.5 * unit x (v2 - v1), cyclic for the others
    np.add.at(grad, f[:, 0], 0.5 * np.cross(unit, v[f[:, 2]] - v[f[:, 1]]))
    np.add.at(grad, f[:, 1], 0.5 * np.cross(unit, v[f[:, 0]] - v[f[:, 2]]))
    np.add.at(grad, f[:, 2], 0.5 * np.cross(unit, v[f[:, 1]] - v[f[:, 0]]))
    return area, grad


def winding_number(cage, point):
    """Generalized winding number of the cage surface around a point.

    ~1 inside, ~0 outside, ~0.5 on the surface.
    """
    u = cage.handles - point[None, :]
    d = np.linalg.norm(u, axis=1)
    if d.min() < 1e-14:
        return 0.5
    u = u / d[:, None]
    a = u[cage.faces[:, 0]]
    b = u[cage.faces[:, 1]]
    c = u[cage.faces[:, 2]]
    det = np.einsum("ij,ij->i", a, np.cross(b, c))
    denom = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    omega = 2.0 * np.arctan2(det, denom)
    return float(omega.sum() / (4.0 * np.pi))


def _barycentric_on_face(handles, face, point):
    """Barycentric coordinates of a near-coplanar point projected on a face.

    Returns None unless the point is within FACE_SNAP_TOL of the plane and
    not outside the triangle.
    """
    p0, p1, p2 = handles[face[0]], handles[face[1]], handles[face[2]]
    n = np.cross(p1 - p0, p2 - p0)
    n2 = n @ n
    if n2 < 1e-24:
        return None
    dist = (point - p0) @ n / np.sqrt(n2)
    if abs(dist) > FACE_SNAP_TOL:
        return None
    proj = point - dist * n / np.sqrt(n2)
    # solve proj - p0 = b1 (p1 - p0) + b2 (p2 - p0)
    e1 = p1 - p0
    e2 = p2 - p0
    m = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
    rhs = np.array([(proj - p0) @ e1, (proj - p0) @ e2])
    b1, b2 = np.linalg.solve(m, rhs)
    b0 = 1.0 - b1 - b2
    if min(b0, b1, b2) < -1e-9:
        return None
    return np.array([b0, b1, b2])


def _mvc_single(cage, point):
    handles = cage.handles
    faces = cage.faces
    nh = handles.shape[0]

    diff = handles - point[None, :]
    dist = np.linalg.norm(diff, axis=1)
    k = int(np.argmin(dist))
    if dist[k] < HANDLE_SNAP_TOL:
        w = np.zeros(nh)
        w[k] = 1.0
        return w

    for face in faces:
        bary = _barycentric_on_face(handles, face, point)
        if bary is not None:
            w = np.zeros(nh)
            w[face] = bary
            return w

    if winding_number(cage, point) < 0.5:
        raise PointOutsideCage(f"point {point} lies outside the cage")

    u = diff / dist[:, None]
    w = np.zeros(nh)
    f0, f1, f2 = faces[:, 0], faces[:, 1], faces[:, 2]
    u0, u1, u2 = u[f0], u[f1], u[f2]
    # edge arc angles theta_i opposite vertex i
    l0 = np.linalg.norm(u1 - u2, axis=1)
    l1 = np.linalg.norm(u2 - u0, axis=1)
    l2 = np.linalg.norm(u0 - u1, axis=1)
    th0 = 2.0 * np.arcsin(np.clip(l0 * 0.5, -1.0, 1.0))
    th1 = 2.0 * np.arcsin(np.clip(l1 * 0.5, -1.0, 1.0))
    th2 = 2.0 * np.arcsin(np.clip(l2 * 0.5, -1.0, 1.0))
    h = 0.5 * (th0 + th1 + th2)

    det = np.einsum("ij,ij->i", u0, np.cross(u1, u2))
    sgn = np.sign(det)
    sin_h = np.sin(h)
    eps = 1e-12

    th = (th0, th1, th2)
    dd = (dist[f0], dist[f1], dist[f2])
    c = []
    s = []
    for i in range(3):
        ip, im = (i + 1) % 3, (i + 2) % 3
        ci = 2.0 * sin_h * np.sin(h - th[i]) / np.maximum(np.sin(th[ip]) * np.sin(th[im]), eps) - 1.0
        ci = np.clip(ci, -1.0, 1.0)
        c.append(ci)
        s.append(sgn * np.sqrt(np.maximum(1.0 - ci * ci, 0.0)))
    # coplanar-outside triangles contribute nothing
    valid = (np.abs(s[0]) > eps) & (np.abs(s[1]) > eps) & (np.abs(s[2]) > eps)
    for i in range(3):
        ip, im = (i + 1) % 3, (i + 2) % 3
        num = th[i] - c[ip] * th[im] - c[im] * th[ip]
        den = dd[i] * np.sin(th[ip]) * s[im]
        contrib = np.where(valid, num / np.where(valid, den, 1.0), 0.0)
        np.add.at(w, faces[:, i], contrib)

    total = w.sum()
    if abs(total) < 1e-14:
        raise PointOutsideCage(f"degenerate weight normalization at point {point}")
    return w / total


def compute_mvc_weights(cage, points):
    """Mean-value-coordinate weight rows for points inside or on a closed cage.

    Raises PointOutsideCage for points strictly outside; NonClosedCage was
    already raised at cage construction for bad surfaces.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rows = np.empty((pts.shape[0], cage.n_handles))
    for i, p in enumerate(pts):
        rows[i] = _mvc_single(cage, p)
    return WeightMatrix(rows)


def deform(weights, new_handles):
    """Deformed point positions: exact weight-matrix product, no iteration."""
    w = weights.weights if isinstance(weights, WeightMatrix) else np.asarray(weights)
    h = np.asarray(new_handles, dtype=float)
    if h.shape[0] != w.shape[1]:
        raise DimensionMismatch(f"{w.shape[1]} handles expected, got {h.shape[0]}")
    return w @ h


class DeformJacobian:
    """Constant linear map d(points)/d(handles) of the cage deformation.

    Acts on (H, 3) handle displacement arrays and returns (V, 3) point
    displacements; the transpose acts the other way.  The full matrix is the
    Kronecker product weights (x) I_3 and is never materialized.
    """

    def __init__(self, weights):
        self.weights = weights.weights if isinstance(weights, WeightMatrix) else np.asarray(weights)

    @property
    def shape(self):
        v, h = self.weights.shape
        return (3 * v, 3 * h)

    def matvec(self, dh):
        dh = np.asarray(dh, dtype=float)
        if dh.shape[0] != self.weights.shape[1]:
            raise DimensionMismatch("handle count mismatch")
        return self.weights @ dh

    def rmatvec(self, dv):
        dv = np.asarray(dv, dtype=float)
        if dv.shape[0] != self.weights.shape[0]:
            raise DimensionMismatch("vertex count mismatch")
        return self.weights.T @ dv


def deform_jacobian(weights):
    return DeformJacobian(weights)


def sample_surface(vertices, faces, count, seed=0, oversample=4):
    """Approximately uniform (area-weighted, farthest-point thinned) surface samples.

    Returns (samples (count, 3), rest_areas (count,)); rest areas split the
    total surface area evenly so they sum to it exactly.
    """
    v = np.asarray(vertices, dtype=float)
    f = np.asarray(faces, dtype=int)
    areas = triangle_areas(v, f)
    total = areas.sum()
    if count == 0:
        return np.zeros((0, 3)), np.zeros(0)
    rng = np.random.default_rng(seed)
    m = max(count * oversample, count)
    tri = rng.choice(len(f), size=m, p=areas / total)
    r1 = np.sqrt(rng.random(m))
    r2 = rng.random(m)
    a, b, c = v[f[tri, 0]], v[f[tri, 1]], v[f[tri, 2]]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c

    # farthest-point thinning for a blue-noise-like spread
    chosen = [0]
    d2 = np.sum((pts - pts[0]) ** 2, axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    samples = pts[chosen]
    rest_areas = np.full(count, total / count)
    return samples, rest_areas
