import numpy as np
import pytest

from diffcodesign.cage import (
    Cage,
    ComponentMesh,
    compute_mvc_weights,
    deform,
    deform_jacobian,
    sample_surface,
    surface_area_with_gradient,
    triangle_areas,
    winding_number,
)
from diffcodesign.errors import DimensionMismatch, NonClosedCage, PointOutsideCage

from cages import acceptance_cages, box_cage, box_corners, interior_points, tetra_cage
from fd import fd_jacobian


def test_handle_coincident_point_gives_unit_row():
    cage = box_cage()
    for k in [0, 3, 7]:
        w = compute_mvc_weights(cage, cage.handles[k][None, :]).weights[0]
        expect = np.zeros(8)
        expect[k] = 1.0
        assert np.allclose(w, expect, atol=1e-12)


def test_tetra_centroid_symmetric_weights():
    cage = tetra_cage()
    centroid = cage.handles.mean(axis=0)
    w = compute_mvc_weights(cage, centroid[None, :]).weights[0]
    assert np.allclose(w, 0.25, atol=1e-12)


def test_linear_reproduction_random_interior_cube():
    # oracle: reproduction checked directly against the sampled point
    cage = box_cage()
    pts = interior_points(cage, 100, seed=11)
    w = compute_mvc_weights(cage, pts)
    rec = deform(w, cage.handles)
    assert np.max(np.abs(rec - pts)) < 1e-9
    assert np.max(np.abs(w.weights.sum(axis=1) - 1.0)) < 1e-9


@pytest.mark.parametrize("idx", range(5))
def test_partition_and_reproduction_all_cages(idx):
    cage = acceptance_cages()[idx]
    pts = interior_points(cage, 40, seed=100 + idx)
    w = compute_mvc_weights(cage, pts)
    assert np.max(np.abs(w.weights.sum(axis=1) - 1.0)) < 1e-9
    assert np.max(np.abs(deform(w, cage.handles) - pts)) < 1e-9


def test_locality_on_face_interior_points():
    # Points coplanar with and inside a cage triangle depend only on that
    # triangle's handles.
    cage = box_cage()
    rng = np.random.default_rng(5)
    for fi in [0, 4, 7]:
        face = cage.faces[fi]
        tri = cage.handles[face]
        for _ in range(10):
            b = rng.dirichlet([2.0, 2.0, 2.0])
            p = b @ tri
            w = compute_mvc_weights(cage, p[None, :]).weights[0]
            off = np.delete(np.arange(8), face)
            assert np.max(np.abs(w[off])) < 1e-9
            assert np.all(w[face] > -1e-12)
            assert np.allclose(w @ cage.handles, p, atol=1e-12)


def test_outside_point_raises():
    cage = box_cage()
    with pytest.raises(PointOutsideCage):
        compute_mvc_weights(cage, np.array([[2.0, 0.0, 0.0]]))


def test_non_closed_cage_rejected():
    v = box_corners((0, 0, 0), (1, 1, 1))
    f = np.array([[0, 3, 2], [0, 2, 1], [4, 5, 6]])
    with pytest.raises(NonClosedCage):
        Cage(v, f)


def test_inconsistent_orientation_rejected():
    v = box_corners((0, 0, 0), (1, 1, 1))
    from cages import _BOX_FACES
    f = _BOX_FACES.copy()
    f[0] = f[0][::-1]
    with pytest.raises(NonClosedCage):
        Cage(v, f)


def test_deform_identity_translation_scale():
    cage = box_cage()
    pts = interior_points(cage, 25, seed=3)
    w = compute_mvc_weights(cage, pts)

    assert np.max(np.abs(deform(w, cage.handles) - pts)) < 1e-9

    t = np.array([0.3, -1.2, 2.0])
    assert np.max(np.abs(deform(w, cage.handles + t) - (pts + t))) < 1e-9

    # affine equivariance follows from linear reproduction
    assert np.max(np.abs(deform(w, cage.handles * 2.0) - pts * 2.0)) < 1e-9


def test_deform_linear_in_handles():
    cage = box_cage()
    pts = interior_points(cage, 10, seed=7)
    w = compute_mvc_weights(cage, pts)
    rng = np.random.default_rng(8)
    a = rng.standard_normal(cage.handles.shape)
    b = rng.standard_normal(cage.handles.shape)
    al, be = 0.7, -1.3
    lhs = deform(w, al * a + be * b)
    rhs = al * deform(w, a) + be * deform(w, b)
    assert np.max(np.abs(lhs - rhs)) < 1e-13


def test_deform_handle_count_mismatch():
    cage = box_cage()
    w = compute_mvc_weights(cage, interior_points(cage, 3, seed=1))
    with pytest.raises(DimensionMismatch):
        deform(w, cage.handles[:5])


def test_deform_jacobian_matches_fd_and_adjoint():
    cage = box_cage()
    pts = interior_points(cage, 12, seed=9)
    w = compute_mvc_weights(cage, pts)
    jac = deform_jacobian(w)
    rng = np.random.default_rng(10)
    dh = rng.standard_normal(cage.handles.shape)

    # deform is exactly linear, so a large step has zero truncation error
    # and keeps FD roundoff far below the 1e-10 relative target
    eps = 1e-3
    fd = (deform(w, cage.handles + eps * dh) - deform(w, cage.handles - eps * dh)) / (2 * eps)
    jv = jac.matvec(dh)
    denom = max(np.abs(fd).max(), 1e-30)
    assert np.max(np.abs(jv - fd)) / denom < 1e-10

    dv = rng.standard_normal(pts.shape)
    assert np.isclose(np.sum(jv * dv), np.sum(dh * jac.rmatvec(dv)), rtol=1e-12)


def test_single_vertex_single_handle_identity_blocks():
    # one point snapped onto a handle: Jacobian block is the 3x3 identity
    cage = box_cage()
    w = compute_mvc_weights(cage, cage.handles[2][None, :])
    jac = deform_jacobian(w)
    dh = np.zeros((8, 3))
    for axis in range(3):
        dh[:] = 0
        dh[2, axis] = 1.0
        out = jac.matvec(dh)
        expect = np.zeros(3)
        expect[axis] = 1.0
        assert np.allclose(out[0], expect, atol=1e-15)


def test_negative_weights_allowed_nonconvex():
    # an L-shaped (non-convex) cage produces some negative weights while
    # keeping normalization and reproduction
    v = np.array([
        [0, 0, 0], [2, 0, 0], [2, 1, 0], [1, 1, 0], [1, 2, 0], [0, 2, 0],
        [0, 0, 1], [2, 0, 1], [2, 1, 1], [1, 1, 1], [1, 2, 1], [0, 2, 1],
    ], dtype=float)
    bottom = [[0, 2, 1], [0, 3, 2], [0, 5, 3], [3, 5, 4]]
    top = [[6, 7, 8], [6, 8, 9], [6, 9, 11], [9, 10, 11]]
    sides = []
    ring = [0, 1, 2, 3, 4, 5]
    for i in range(6):
        a, b = ring[i], ring[(i + 1) % 6]
        sides += [[a, b, b + 6], [a, b + 6, a + 6]]
    cage = Cage(v, np.array(bottom + top + sides))
    pts = interior_points(cage, 60, seed=21)
    w = compute_mvc_weights(cage, pts)
    assert np.max(np.abs(deform(w, cage.handles) - pts)) < 1e-9
    assert w.weights.min() < -1e-6  # genuinely non-convex behavior


def test_surface_sampling_and_areas():
    v = box_corners((0, 0, 0), (0.02, 0.01, 0.009))
    from cages import _BOX_FACES
    f = _BOX_FACES.copy()
    samples, areas = sample_surface(v, f, 64, seed=4)
    total = triangle_areas(v, f).sum()
    assert abs(areas.sum() - total) / total < 0.01
    # samples lie on the box surface
    d = np.max(np.abs(samples), axis=0)
    assert np.all(samples[:, 0] <= 0.02 + 1e-12)
    on_face = (
        np.isclose(np.abs(samples[:, 0]), 0.02, atol=1e-12)
        | np.isclose(np.abs(samples[:, 1]), 0.01, atol=1e-12)
        | np.isclose(np.abs(samples[:, 2]), 0.009, atol=1e-12)
    )
    assert on_face.all()
    s2, _ = sample_surface(v, f, 64, seed=4)
    assert np.array_equal(samples, s2)


def test_surface_area_gradient_matches_fd():
    v = box_corners((0, 0, 0), (1, 0.8, 0.6))
    from cages import _BOX_FACES
    f = _BOX_FACES.copy()
    _, grad = surface_area_with_gradient(v, f)
    fd = fd_jacobian(lambda x: np.array([surface_area_with_gradient(x.reshape(-1, 3), f)[0]]),
                     v.ravel(), eps=1e-7)
    assert np.max(np.abs(grad.ravel() - fd.ravel())) < 1e-6


def test_component_mesh_invariants():
    v = box_corners((0, 0, 0), (0.02, 0.01, 0.009))
    from cages import _BOX_FACES
    f = _BOX_FACES.copy()
    samples, areas = sample_surface(v, f, 32, seed=0)
    mesh = ComponentMesh(v, f, samples, areas)
    assert abs(mesh.contact_sample_rest_areas.sum() - mesh.surface_area) / mesh.surface_area < 0.01
    cage = box_cage(half=(0.03, 0.02, 0.015))
    for p in np.vstack([mesh.vertices, mesh.contact_samples]):
        assert winding_number(cage, p) > 0.5
