"""Manipulator component database: procedural meshes and deformation cages.

Every component extends along +x in its local frame with planar connection
surfaces perpendicular to x.  All connection surfaces share one rectangular
4-handle cage layout so any two components can be chained and their merged
handles guarantee interface connectivity.  Assets can be overridden with OBJ
files plus JSON cage descriptors via the DIFFCODESIGN_ASSETS directory.
"""

import enum
import json
import os
from dataclasses import dataclass

import numpy as np

from ..cage import Cage, ComponentMesh, compute_mvc_weights, sample_surface
from ..objio import read_obj

# connection rectangle (cage) half extents, shared by every interface
CONN_W = 0.012   # y half extent
CONN_H = 0.011   # z half extent
# mesh interface ring half extents (strictly inside the connection rectangle)
RING_W = 0.010
RING_H = 0.009


class ComponentKind(str, enum.Enum):
    FINGER_BASE = "finger_base"
    PHALANX_SEGMENT = "phalanx_segment"
    FINGER_TIP = "finger_tip"
    KNUCKLE = "knuckle"
    JOINT = "joint"


DEFORMATION_CLASS = {
    ComponentKind.FINGER_BASE: "free_form",
    ComponentKind.PHALANX_SEGMENT: "free_form",
    ComponentKind.FINGER_TIP: "free_form",
    ComponentKind.KNUCKLE: "axis_scale_only",
    ComponentKind.JOINT: "axis_scale_only",
}

# rotation axes of the articulated components (local frame)
PIN_AXIS = {
    ComponentKind.KNUCKLE: np.array([0.0, 0.0, 1.0]),
    ComponentKind.JOINT: np.array([0.0, 1.0, 0.0]),
}

NOMINAL_LENGTH = {
    ComponentKind.FINGER_BASE: 0.020,
    ComponentKind.KNUCKLE: 0.012,
    ComponentKind.JOINT: 0.012,
    ComponentKind.PHALANX_SEGMENT: 0.040,
    ComponentKind.FINGER_TIP: 0.030,
}

# octagonal cross-section profile (unit half-extents, corner bevel)
_PROFILE = np.array([
    [1.0, 0.0], [0.78, 0.78], [0.0, 1.0], [-0.78, 0.78],
    [-1.0, 0.0], [-0.78, -0.78], [0.0, -1.0], [0.78, -0.78],
])


def loft_mesh(stations, sections):
    """Watertight octagonal loft: stations (x values), sections (hy, hz) pairs."""
    verts = []
    for x, (hy, hz) in zip(stations, sections):
        for py, pz in _PROFILE:
            verts.append([x, py * hy, pz * hz])
    n_ring = len(_PROFILE)
    faces = []
    for r in range(len(stations) - 1):
        a0 = r * n_ring
        b0 = (r + 1) * n_ring
        for i in range(n_ring):
            j = (i + 1) % n_ring
            faces.append([a0 + i, a0 + j, b0 + j])
            faces.append([a0 + i, b0 + j, b0 + i])
    c_prox = len(verts)
    verts.append([stations[0], 0.0, 0.0])
    c_dist = len(verts)
    verts.append([stations[-1], 0.0, 0.0])
    for i in range(n_ring):
        j = (i + 1) % n_ring
        faces.append([c_prox, (j) % n_ring, i])
        last = (len(stations) - 1) * n_ring
        faces.append([c_dist, last + i, last + j])
    return np.asarray(verts, dtype=float), np.asarray(faces, dtype=int)


def tube_cage(stations, rects, connection_labels):
    """Closed cage from stacked 4-handle rectangles perpendicular to x.

    stations: x values; rects: (hy, hz) per station; connection_labels: dict
    label -> station index whose rectangle is a connection surface.
    """
    handles = []
    for x, (hy, hz) in zip(stations, rects):
        handles += [[x, -hy, -hz], [x, hy, -hz], [x, hy, hz], [x, -hy, hz]]
    handles = np.asarray(handles, dtype=float)
    faces = []
    # proximal cap (outward -x): ring order (-y,-z), (y,-z), (y,z), (-y,z)
    faces += [[0, 3, 2], [0, 2, 1]]
    for r in range(len(stations) - 1):
        a = 4 * r
        b = 4 * (r + 1)
        for i in range(4):
            j = (i + 1) % 4
            faces.append([a + i, a + j, b + j])
            faces.append([a + i, b + j, b + i])
    last = 4 * (len(stations) - 1)
    faces += [[last + 0, last + 1, last + 2], [last + 0, last + 2, last + 3]]
    faces = np.asarray(faces, dtype=int)
    conn = {}
    for label, st in connection_labels.items():
        if st == 0:
            conn[label] = [0, 1]
        elif st == len(stations) - 1:
            conn[label] = [len(faces) - 2, len(faces) - 1]
        else:
            raise ValueError("connection surfaces must be end rectangles")
    return Cage(handles, faces, connection_face_ids=conn)


@dataclass
class ComponentAsset:
    """One database entry: mesh, cage, precomputed deformation weights."""

    kind: ComponentKind
    mesh: ComponentMesh
    cage: Cage
    length: float
    weights_vertices: np.ndarray      # |V| x |H|
    weights_samples: np.ndarray       # |S| x |H|
    mid_station_handles: np.ndarray   # handle ids of the free mid rectangle ([] if none)

    @property
    def n_handles(self):
        return self.cage.n_handles

    def connection_handles(self, label):
        return self.cage.connection_handles(label)


def _build_asset(kind, stations, sections, cage_stations, cage_rects,
                 connections, n_samples, sample_seed):
    verts, faces = loft_mesh(stations, sections)
    samples, areas = sample_surface(verts, faces, n_samples, seed=sample_seed)
    mesh = ComponentMesh(verts, faces, samples, areas)
    cage = tube_cage(cage_stations, cage_rects, connections)
    wv = compute_mvc_weights(cage, verts).weights
    ws = compute_mvc_weights(cage, samples).weights
    mid = np.arange(4, 8) if len(cage_stations) == 3 else np.zeros(0, dtype=int)
    return ComponentAsset(kind, mesh, cage, float(stations[-1] - stations[0]),
                          wv, ws, mid)


def _samples_for(n_samples, kind, default=64):
    if isinstance(n_samples, dict):
        return int(n_samples.get(kind, n_samples.get("default", default)))
    return int(n_samples)


def _procedural_database(n_samples=64, sample_seed=0):
    db = {}
    lb = NOMINAL_LENGTH[ComponentKind.FINGER_BASE]
    db[ComponentKind.FINGER_BASE] = _build_asset(
        ComponentKind.FINGER_BASE,
        [0.0, lb], [(0.013, 0.012), (RING_W, RING_H)],
        [0.0, lb], [(0.015, 0.014), (CONN_W, CONN_H)],
        {"distal": 1}, _samples_for(n_samples, ComponentKind.FINGER_BASE), sample_seed)

    for kind in (ComponentKind.KNUCKLE, ComponentKind.JOINT):
        lk = NOMINAL_LENGTH[kind]
        db[kind] = _build_asset(
            kind,
            [0.0, lk], [(RING_W, RING_H), (RING_W, RING_H)],
            [0.0, lk], [(CONN_W, CONN_H), (CONN_W, CONN_H)],
            {"proximal": 0, "distal": 1}, _samples_for(n_samples, kind),
            sample_seed + 1)

    lp = NOMINAL_LENGTH[ComponentKind.PHALANX_SEGMENT]
    db[ComponentKind.PHALANX_SEGMENT] = _build_asset(
        ComponentKind.PHALANX_SEGMENT,
        [0.0, 0.5 * lp, lp], [(RING_W, RING_H), (0.011, 0.010), (RING_W, RING_H)],
        [0.0, 0.5 * lp, lp], [(CONN_W, CONN_H), (0.014, 0.013), (CONN_W, CONN_H)],
        {"proximal": 0, "distal": 2},
        _samples_for(n_samples, ComponentKind.PHALANX_SEGMENT), sample_seed + 2)

    lt = NOMINAL_LENGTH[ComponentKind.FINGER_TIP]
    db[ComponentKind.FINGER_TIP] = _build_asset(
        ComponentKind.FINGER_TIP,
        [0.0, 0.5 * lt, lt], [(RING_W, RING_H), (0.009, 0.008), (0.004, 0.0035)],
        [0.0, 0.5 * lt, lt], [(CONN_W, CONN_H), (0.012, 0.011), (0.006, 0.005)],
        {"proximal": 0}, _samples_for(n_samples, ComponentKind.FINGER_TIP),
        sample_seed + 3)
    return db


def _load_external_asset(kind, directory, n_samples):
    base = os.path.join(directory, kind.value)
    with open(base + ".json", "r", encoding="utf-8") as fh:
        desc = json.load(fh)
    verts, faces = read_obj(base + ".obj")
    cage_v, cage_f = read_obj(base + "_cage.obj")
    order = desc.get("handle_order")
    if order is not None:
        cage_v = cage_v[np.asarray(order, dtype=int)]
        remap = {int(o): i for i, o in enumerate(order)}
        cage_f = np.vectorize(remap.__getitem__)(cage_f)
    cage = Cage(cage_v, cage_f,
                connection_face_ids={k: list(v) for k, v in desc["connection_faces"].items()})
    samples, areas = sample_surface(verts, faces, desc.get("n_samples", n_samples),
                                    seed=desc.get("sample_seed", 0))
    mesh = ComponentMesh(verts, faces, samples, areas)
    wv = compute_mvc_weights(cage, verts).weights
    ws = compute_mvc_weights(cage, samples).weights
    return ComponentAsset(kind, mesh, cage, float(desc["length"]), wv, ws,
                          np.asarray(desc.get("mid_handles", []), dtype=int))


_DB_CACHE = {}


def component_database(n_samples=64, assets_dir=None):
    """Component assets, procedurally generated or loaded from an asset dir.

    The DIFFCODESIGN_ASSETS environment variable overrides the procedural
    database with OBJ meshes + JSON cage descriptors.
    """
    assets_dir = assets_dir or os.environ.get("DIFFCODESIGN_ASSETS")
    if isinstance(n_samples, dict):
        key = (tuple(sorted((str(k), v) for k, v in n_samples.items())), assets_dir)
    else:
        key = (n_samples, assets_dir)
    if key in _DB_CACHE:
        return _DB_CACHE[key]
    if assets_dir:
        db = {kind: _load_external_asset(kind, assets_dir, n_samples)
              for kind in ComponentKind}
    else:
        db = _procedural_database(n_samples=n_samples)
    _DB_CACHE[key] = db
    return db
