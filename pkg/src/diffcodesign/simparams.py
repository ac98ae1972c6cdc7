"""Conversion of deformed design geometry into simulation parameters.

psi_p collects, per articulated pin: its origin relative to the parent pin
(mount frame for chain roots); per rigid body: frame origin relative to its
pin, mass, COM offset, cuboid inertia diagonal; then all body-frame contact
points and per-point areas.  Everything is an analytic function of the flat
deformed-point vector psi_M (vertices, contact samples, cage-handle copies),
with an exact Jacobian operator.

Bodies are bounded by consecutive pins: each knuckle/joint component starts
a new rigid body that also carries the following free-form components up to
the next pin.  Inertia comes from the body's axis-aligned bounding cuboid at
uniform density (hard min/max per axis: gradients live on the extremal
vertices; interior vertices have exactly zero inertia gradient).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .cage import surface_area_with_gradient, triangle_areas
from .errors import DegenerateBody
from .morphology.components import PIN_AXIS, ComponentKind

DENSITY = 1200.0          # kg/m^3, printed-nylon-like default
MIN_EXTENT = 1e-6         # m


@dataclass
class PinSpec:
    node: int
    finger: int
    parent_pin: int        # index into the pin list, -1 for chain roots
    axis: np.ndarray
    origin: np.ndarray     # world (rest) origin
    rel_origin: np.ndarray # relative to parent pin / mount frame
    psip: int              # first psi_p index of rel_origin


@dataclass
class BodySpec:
    nodes: list
    pin: int
    origin: np.ndarray      # world (rest) frame origin (mesh centroid)
    rel_origin: np.ndarray  # relative to its pin
    mass: float
    com: np.ndarray         # bounding-cuboid center relative to origin
    inertia: np.ndarray     # (3,) diagonal about the cuboid center
    psip: int               # first psi_p index of [rel_origin, mass, com, inertia]
    # contact data
    points: np.ndarray      # (P, 3) body frame
    areas: np.ndarray       # (P,)
    sample_nodes: list      # node id per point
    sample_rows: np.ndarray # psi_M row of each source sample
    psip_points: int
    psip_areas: int


@dataclass
class SimParams:
    pins: list
    bodies: list
    static_nodes: list
    vector: np.ndarray
    markers: list                 # per finger: (body_index, point_index)
    density: float
    _jac_cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self):
        return self.vector.size

    def to_json(self):
        def arr(a):
            return np.asarray(a).tolist()
        return json.dumps({
            "density": self.density,
            "pins": [{"node": p.node, "finger": p.finger, "parent_pin": p.parent_pin,
                      "axis": arr(p.axis), "origin": arr(p.origin),
                      "rel_origin": arr(p.rel_origin)} for p in self.pins],
            "bodies": [{"nodes": b.nodes, "pin": b.pin, "origin": arr(b.origin),
                        "rel_origin": arr(b.rel_origin), "mass": b.mass,
                        "com": arr(b.com), "inertia": arr(b.inertia),
                        "points": arr(b.points), "areas": arr(b.areas)}
                       for b in self.bodies],
            "vector": arr(self.vector),
        }, indent=1)


def _partition_bodies(graph):
    """Pins and body component groups per finger chain."""
    pins = []           # node ids
    body_groups = []    # list of node-id lists
    static_nodes = []
    for f in range(graph.n_fingers):
        chain = graph.finger_chain(f)
        current = None
        for nid in chain:
            kind = graph.nodes[nid].kind
            if kind in (ComponentKind.KNUCKLE, ComponentKind.JOINT):
                pins.append(nid)
                current = [nid]
                body_groups.append(current)
            elif current is None:
                static_nodes.append(nid)
            else:
                current.append(nid)
    return pins, body_groups, static_nodes


def extract_sim_params(graph, pipe, psi_m, density=DENSITY):
    """Simulation parameters from the deformed point vector psi_M."""
    lay = pipe.layout
    db = pipe.db
    psi_m = np.asarray(psi_m, dtype=float)

    pin_nodes, body_groups, static_nodes = _partition_bodies(graph)
    pin_index = {nid: i for i, nid in enumerate(pin_nodes)}

    pins = []
    for nid in pin_nodes:
        node = graph.nodes[nid]
        verts = psi_m[lay.vert_slices[nid]]
        origin = verts.mean(axis=0)
        # parent pin: nearest preceding pin in the same chain
        chain = graph.finger_chain(node.finger)
        pos = chain.index(nid)
        parent_pin = -1
        for prev in reversed(chain[:pos]):
            if prev in pin_index:
                parent_pin = pin_index[prev]
                break
        pins.append(PinSpec(nid, node.finger, parent_pin,
                            PIN_AXIS[node.kind].copy(), origin,
                            np.zeros(3), 0))

    bodies = []
    for gi, group in enumerate(body_groups):
        verts = np.vstack([psi_m[lay.vert_slices[nid]] for nid in group])
        origin = verts.mean(axis=0)
        hi = verts.max(axis=0)
        lo = verts.min(axis=0)
        ext = hi - lo
        if np.any(ext < MIN_EXTENT):
            raise DegenerateBody(
                f"body {gi} bounding-cuboid extent below {MIN_EXTENT}")
        mass = density * float(np.prod(ext))
        center = 0.5 * (hi + lo)
        inertia = mass / 12.0 * np.array([
            ext[1] ** 2 + ext[2] ** 2,
            ext[0] ** 2 + ext[2] ** 2,
            ext[0] ** 2 + ext[1] ** 2,
        ])
        pts = []
        areas = []
        sample_nodes = []
        sample_rows = []
        for nid in group:
            ss = lay.sample_slices[nid]
            samples = psi_m[ss]
            if samples.shape[0] == 0:
                continue
            asset = db[graph.nodes[nid].kind]
            handles = psi_m[lay.handle_slices[nid]]
            area_now = triangle_areas(handles, asset.cage.faces).sum()
            area_rest = triangle_areas(asset.cage.handles, asset.cage.faces).sum()
            ratio = area_now / area_rest
            pts.append(samples - origin[None, :])
            areas.append(asset.mesh.contact_sample_rest_areas * ratio)
            sample_nodes += [nid] * samples.shape[0]
            sample_rows.append(np.arange(ss.start, ss.stop))
        pts = np.vstack(pts) if pts else np.zeros((0, 3))
        areas = np.concatenate(areas) if areas else np.zeros(0)
        rows = np.concatenate(sample_rows) if sample_rows else np.zeros(0, dtype=int)
        bodies.append(BodySpec(list(group), pin_index[group[0]], origin,
                               np.zeros(3), mass, center - origin, inertia,
                               0, pts, areas, sample_nodes, rows, 0, 0))

    # psi_p layout: pins, body blocks, contact points, areas
    off = 0
    for p in pins:
        p.psip = off
        off += 3
    for b in bodies:
        b.psip = off
        off += 10
    for b in bodies:
        b.psip_points = off
        off += 3 * b.points.shape[0]
    for b in bodies:
        b.psip_areas = off
        off += b.areas.shape[0]

    vec = np.zeros(off)
    for p in pins:
        parent_origin = pins[p.parent_pin].origin if p.parent_pin >= 0 else np.zeros(3)
        p.rel_origin = p.origin - parent_origin
        vec[p.psip: p.psip + 3] = p.rel_origin
    for b in bodies:
        b.rel_origin = b.origin - pins[b.pin].origin
        vec[b.psip: b.psip + 3] = b.rel_origin
        vec[b.psip + 3] = b.mass
        vec[b.psip + 4: b.psip + 7] = b.com
        vec[b.psip + 7: b.psip + 10] = b.inertia
        vec[b.psip_points: b.psip_points + 3 * b.points.shape[0]] = b.points.ravel()
        vec[b.psip_areas: b.psip_areas + b.areas.shape[0]] = b.areas

    # marker: the nominally most-distal tip sample of each finger
    markers = []
    for f in range(graph.n_fingers):
        best = None
        for bi, b in enumerate(bodies):
            for pi_, nid in enumerate(b.sample_nodes):
                node = graph.nodes[nid]
                if node.finger != f or node.kind != ComponentKind.FINGER_TIP:
                    continue
                asset = db[node.kind]
                local_idx = pi_ - b.sample_nodes.index(nid)
                x_nom = asset.mesh.contact_samples[local_idx, 0]
                if best is None or x_nom > best[2]:
                    best = (bi, pi_, x_nom)
        if best is not None:
            markers.append((best[0], best[1]))
    sim = SimParams(pins, bodies, static_nodes, vec, markers, density)
    sim._graph = graph
    sim._pipe = pipe
    sim._psi_m = psi_m
    return sim


class SimParamsJacobian:
    """Exact d psi_p / d psi_M at the extraction point (matvec / rmatvec)."""

    def __init__(self, sim):
        self.sim = sim
        graph = sim._graph
        pipe = sim._pipe
        psi_m = sim._psi_m
        lay = pipe.layout
        self.lay = lay
        # cached selectors
        self.pin_rows = []
        for p in sim.pins:
            sl = lay.vert_slices[p.node]
            self.pin_rows.append(np.arange(sl.start, sl.stop))
        self.body_rows = []
        self.body_argmin = []
        self.body_argmax = []
        for b in sim.bodies:
            rows = np.concatenate([np.arange(lay.vert_slices[n].start,
                                             lay.vert_slices[n].stop)
                                   for n in b.nodes])
            verts = psi_m[rows]
            self.body_rows.append(rows)
            self.body_argmax.append(rows[np.argmax(verts, axis=0)])
            self.body_argmin.append(rows[np.argmin(verts, axis=0)])
        # area gradients per node with samples
        self.area_grad = {}
        for b in sim.bodies:
            for nid in set(b.sample_nodes):
                asset = pipe.db[graph.nodes[nid].kind]
                handles = psi_m[lay.handle_slices[nid]]
                _, grad = surface_area_with_gradient(handles, asset.cage.faces)
                rest_area = triangle_areas(asset.cage.handles, asset.cage.faces).sum()
                self.area_grad[nid] = (grad, rest_area)

    # -- helpers ---------------------------------------------------------------

    def _pin_origin_jvp(self, dm, pin_i):
        rows = self.pin_rows[pin_i]
        return dm[rows].mean(axis=0)

    def _body_origin_jvp(self, dm, body_i):
        return dm[self.body_rows[body_i]].mean(axis=0)

    def matvec(self, dm):
        sim = self.sim
        dm = np.asarray(dm, dtype=float).reshape(-1, 3)
        out = np.zeros(sim.dim)
        d_pin = [self._pin_origin_jvp(dm, i) for i in range(len(sim.pins))]
        for i, p in enumerate(sim.pins):
            dpar = d_pin[p.parent_pin] if p.parent_pin >= 0 else 0.0
            out[p.psip: p.psip + 3] = d_pin[i] - dpar
        density = sim.density
        for bi, b in enumerate(sim.bodies):
            d_o = self._body_origin_jvp(dm, bi)
            out[b.psip: b.psip + 3] = d_o - d_pin[b.pin]
            amax = self.body_argmax[bi]
            amin = self.body_argmin[bi]
            d_hi = dm[amax, np.arange(3)]
            d_lo = dm[amin, np.arange(3)]
            hi = sim._psi_m[amax, np.arange(3)]
            lo = sim._psi_m[amin, np.arange(3)]
            ext = hi - lo
            d_ext = d_hi - d_lo
            d_mass = density * (d_ext[0] * ext[1] * ext[2]
                                + ext[0] * d_ext[1] * ext[2]
                                + ext[0] * ext[1] * d_ext[2])
            out[b.psip + 3] = d_mass
            d_center = 0.5 * (d_hi + d_lo)
            out[b.psip + 4: b.psip + 7] = d_center - d_o
            m = b.mass
            for a in range(3):
                i1, i2 = (a + 1) % 3, (a + 2) % 3
                out[b.psip + 7 + a] = (d_mass / 12.0 * (ext[i1] ** 2 + ext[i2] ** 2)
                                       + m / 12.0 * (2 * ext[i1] * d_ext[i1]
                                                     + 2 * ext[i2] * d_ext[i2]))
            if b.points.shape[0]:
                d_pts = dm[b.sample_rows] - d_o[None, :]
                out[b.psip_points: b.psip_points + 3 * b.points.shape[0]] = d_pts.ravel()
                # areas
                offset = 0
                for nid in dict.fromkeys(b.sample_nodes):
                    count = b.sample_nodes.count(nid)
                    grad, rest_area = self.area_grad[nid]
                    hs = self.lay.handle_slices[nid]
                    d_area_total = float(np.sum(grad * dm[hs]))
                    asset = sim._pipe.db[sim._graph.nodes[nid].kind]
                    rest = asset.mesh.contact_sample_rest_areas
                    out[b.psip_areas + offset: b.psip_areas + offset + count] = \
                        rest * (d_area_total / rest_area)
                    offset += count
        return out

    def rmatvec(self, bar):
        sim = self.sim
        bar = np.asarray(bar, dtype=float).ravel()
        out = np.zeros_like(sim._psi_m)
        # accumulate pin-origin cotangents first (used by several blocks)
        pin_bar = [np.zeros(3) for _ in sim.pins]
        for i, p in enumerate(sim.pins):
            g = bar[p.psip: p.psip + 3]
            pin_bar[i] += g
            if p.parent_pin >= 0:
                pin_bar[p.parent_pin] -= g
        density = sim.density
        for bi, b in enumerate(sim.bodies):
            g_rel = bar[b.psip: b.psip + 3]
            g_mass = bar[b.psip + 3]
            g_com = bar[b.psip + 4: b.psip + 7]
            g_inertia = bar[b.psip + 7: b.psip + 10]
            origin_bar = g_rel.copy()
            pin_bar[b.pin] -= g_rel

            amax = self.body_argmax[bi]
            amin = self.body_argmin[bi]
            hi = sim._psi_m[amax, np.arange(3)]
            lo = sim._psi_m[amin, np.arange(3)]
            ext = hi - lo
            m = b.mass
            # inertia and mass cotangents push into ext
            ext_bar = np.zeros(3)
            mass_bar = g_mass
            for a in range(3):
                i1, i2 = (a + 1) % 3, (a + 2) % 3
                mass_bar += g_inertia[a] / 12.0 * (ext[i1] ** 2 + ext[i2] ** 2)
                ext_bar[i1] += g_inertia[a] * m / 12.0 * 2 * ext[i1]
                ext_bar[i2] += g_inertia[a] * m / 12.0 * 2 * ext[i2]
            ext_bar[0] += mass_bar * density * ext[1] * ext[2]
            ext_bar[1] += mass_bar * density * ext[0] * ext[2]
            ext_bar[2] += mass_bar * density * ext[0] * ext[1]
            hi_bar = ext_bar + 0.5 * g_com
            lo_bar = -ext_bar + 0.5 * g_com
            origin_bar -= g_com
            out[amax, np.arange(3)] += hi_bar
            out[amin, np.arange(3)] += lo_bar

            if b.points.shape[0]:
                g_pts = bar[b.psip_points: b.psip_points + 3 * b.points.shape[0]].reshape(-1, 3)
                np.add.at(out, b.sample_rows, g_pts)
                origin_bar -= g_pts.sum(axis=0)
                g_areas = bar[b.psip_areas: b.psip_areas + b.areas.shape[0]]
                offset = 0
                for nid in dict.fromkeys(b.sample_nodes):
                    count = b.sample_nodes.count(nid)
                    grad, rest_area = self.area_grad[nid]
                    asset = sim._pipe.db[sim._graph.nodes[nid].kind]
                    rest = asset.mesh.contact_sample_rest_areas
                    scal = float(g_areas[offset: offset + count] @ rest) / rest_area
                    hs = self.lay.handle_slices[nid]
                    out[hs] += scal * grad
                    offset += count

            rows = self.body_rows[bi]
            out[rows] += origin_bar[None, :] / rows.shape[0]
        for i, p in enumerate(sim.pins):
            rows = self.pin_rows[i]
            out[rows] += pin_bar[i][None, :] / rows.shape[0]
        return out


def sim_params_jacobian(sim):
    return SimParamsJacobian(sim)
